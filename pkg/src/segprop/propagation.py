"""Vote accumulation and iterative label propagation between keyframes.

A frame between two labeled keyframes collects up to six votes per pixel:
four flow-chain channels (pull toward each keyframe, push from each keyframe)
and two per-region homography channels. The most voted class wins; the result
is then refined by synchronous neighborhood-consensus iterations in which
every frame re-votes from its 2f+1 temporal neighbors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import NUM_CLASSES, UNLABELED, LabelMap, VoteGrid
from .flow import (
    DEFAULT_EPS_FB,
    CorrespondenceMap,
    FlowSource,
    chain_correspondence,
    nearest_pixel,
)
from .geometry import (
    DEFAULT_CONFIDENCE,
    DEFAULT_INLIER_PX,
    DEFAULT_MAX_ITERS,
    DEFAULT_MIN_REGION_SIZE,
    FitFailedError,
    connected_components,
    fit_homography_ransac,
    fractional_homography,
    warp_region,
)

log = logging.getLogger(__name__)

TIE_BREAK_POLICIES = ("near_pull", "lowest")


@dataclass
class PropagationConfig:
    """Knobs for one propagation run; echoed into every report."""

    radius: int = 2              # f: temporal neighborhood radius for iterations
    iterations: int = 3          # consensus passes after the initial voting (0 = none)
    tie_break: str = "near_pull"
    flow_weight: float = 1.0
    homography_weight: float = 1.0
    external_weight: float = 1.0
    eps_fb: float | None = DEFAULT_EPS_FB
    min_region_size: int = DEFAULT_MIN_REGION_SIZE
    ransac_inlier_px: float = DEFAULT_INLIER_PX
    ransac_max_iters: int = DEFAULT_MAX_ITERS
    ransac_confidence: float = DEFAULT_CONFIDENCE
    max_region_points: int = 2000
    use_homography: bool = True          # homography channel in the keyframe-pair pass
    iteration_homography: bool = False   # homography channel inside consensus iterations
    sequential: bool = False             # update frames in index order instead of synchronously
    seed: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.tie_break not in TIE_BREAK_POLICIES:
            raise ValueError(f"tie_break must be one of {TIE_BREAK_POLICIES}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        return d


class VoteProvider:
    """External vote channel merged before majority resolution.

    Implementations return an (H, W, C) non-negative contribution, or None to
    abstain. Failures are logged and skipped; they never abort propagation.
    """

    name = "provider"

    def cast(self, frame: int, key_i: int, key_j: int,
             label_i: LabelMap, label_j: LabelMap) -> np.ndarray | None:
        raise NotImplementedError


class NullVoteProvider(VoteProvider):
    name = "null"

    def cast(self, frame, key_i, key_j, label_i, label_j):
        return None


class ExternalVoteProvider(VoteProvider):
    """Merges precomputed vote grids stored as <dir>/votes_%06d.npz.

    Each file holds one array "votes" of shape (H, W, C). Frames without a
    file abstain. This is the integration point for any external propagation
    method that can emit per-pixel class votes.
    """

    name = "external"

    def __init__(self, directory):
        from pathlib import Path

        self.directory = Path(directory)

    def cast(self, frame, key_i, key_j, label_i, label_j):
        path = self.directory / f"votes_{frame:06d}.npz"
        if not path.exists():
            return None
        with np.load(path) as data:
            return np.asarray(data["votes"], dtype=np.float32)


def _pull_classes(corr: CorrespondenceMap, keyframe: LabelMap) -> np.ndarray:
    """Class observed by each pixel through a pull chain; UNLABELED if invalid."""
    h, w = corr.valid.shape
    out = np.full((h, w), UNLABELED, dtype=np.uint8)
    vy, vx = np.nonzero(corr.valid)
    if len(vy):
        land = nearest_pixel(corr.coords[vy, vx])
        out[vy, vx] = keyframe.data[land[:, 1], land[:, 0]]
    return out


def cast_flow_votes(label_i: LabelMap, label_j: LabelMap,
                    corr_k_to_i: CorrespondenceMap, corr_k_to_j: CorrespondenceMap,
                    corr_i_to_k: CorrespondenceMap, corr_j_to_k: CorrespondenceMap,
                    num_classes: int = NUM_CLASSES,
                    grid: VoteGrid | None = None, weight: float = 1.0) -> VoteGrid:
    """Accumulate the four flow-chain vote channels for one frame.

    Pull channels: each valid pixel reads the keyframe class at its chained
    landing position. Push channels: each valid keyframe pixel splats its
    class at its landing position in the current frame.
    """
    h, w = corr_k_to_i.valid.shape
    for lm in (label_i, label_j):
        if lm.data.shape != (h, w):
            raise ValueError("label/correspondence dimensions disagree")
    if grid is None:
        grid = VoteGrid(h, w, num_classes)

    for corr, keyframe, channel in (
        (corr_k_to_i, label_i, "flow_pull_i"),
        (corr_k_to_j, label_j, "flow_pull_j"),
    ):
        vy, vx = np.nonzero(corr.valid)
        if len(vy):
            land = nearest_pixel(corr.coords[vy, vx])
            classes = keyframe.data[land[:, 1], land[:, 0]]
            grid.add_at(vy, vx, classes, weight=weight, channel=channel)

    for corr, keyframe, channel in (
        (corr_i_to_k, label_i, "flow_push_i"),
        (corr_j_to_k, label_j, "flow_push_j"),
    ):
        vy, vx = np.nonzero(corr.valid)
        if len(vy):
            land = nearest_pixel(corr.coords[vy, vx])
            classes = keyframe.data[vy, vx]
            grid.add_at(land[:, 1], land[:, 0], classes, weight=weight, channel=channel)
    return grid


def region_homographies(label_map: LabelMap, corr_to_other: CorrespondenceMap,
                        config: PropagationConfig, seed_seq: np.random.SeedSequence):
    """Fit one robust homography per connected class region from chained matches.

    Returns (fits, failures): fits is a list of (region, H); regions whose
    fit degenerates are counted and silently fall back to flow-only voting.
    """
    regions, _residue = connected_components(label_map, config.min_region_size)
    fits = []
    failures = 0
    children = seed_seq.spawn(len(regions))
    for region, child in zip(regions, children):
        xs = region.pixels[:, 0]
        ys = region.pixels[:, 1]
        ok = corr_to_other.valid[ys, xs]
        if ok.sum() < 4:
            failures += 1
            continue
        pts_a = region.pixels[ok].astype(np.float64)
        pts_b = corr_to_other.coords[ys[ok], xs[ok]].astype(np.float64)
        rng = np.random.default_rng(child)
        if len(pts_a) > config.max_region_points:
            keep = rng.choice(len(pts_a), size=config.max_region_points, replace=False)
            pts_a, pts_b = pts_a[keep], pts_b[keep]
        try:
            H, _inliers = fit_homography_ransac(
                pts_a, pts_b,
                inlier_px=config.ransac_inlier_px,
                max_iters=config.ransac_max_iters,
                confidence=config.ransac_confidence,
                rng=rng,
            )
        except FitFailedError:
            failures += 1
            continue
        fits.append((region, H))
    return fits, failures


def cast_homography_votes(fits_i, fits_j, k: int, key_i: int, key_j: int,
                          grid: VoteGrid, weight: float = 1.0) -> VoteGrid:
    """Project each fitted region partway toward the other keyframe and vote.

    A region of keyframe i moves along the fraction (k - i) / (j - i) of its
    full transform; symmetrically for keyframe j. One vote per landed pixel.
    """
    h, w, _ = grid.shape
    span = key_j - key_i
    for fits, t, channel in (
        (fits_i, (k - key_i) / span, "homography_i"),
        (fits_j, (key_j - k) / span, "homography_j"),
    ):
        for region, H in fits:
            Ht = fractional_homography(H, t, region.bbox)
            if Ht is None:
                continue
            landed = warp_region(region, Ht, w, h)
            if len(landed):
                grid.add_at(landed[:, 1], landed[:, 0],
                            np.full(len(landed), region.class_id, dtype=np.intp),
                            weight=weight, channel=channel)
    return grid


def resolve_majority(grid: VoteGrid, tie_break_classes: np.ndarray | None,
                     fallback_labels: np.ndarray | None, frame_index: int) -> LabelMap:
    """Pick the strictly most voted class per pixel.

    Ties go to tie_break_classes where that class attains the maximum, then to
    the lowest class id. Pixels with no votes at all copy fallback_labels (or
    stay UNLABELED when no fallback is given).
    """
    counts = grid.counts
    m = counts.max(axis=2)
    choice = counts.argmax(axis=2).astype(np.uint8)  # lowest class id on ties
    if tie_break_classes is not None:
        tbc = tie_break_classes
        ok = tbc != UNLABELED
        safe = np.where(ok, tbc, 0).astype(np.intp)
        attained = np.take_along_axis(counts, safe[..., None], axis=2)[..., 0] >= m
        choice = np.where(ok & attained & (m > 0), tbc, choice).astype(np.uint8)
    if fallback_labels is not None:
        choice = np.where(m > 0, choice, fallback_labels).astype(np.uint8)
    else:
        choice = np.where(m > 0, choice, UNLABELED).astype(np.uint8)
    return LabelMap(frame_index=frame_index, data=choice)


def _provider_votes(providers, grid: VoteGrid, weight: float,
                    k: int, key_i: int, key_j: int,
                    label_i: LabelMap, label_j: LabelMap) -> None:
    for provider in providers:
        try:
            contribution = provider.cast(k, key_i, key_j, label_i, label_j)
        except Exception:
            log.warning("vote provider %r failed on frame %d; channel skipped",
                        getattr(provider, "name", provider), k, exc_info=True)
            continue
        if contribution is None:
            continue
        grid.add(contribution, weight=weight,
                 channel=f"external_{getattr(provider, 'name', 'provider')}")


def propagate_pair(label_i: LabelMap, label_j: LabelMap, flows: FlowSource,
                   config: PropagationConfig | None = None,
                   num_classes: int = NUM_CLASSES,
                   providers=(), report: dict | None = None) -> list[LabelMap]:
    """Densely label every frame strictly between two keyframes (one voting pass)."""
    config = config or PropagationConfig()
    key_i, key_j = label_i.frame_index, label_j.frame_index
    if key_i >= key_j:
        raise ValueError(f"keyframes out of order: {key_i} >= {key_j}")
    if label_i.data.shape != label_j.data.shape:
        raise ValueError("keyframe shapes differ")
    if not (label_i.is_complete and label_j.is_complete):
        raise ValueError("keyframes must be fully labeled")

    fits_i, fits_j = [], []
    failures = 0
    if config.use_homography:
        seed_seq = np.random.SeedSequence(config.seed, spawn_key=(key_i, key_j))
        corr_i_to_j = chain_correspondence(flows, key_i, key_j, eps_fb=config.eps_fb)
        corr_j_to_i = chain_correspondence(flows, key_j, key_i, eps_fb=config.eps_fb)
        kids = seed_seq.spawn(2)
        fits_i, fail_i = region_homographies(label_i, corr_i_to_j, config, kids[0])
        fits_j, fail_j = region_homographies(label_j, corr_j_to_i, config, kids[1])
        failures = fail_i + fail_j

    out = []
    frame_reports = []
    for k in range(key_i + 1, key_j):
        corr_k_i = chain_correspondence(flows, k, key_i, eps_fb=config.eps_fb)
        corr_k_j = chain_correspondence(flows, k, key_j, eps_fb=config.eps_fb)
        corr_i_k = chain_correspondence(flows, key_i, k, eps_fb=config.eps_fb)
        corr_j_k = chain_correspondence(flows, key_j, k, eps_fb=config.eps_fb)

        grid = VoteGrid(label_i.height, label_i.width, num_classes)
        cast_flow_votes(label_i, label_j, corr_k_i, corr_k_j, corr_i_k, corr_j_k,
                        num_classes, grid=grid, weight=config.flow_weight)
        if config.use_homography:
            cast_homography_votes(fits_i, fits_j, k, key_i, key_j, grid,
                                  weight=config.homography_weight)
        _provider_votes(providers, grid, config.external_weight,
                        k, key_i, key_j, label_i, label_j)

        nearer_is_i = (k - key_i) <= (key_j - k)
        near_label = label_i if nearer_is_i else label_j
        near_corr = corr_k_i if nearer_is_i else corr_k_j
        tie_classes = None
        if config.tie_break == "near_pull":
            tie_classes = _pull_classes(near_corr, near_label)
        labeled = resolve_majority(grid, tie_classes, near_label.data, frame_index=k)
        out.append(labeled)
        frame_reports.append({
            "frame": k,
            "channels": dict(grid.channel_totals),
            "fallback_pixels": int((grid.counts.max(axis=2) == 0).sum()),
        })

    if report is not None:
        report.setdefault("pairs", []).append({
            "keyframes": [key_i, key_j],
            "region_fit_failures": failures,
            "regions_fitted": len(fits_i) + len(fits_j),
            "frames": frame_reports,
        })
    return out


def _neighbor_sides(k: int, d: int, frame_count: int):
    for s in (k - d, k + d):
        if 0 <= s < frame_count:
            yield s


def segprop_iterate(initial_labels: list[LabelMap], flows: FlowSource,
                    keyframe_indices, config: PropagationConfig | None = None,
                    num_classes: int = NUM_CLASSES,
                    report: dict | None = None,
                    progress=None) -> list[LabelMap]:
    """Neighborhood-consensus refinement over fully labeled frames.

    Each pass re-votes every non-keyframe frame from its neighbors at temporal
    distance 1..radius (pull and push flow channels per neighbor; homography
    channels per complete opposite pair when enabled). Updates are synchronous
    unless config.sequential, keyframes never change, and a pixel with no
    votes keeps its previous label. iterations = 0 returns the input.
    External providers vote only in the keyframe-pair pass, not here.
    """
    config = config or PropagationConfig()
    labels = list(initial_labels)
    frame_count = len(labels)
    keyframes = set(int(k) for k in keyframe_indices)
    for lm in labels:
        if not lm.is_complete:
            raise ValueError(f"frame {lm.frame_index} not fully labeled")

    iter_reports = []
    for it in range(config.iterations):
        current = labels if config.sequential else list(labels)
        updated = list(labels)
        changed_pixels = 0
        for k in range(frame_count):
            if k in keyframes:
                continue
            source = current if config.sequential else labels
            grid = VoteGrid(labels[k].height, labels[k].width, num_classes)
            for d in range(1, config.radius + 1):
                for s in _neighbor_sides(k, d, frame_count):
                    corr_pull = chain_correspondence(flows, k, s, eps_fb=config.eps_fb)
                    corr_push = chain_correspondence(flows, s, k, eps_fb=config.eps_fb)
                    vy, vx = np.nonzero(corr_pull.valid)
                    if len(vy):
                        land = nearest_pixel(corr_pull.coords[vy, vx])
                        grid.add_at(vy, vx, source[s].data[land[:, 1], land[:, 0]],
                                    weight=config.flow_weight, channel=f"pull_d{d}")
                    vy, vx = np.nonzero(corr_push.valid)
                    if len(vy):
                        land = nearest_pixel(corr_push.coords[vy, vx])
                        grid.add_at(land[:, 1], land[:, 0], source[s].data[vy, vx],
                                    weight=config.flow_weight, channel=f"push_d{d}")
                if config.iteration_homography:
                    a, b = k - d, k + d
                    if 0 <= a and b < frame_count:
                        seed_seq = np.random.SeedSequence(
                            config.seed, spawn_key=(it, k, d))
                        corr_a_b = chain_correspondence(flows, a, b, eps_fb=config.eps_fb)
                        corr_b_a = chain_correspondence(flows, b, a, eps_fb=config.eps_fb)
                        kids = seed_seq.spawn(2)
                        fits_a, _ = region_homographies(source[a], corr_a_b, config, kids[0])
                        fits_b, _ = region_homographies(source[b], corr_b_a, config, kids[1])
                        cast_homography_votes(fits_a, fits_b, k, a, b, grid,
                                              weight=config.homography_weight)

            tie_classes = None
            if config.tie_break == "near_pull":
                # Within iterations the stabilizing tie preference is the
                # frame's own previous label.
                tie_classes = source[k].data
            resolved = resolve_majority(grid, tie_classes, source[k].data, frame_index=k)
            changed_pixels += int((resolved.data != labels[k].data).sum())
            if config.sequential:
                labels[k] = resolved
            else:
                updated[k] = resolved
        if not config.sequential:
            labels = updated
        iter_reports.append({"iteration": it, "changed_pixels": changed_pixels})
        if progress is not None:
            progress((it + 1) / max(config.iterations, 1))

    if report is not None:
        report["iterations"] = iter_reports
    return labels


def _one_sided_votes(frames_range, key_label: LabelMap, flows: FlowSource,
                     config: PropagationConfig, num_classes: int) -> list[LabelMap]:
    """Label frames outside the keyframe span from the single nearest keyframe."""
    out = []
    for k in frames_range:
        corr_pull = chain_correspondence(flows, k, key_label.frame_index, eps_fb=config.eps_fb)
        corr_push = chain_correspondence(flows, key_label.frame_index, k, eps_fb=config.eps_fb)
        grid = VoteGrid(key_label.height, key_label.width, num_classes)
        vy, vx = np.nonzero(corr_pull.valid)
        if len(vy):
            land = nearest_pixel(corr_pull.coords[vy, vx])
            grid.add_at(vy, vx, key_label.data[land[:, 1], land[:, 0]],
                        weight=config.flow_weight, channel="pull")
        vy, vx = np.nonzero(corr_push.valid)
        if len(vy):
            land = nearest_pixel(corr_push.coords[vy, vx])
            grid.add_at(land[:, 1], land[:, 0], key_label.data[vy, vx],
                        weight=config.flow_weight, channel="push")
        tie = _pull_classes(corr_pull, key_label) if config.tie_break == "near_pull" else None
        out.append(resolve_majority(grid, tie, key_label.data, frame_index=k))
    return out


class Propagator:
    """Orchestrates pair propagation plus consensus iterations for a sequence."""

    def __init__(self, config: PropagationConfig | None = None,
                 num_classes: int = NUM_CLASSES, providers=()):
        self.config = config or PropagationConfig()
        self.num_classes = num_classes
        self.providers = list(providers)
        self.report: dict = {"config": self.config.to_dict()}

    def register_vote_provider(self, provider: VoteProvider) -> "Propagator":
        self.providers.append(provider)
        return self

    def propagate_pair(self, label_i: LabelMap, label_j: LabelMap,
                       flows: FlowSource) -> list[LabelMap]:
        return propagate_pair(label_i, label_j, flows, self.config,
                              self.num_classes, self.providers, report=self.report)

    def run(self, keyframe_labels: list[LabelMap], flows: FlowSource,
            frame_count: int, progress=None) -> list[LabelMap]:
        """Full pipeline: per-interval voting pass, then consensus iterations.

        Returns a dense list of LabelMaps for frames 0..frame_count-1 with the
        keyframe labels pinned verbatim.
        """
        keys = sorted(keyframe_labels, key=lambda lm: lm.frame_index)
        if len(keys) < 2:
            raise ValueError("at least 2 keyframes required")
        indices = [lm.frame_index for lm in keys]
        if indices[-1] >= frame_count:
            raise ValueError("keyframe index beyond frame count")

        labels: dict[int, LabelMap] = {lm.frame_index: lm for lm in keys}
        steps = len(keys) - 1 + (1 if indices[0] > 0 else 0) + (
            1 if indices[-1] < frame_count - 1 else 0)
        done = 0
        for a, b in zip(keys, keys[1:]):
            for lm in self.propagate_pair(a, b, flows):
                labels[lm.frame_index] = lm
            done += 1
            if progress is not None:
                progress(0.7 * done / max(steps, 1))
        if indices[0] > 0:
            for lm in _one_sided_votes(range(0, indices[0]), keys[0], flows,
                                       self.config, self.num_classes):
                labels[lm.frame_index] = lm
            done += 1
        if indices[-1] < frame_count - 1:
            for lm in _one_sided_votes(range(indices[-1] + 1, frame_count), keys[-1],
                                       flows, self.config, self.num_classes):
                labels[lm.frame_index] = lm
            done += 1
        if progress is not None:
            progress(0.7)

        ordered = [labels[k] for k in range(frame_count)]
        ordered = segprop_iterate(
            ordered, flows, indices, self.config, self.num_classes,
            report=self.report,
            progress=(lambda f: progress(0.7 + 0.3 * f)) if progress is not None else None,
        )
        return ordered
