"""Quantitative instruments over decision-boundary rasters.

* reproducibility: expected fraction of plane-grid points on which two models
  assign the same class, estimated over a shared triplet set with both models
  evaluated on identical point sets.
* fragmentation: expected number of maximal connected same-label components in
  a triplet plane raster (4-connected flood fill by default, 8 optional).
* margins: mean perturbation size to the nearest label change along random
  unit directions, found by coarse bracketing plus bisection.
* error breakdown: overall / clean-subset / noisy-subset error rates.

Per-triplet and per-point values are always reduced in fixed index order so
reports are identical regardless of worker parallelism.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import models as M
from .datasets import Dataset
from .errors import UsageError
from .plane import LabelGrid, PlaneGrid, Triplet, build_frame, evaluate_grid, logits_fn, make_grid
from .seeding import derive_seed

DEFAULT_RESOLUTION = (50, 50)
COARSE_STEPS = 32


# ---------------------------------------------------------------------------
# reproducibility (intersection-over-union of label rasters)


@dataclass
class ReproReport:
    model_a: str
    model_b: str
    per_triplet_scores: list[float]
    mean: float
    n_triplets: int
    resolution: tuple[int, int]
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "per_triplet_scores": self.per_triplet_scores,
            "mean": self.mean,
            "n_triplets": self.n_triplets,
            "resolution": list(self.resolution),
            "config": self.config,
        }


def agreement(a: LabelGrid, b: LabelGrid) -> float:
    if a.labels.shape != b.labels.shape:
        raise UsageError("label grids have different sizes")
    return float(np.mean(a.labels == b.labels))


def _map_triplets(fn, triplets, jobs: int):
    if jobs <= 1:
        return [fn(t) for t in triplets]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, triplets))  # order preserved


def reproducibility(
    model_a,
    model_b,
    triplets: Sequence[Triplet],
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    jobs: int = 1,
    config: dict | None = None,
) -> ReproReport:
    """Fraction of grid points with matching argmax labels, per triplet.

    Both models are evaluated on the identical grid per triplet, never on
    independently sampled point sets.
    """
    ida, fa = logits_fn(model_a)
    idb, fb = logits_fn(model_b)
    if isinstance(model_a, M.Model) and isinstance(model_b, M.Model):
        if model_a.spec.flat_dim != model_b.spec.flat_dim:
            raise UsageError("models must share input dimensionality")
        if model_a.spec.num_classes != model_b.spec.num_classes:
            raise UsageError("models must share class count")

    def score(t: Triplet) -> float:
        grid = make_grid(build_frame(t), resolution)
        return agreement(evaluate_grid(model_a, grid), evaluate_grid(model_b, grid))

    scores = _map_triplets(score, triplets, jobs)
    return ReproReport(
        model_a=ida, model_b=idb,
        per_triplet_scores=[float(s) for s in scores],
        mean=float(np.mean(scores)),
        n_triplets=len(scores),
        resolution=resolution,
        config=config or {},
    )


# ---------------------------------------------------------------------------
# fragmentation (connected same-label components)


@dataclass
class FragReport:
    model_id: str
    per_triplet_counts: list[int]
    mean: float
    connectivity: int
    n_triplets: int
    resolution: tuple[int, int]
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "per_triplet_counts": self.per_triplet_counts,
            "mean": self.mean,
            "connectivity": self.connectivity,
            "n_triplets": self.n_triplets,
            "resolution": list(self.resolution),
            "config": self.config,
        }


def count_components(raster: np.ndarray, connectivity: int = 4) -> int:
    """Maximal connected same-label components via iterative flood fill."""
    if connectivity == 4:
        nbrs = ((-1, 0), (1, 0), (0, -1), (0, 1))
    elif connectivity == 8:
        nbrs = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    else:
        raise UsageError(f"connectivity must be 4 or 8, got {connectivity}")
    h, w = raster.shape
    seen = np.zeros((h, w), dtype=bool)
    count = 0
    for sy in range(h):
        for sx in range(w):
            if seen[sy, sx]:
                continue
            count += 1
            label = raster[sy, sx]
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            while queue:
                y, x = queue.popleft()
                for dy, dx in nbrs:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and raster[ny, nx] == label:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
    return count


def fragmentation(
    model,
    triplets: Sequence[Triplet],
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    connectivity: int = 4,
    jobs: int = 1,
    config: dict | None = None,
) -> FragReport:
    mid, _ = logits_fn(model)

    def count(t: Triplet) -> int:
        grid = make_grid(build_frame(t), resolution)
        return count_components(evaluate_grid(model, grid).raster(), connectivity)

    counts = _map_triplets(count, triplets, jobs)
    return FragReport(
        model_id=mid,
        per_triplet_counts=[int(c) for c in counts],
        mean=float(np.mean(counts)),
        connectivity=connectivity,
        n_triplets=len(counts),
        resolution=resolution,
        config=config or {},
    )


# ---------------------------------------------------------------------------
# margins (bracketing + bisection along random directions)


@dataclass
class MarginReport:
    model_id: str
    per_point_mean_margins: list[float]
    median: float
    n_points: int
    n_directions: int
    max_radius: float
    tolerance: float
    fraction_censored: float
    seed: int
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "per_point_mean_margins": self.per_point_mean_margins,
            "median": self.median,
            "n_points": self.n_points,
            "n_directions": self.n_directions,
            "max_radius": self.max_radius,
            "tolerance": self.tolerance,
            "fraction_censored": self.fraction_censored,
            "seed": self.seed,
            "config": self.config,
        }


def random_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def margins(
    model,
    points: np.ndarray,
    n_directions: int = 10,
    max_radius: float | None = None,
    tolerance: float | None = None,
    seed: int = 0,
    config: dict | None = None,
) -> MarginReport:
    """Per point: mean over directions of the distance to the first label flip.

    A coarse scan at max_radius/32 steps brackets the flip; bisection then
    shrinks the bracket until its width is <= tolerance and the flipped end is
    returned, so the result is within tolerance of the true crossing whenever
    the bracket was valid. Directions with no flip inside max_radius count as
    censored and contribute max_radius to the mean.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise UsageError(f"points must be a (P, n) array, got shape {pts.shape}")
    n_pts, dim = pts.shape
    if max_radius is None:
        max_radius = float(np.sqrt(dim))
    if max_radius <= 0:
        raise UsageError(f"max_radius must be > 0, got {max_radius}")
    if tolerance is None:
        tolerance = 1e-4 * max_radius
    mid, fn = logits_fn(model)

    def labels_of(X: np.ndarray) -> np.ndarray:
        return np.asarray(fn(X)).argmax(axis=1)

    rng = np.random.default_rng(derive_seed(seed, "margins"))
    dirs = random_directions(rng, n_pts * n_directions, dim).reshape(n_pts, n_directions, dim)

    ray_origin = np.repeat(pts, n_directions, axis=0)            # (P*D, n)
    ray_dir = dirs.reshape(n_pts * n_directions, dim)
    base_label = np.repeat(labels_of(pts), n_directions)

    n_rays = n_pts * n_directions
    lo = np.zeros(n_rays)
    hi = np.full(n_rays, np.nan)
    open_rays = np.arange(n_rays)
    step = max_radius / COARSE_STEPS
    for j in range(1, COARSE_STEPS + 1):
        if len(open_rays) == 0:
            break
        probe = ray_origin[open_rays] + (j * step) * ray_dir[open_rays]
        flipped = labels_of(probe) != base_label[open_rays]
        hit = open_rays[flipped]
        lo[hit] = (j - 1) * step
        hi[hit] = j * step
        open_rays = open_rays[~flipped]
    censored = np.isnan(hi)
    hi[censored] = max_radius

    active = np.flatnonzero(~censored & (hi - lo > tolerance))
    while len(active):
        mid_s = 0.5 * (lo[active] + hi[active])
        probe = ray_origin[active] + mid_s[:, None] * ray_dir[active]
        flipped = labels_of(probe) != base_label[active]
        hi[active[flipped]] = mid_s[flipped]
        lo[active[~flipped]] = mid_s[~flipped]
        active = active[(hi[active] - lo[active]) > tolerance]

    margin = np.where(censored, max_radius, hi).reshape(n_pts, n_directions)
    per_point = margin.mean(axis=1)
    return MarginReport(
        model_id=mid,
        per_point_mean_margins=[float(v) for v in per_point],
        median=float(np.median(per_point)),
        n_points=n_pts,
        n_directions=n_directions,
        max_radius=float(max_radius),
        tolerance=float(tolerance),
        fraction_censored=float(np.mean(censored)),
        seed=seed,
        config=config or {},
    )


# ---------------------------------------------------------------------------
# train-error breakdown


def error_breakdown(model, ds: Dataset) -> dict:
    """Error rates overall (vs assigned), on the clean subset (vs true), and
    on the noise-flipped subset (vs assigned). Empty subsets report None."""
    _, fn = logits_fn(model)
    preds = np.asarray(fn(ds.inputs)).argmax(axis=1)
    clean = ~ds.noise_mask
    noisy = ds.noise_mask

    def rate(mask: np.ndarray, ref: np.ndarray) -> float | None:
        if not mask.any():
            return None
        return float(np.mean(preds[mask] != ref[mask]))

    return {
        "overall": float(np.mean(preds != ds.assigned_labels)),
        "clean_subset": rate(clean, ds.true_labels),
        "noisy_subset": rate(noisy, ds.assigned_labels),
    }
