"""Triplet planes: the 2-D affine slice through three inputs.

Given a triplet (x1, x2, x3), set v1 = x2 - x1 and v2 = x3 - x1. The slice is
parameterized as

    point(alpha, beta) = x1 + alpha * scale_u * u + beta * w

with u = v1/||v1||, w = v2 - (v2.u)u, and scale_u = max(||v1||, |v2.u|).
Under this normalization x2 sits at (||v1||/scale_u, 0) and x3 at
((v2.u)/scale_u, 1), so all three anchors land inside the unit box of
(alpha, beta) coordinates for typical data triplets. Grids span the closed
ranges [-0.1, 1.1] in both coordinates by default, slightly overshooting the
anchors on purpose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from .datasets import Dataset, make_offmanifold
from .errors import DegeneracyError, SamplingError, UsageError
from .seeding import derive_seed

TRIPLET_MODES = ("distinct_class", "same_class", "with_mislabeled", "off_manifold")
DEFAULT_RANGE = (-0.1, 1.1)
DEFAULT_RESOLUTION = (50, 50)
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class Triplet:
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    labels: tuple[int, int, int]          # assigned classes
    source: str
    indices: tuple[int, int, int] | None  # positions in the source dataset

    def stack(self) -> np.ndarray:
        return np.stack([self.x1, self.x2, self.x3])


@dataclass
class PlaneFrame:
    base: np.ndarray          # x1
    u: np.ndarray             # unit vector along v1
    w: np.ndarray             # v2 minus its projection on u, NOT normalized
    scale_u: float            # max(||v1||, |v2.u|)
    norm_v1: float
    v2_dot_u: float
    alpha_range: tuple[float, float] = DEFAULT_RANGE
    beta_range: tuple[float, float] = DEFAULT_RANGE
    source: str | None = None
    indices: tuple[int, int, int] | None = None

    def point(self, alpha: float, beta: float) -> np.ndarray:
        return self.base + alpha * self.scale_u * self.u + beta * self.w

    def anchor_coords(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """(alpha, beta) of x2 and x3; x1 sits at (0, 0)."""
        return (self.norm_v1 / self.scale_u, 0.0), (self.v2_dot_u / self.scale_u, 1.0)


def build_frame(t: Triplet) -> PlaneFrame:
    x1 = np.asarray(t.x1, dtype=np.float64)
    x2 = np.asarray(t.x2, dtype=np.float64)
    x3 = np.asarray(t.x3, dtype=np.float64)
    if not (x1.shape == x2.shape == x3.shape):
        raise UsageError("triplet samples must share dimensionality")
    v1 = x2 - x1
    v2 = x3 - x1
    norm_v1 = float(np.linalg.norm(v1))
    if norm_v1 < DEGENERACY_TOL:
        raise DegeneracyError("x2 coincides with x1")
    u = v1 / norm_v1
    d = float(v2 @ u)
    w = v2 - d * u
    if float(np.linalg.norm(w)) < DEGENERACY_TOL:
        raise DegeneracyError("x3 is colinear with x1, x2")
    return PlaneFrame(base=x1, u=u, w=w, scale_u=max(norm_v1, abs(d)),
                      norm_v1=norm_v1, v2_dot_u=d, source=t.source, indices=t.indices)


@dataclass
class PlaneGrid:
    frame: PlaneFrame
    resolution: tuple[int, int]   # (n_alpha, n_beta)
    alphas: np.ndarray
    betas: np.ndarray
    points: np.ndarray            # (n_alpha * n_beta, n), beta outer / alpha inner


def make_grid(frame: PlaneFrame, resolution: tuple[int, int] = DEFAULT_RESOLUTION) -> PlaneGrid:
    """Evenly spaced closed-range grid; row-major with beta as the outer axis."""
    na, nb = resolution
    if na < 2 or nb < 2:
        raise UsageError(f"grid resolution must be at least (2, 2), got {resolution}")
    alphas = np.linspace(frame.alpha_range[0], frame.alpha_range[1], na)
    betas = np.linspace(frame.beta_range[0], frame.beta_range[1], nb)
    a = np.tile(alphas, nb)
    b = np.repeat(betas, na)
    points = (frame.base[None, :]
              + a[:, None] * (frame.scale_u * frame.u)[None, :]
              + b[:, None] * frame.w[None, :])
    return PlaneGrid(frame=frame, resolution=(na, nb), alphas=alphas, betas=betas, points=points)


@dataclass
class LabelGrid:
    """Argmax class and max-softmax confidence at every grid point."""

    labels: np.ndarray            # (n_alpha * n_beta,) int64
    confidence: np.ndarray        # (n_alpha * n_beta,) float64 in [1/C, 1]
    resolution: tuple[int, int]
    alpha_range: tuple[float, float]
    beta_range: tuple[float, float]
    model_id: str
    triplet_indices: tuple[int, int, int] | None = None

    def raster(self) -> np.ndarray:
        """(n_beta, n_alpha) label image, beta rows / alpha columns."""
        na, nb = self.resolution
        return self.labels.reshape(nb, na)

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "triplet_indices": list(self.triplet_indices) if self.triplet_indices else None,
            "resolution": list(self.resolution),
            "alpha_range": list(self.alpha_range),
            "beta_range": list(self.beta_range),
            "labels": [int(v) for v in self.labels],
            "confidence": [float(v) for v in self.confidence],
        }


def save_labelgrid(lg: LabelGrid, path: str | Path) -> None:
    Path(path).write_text(json.dumps(lg.to_json_dict(), sort_keys=True))


def load_labelgrid(path: str | Path) -> LabelGrid:
    d = json.loads(Path(path).read_text())
    return LabelGrid(
        labels=np.asarray(d["labels"], dtype=np.int64),
        confidence=np.asarray(d["confidence"], dtype=np.float64),
        resolution=tuple(d["resolution"]),
        alpha_range=tuple(d["alpha_range"]),
        beta_range=tuple(d["beta_range"]),
        model_id=d["model_id"],
        triplet_indices=tuple(d["triplet_indices"]) if d["triplet_indices"] else None,
    )


def logits_fn(model) -> tuple[str, callable]:
    """Normalize a Model or a plain `batch -> logits` callable for evaluation."""
    if isinstance(model, M.Model):
        return M.model_id(model), lambda X: M.batched_logits(model, X)
    if callable(model):
        return getattr(model, "model_id", "callable"), model
    raise UsageError(f"cannot evaluate object of type {type(model)!r}")


def evaluate_grid(model, grid: PlaneGrid, batch_size: int = 256, clip: bool = False) -> LabelGrid:
    """Label + confidence at every grid point.

    `batch_size` is a memory hint only: Model evaluation always proceeds in
    fixed-size chunks, so the output is bit-identical for any batch_size.
    Points are fed raw unless `clip` snaps them into [0, 1]^n.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    mid, fn = logits_fn(model)
    pts = np.clip(grid.points, 0.0, 1.0) if clip else grid.points
    z = np.asarray(fn(pts), dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != pts.shape[0]:
        raise UsageError(f"model returned logits of shape {z.shape} for {pts.shape[0]} points")
    probs = M.softmax(z)
    return LabelGrid(
        labels=z.argmax(axis=1).astype(np.int64),
        confidence=probs.max(axis=1),
        resolution=grid.resolution,
        alpha_range=grid.frame.alpha_range,
        beta_range=grid.frame.beta_range,
        model_id=mid,
        triplet_indices=grid.frame.indices,
    )


# ---------------------------------------------------------------------------
# triplet sampling


def _draw_distinct(rng: np.random.Generator, pool: np.ndarray, k: int) -> np.ndarray:
    if len(pool) < k:
        raise SamplingError(f"need {k} samples, pool has {len(pool)}")
    return pool[rng.choice(len(pool), size=k, replace=False)]


def _triplet_from_indices(ds: Dataset, idx, source: str) -> Triplet:
    i, j, k = (int(v) for v in idx)
    return Triplet(
        x1=ds.inputs[i], x2=ds.inputs[j], x3=ds.inputs[k],
        labels=(int(ds.assigned_labels[i]), int(ds.assigned_labels[j]), int(ds.assigned_labels[k])),
        source=source, indices=(i, j, k),
    )


def sample_triplets(ds: Dataset, mode: str, count: int, seed: int) -> list[Triplet]:
    """Draw `count` i.i.d. triplets without within-triplet duplicates.

    distinct_class / same_class draw from correctly labeled samples only;
    with_mislabeled pairs one noise-flipped sample (placed last) with two
    correctly labeled samples of the same true class; off_manifold pixel-
    shuffles a random base triplet (or draws uniform probes for flat data).
    Degenerate triplets (coincident/colinear anchors) are redrawn.
    """
    if mode not in TRIPLET_MODES:
        raise UsageError(f"unknown triplet mode {mode!r}; expected one of {TRIPLET_MODES}")
    rng = np.random.default_rng(derive_seed(seed, "triplets", mode))
    clean_idx = np.flatnonzero(~ds.noise_mask)
    noisy_idx = np.flatnonzero(ds.noise_mask)
    out: list[Triplet] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 20 * count + 100:
            raise SamplingError(f"could not draw {count} non-degenerate {mode} triplets")
        try:
            if mode == "distinct_class":
                classes = np.unique(ds.assigned_labels[clean_idx])
                if len(classes) < 3:
                    raise SamplingError("distinct_class needs >= 3 classes with clean samples")
                chosen = rng.choice(classes, size=3, replace=False)
                idx = [
                    int(_draw_distinct(rng, clean_idx[ds.assigned_labels[clean_idx] == c], 1)[0])
                    for c in chosen
                ]
                t = _triplet_from_indices(ds, idx, mode)
            elif mode == "same_class":
                classes, counts = np.unique(ds.assigned_labels[clean_idx], return_counts=True)
                usable = classes[counts >= 3]
                if len(usable) == 0:
                    raise SamplingError("same_class needs a class with >= 3 clean samples")
                c = int(rng.choice(usable))
                idx = _draw_distinct(rng, clean_idx[ds.assigned_labels[clean_idx] == c], 3)
                t = _triplet_from_indices(ds, idx, mode)
            elif mode == "with_mislabeled":
                if len(noisy_idx) == 0:
                    raise SamplingError("with_mislabeled requires label noise in the dataset")
                m = int(noisy_idx[rng.integers(len(noisy_idx))])
                tc = ds.true_labels[m]
                pool = clean_idx[ds.true_labels[clean_idx] == tc]
                a, b = (int(v) for v in _draw_distinct(rng, pool, 2))
                t = _triplet_from_indices(ds, [a, b, m], mode)
            else:  # off_manifold
                idx = _draw_distinct(rng, np.arange(len(ds)), 3)
                base = _triplet_from_indices(ds, idx, mode)
                probe_seed = int(rng.integers(2**63 - 1))
                if ds.meta.input_shape is not None:
                    probes = make_offmanifold("pixel_shuffle", base=base.stack(),
                                              image_shape=ds.meta.input_shape, seed=probe_seed)
                else:
                    probes = make_offmanifold("uniform", dims=ds.dim, seed=probe_seed)
                t = Triplet(x1=probes[0], x2=probes[1], x3=probes[2],
                            labels=base.labels, source=mode, indices=base.indices)
            build_frame(t)  # degenerate triplets are redrawn
        except DegeneracyError:
            continue
        out.append(t)
    return out
