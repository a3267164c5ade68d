"""Dataset ingestion, synthetic generators, label noise, augmentation, probes.

Samples are flat float vectors with values in [0, 1]; image-shaped data keeps
its (channels, height, width) shape in the metadata. A dataset carries both
the true labels and the assigned (possibly noise-flipped) labels, with a
boolean mask marking the flips. Noise is injected exactly once and persisted;
it is never re-rolled per epoch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError
from .seeding import derive_seed

SYNTHETIC_KINDS = ("blobs", "rings", "waves")

# classes in "waves" data are plane-wave frequency signatures (cycles along
# x and y); detectable by local filters anywhere in the image
WAVE_FREQS = ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2),
              (3, 0), (0, 3))


@dataclass
class DatasetMeta:
    source: str
    seed: int | None
    num_classes: int
    input_shape: tuple[int, int, int] | None = None
    noise_rate: float = 0.0
    noise_seed: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "source": self.source,
            "seed": self.seed,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape) if self.input_shape else None,
            "noise_rate": self.noise_rate,
            "noise_seed": self.noise_seed,
        }


@dataclass
class Dataset:
    inputs: np.ndarray            # (N, n) float64 in [0, 1]
    true_labels: np.ndarray       # (N,) int64
    assigned_labels: np.ndarray   # (N,) int64, post-noise
    noise_mask: np.ndarray        # (N,) bool, True iff assigned != true
    split: str                    # "train" | "test"
    meta: DatasetMeta

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.assigned_labels = np.asarray(self.assigned_labels, dtype=np.int64)
        self.noise_mask = np.asarray(self.noise_mask, dtype=bool)
        if not np.array_equal(self.noise_mask, self.assigned_labels != self.true_labels):
            raise UsageError("noise_mask inconsistent with assigned vs true labels")
        if self.split not in ("train", "test"):
            raise UsageError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.split == "test" and self.noise_mask.any():
            raise UsageError("test split must stay clean")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.meta.num_classes

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            inputs=self.inputs[indices],
            true_labels=self.true_labels[indices],
            assigned_labels=self.assigned_labels[indices],
            noise_mask=self.noise_mask[indices],
            split=self.split,
            meta=self.meta,
        )


def _clean(inputs, labels, split, meta) -> Dataset:
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(
        inputs=inputs,
        true_labels=labels,
        assigned_labels=labels.copy(),
        noise_mask=np.zeros(len(labels), dtype=bool),
        split=split,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# file loaders


def _read_idx(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic {raw[:4].hex()}", offset=0)
    if raw[2] != 0x08:
        raise FormatError(f"{path}: unsupported IDX dtype 0x{raw[2]:02x} (only unsigned byte)", offset=2)
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated IDX dims", offset=len(raw))
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    expected = header_end + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(
            f"{path}: IDX payload length {len(raw) - header_end} != product of dims {dims}",
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, split: str = "train") -> Dataset:
    """Load an IDX image file + IDX label file pair (MNIST-style)."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim < 2:
        raise FormatError(f"{images_path}: expected image tensor, got {images.ndim} dims", offset=3)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected 1-D label vector, got {labels.ndim} dims", offset=3)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}", offset=4)
    n_samples = images.shape[0]
    if images.ndim == 3:
        shape = (1, images.shape[1], images.shape[2])
    else:
        shape = tuple(images.shape[1:])
    inputs = images.reshape(n_samples, -1).astype(np.float64) / 255.0
    meta = DatasetMeta(source=str(images_path), seed=None,
                       num_classes=int(labels.max()) + 1 if n_samples else 0,
                       input_shape=shape)
    return _clean(inputs, labels, split, meta)


CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes, channel-major


def load_cifar_binary(path: str | Path, split: str = "train") -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise FormatError(
            f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}-byte records",
            offset=len(raw) - (len(raw) % CIFAR_RECORD),
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte out of range 0..9", offset=int(np.argmax(labels > 9)) * CIFAR_RECORD)
    inputs = records[:, 1:].astype(np.float64) / 255.0
    meta = DatasetMeta(source=str(path), seed=None, num_classes=10, input_shape=(3, 32, 32))
    return _clean(inputs, labels, split, meta)


# ---------------------------------------------------------------------------
# synthetic data


def class_centers(kind: str, classes: int, dims: int, layout: str = "circle") -> np.ndarray:
    """Deterministic class anchors in the unit cube.

    blobs/circle: centers on a circle of radius 0.25 around the cube center in
    the first two dims (two classes land exactly 0.5 apart). blobs/line:
    centers evenly spaced along the first dim, so class order matches spatial
    order and even a single hidden feature can separate the clean data.
    rings: per-class radii evenly spaced in [0.10, 0.42].
    """
    centers = np.full((classes, dims), 0.5)
    if kind == "blobs":
        if layout == "circle":
            angles = 2 * np.pi * np.arange(classes) / classes
            centers[:, 0] += 0.25 * np.cos(angles)
            centers[:, 1] += 0.25 * np.sin(angles)
        elif layout == "line":
            centers[:, 0] = np.linspace(0.15, 0.85, classes)
        else:
            raise UsageError(f"unknown blob layout {layout!r}")
    return centers


def ring_radii(classes: int) -> np.ndarray:
    if classes == 1:
        return np.array([0.26])
    return 0.10 + 0.32 * np.arange(classes) / (classes - 1)


def gen_synthetic(
    kind: str,
    n_per_class: int,
    classes: int,
    dims: int,
    noise_sigma: float,
    seed: int,
    split: str = "train",
    nuisance_mode: str = "gaussian",
    layout: str = "circle",
) -> Dataset:
    """Class-balanced synthetic data, deterministic under seed, clipped to [0, 1].

    blobs/rings put the class structure in the first two dims. With the
    default nuisance_mode "gaussian", the remaining dims sit at 0.5 plus the
    same noise_sigma jitter; "uniform" scatters them i.i.d. over [0, 1]
    instead, spreading samples far apart so individual points can be memorized
    (the regime width sweeps need). waves treats dims as a square grayscale
    image ((1, s, s) with s = sqrt(dims)) whose class is a plane-wave
    frequency signature with a random per-sample phase; the natural input for
    the convolutional and mixer families.
    """
    if kind not in SYNTHETIC_KINDS:
        raise UsageError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if dims < 2:
        raise UsageError(f"synthetic data needs dims >= 2, got {dims}")
    if nuisance_mode not in ("gaussian", "uniform"):
        raise UsageError(f"unknown nuisance_mode {nuisance_mode!r}")
    rng = np.random.default_rng(derive_seed(seed, "synthetic", kind, split))
    n_total = n_per_class * classes
    labels = np.repeat(np.arange(classes), n_per_class)
    input_shape = None
    if kind == "waves":
        side = int(round(np.sqrt(dims)))
        if side * side != dims:
            raise UsageError(f"waves needs a square pixel count, got dims={dims}")
        if classes > len(WAVE_FREQS):
            raise UsageError(f"waves supports at most {len(WAVE_FREQS)} classes")
        input_shape = (1, side, side)
        yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        freqs = np.asarray(WAVE_FREQS[:classes], dtype=np.float64)[labels]
        phase = rng.uniform(0.0, 2 * np.pi, size=n_total)
        angle = (2 * np.pi / side) * (freqs[:, 0, None, None] * xx + freqs[:, 1, None, None] * yy)
        points = 0.5 + 0.25 * np.sin(angle + phase[:, None, None])
        points = points.reshape(n_total, dims)
        if noise_sigma > 0:
            points = points + noise_sigma * rng.standard_normal((n_total, dims))
    else:
        if kind == "blobs":
            points = class_centers("blobs", classes, dims, layout)[labels].copy()
        else:
            radii = ring_radii(classes)[labels]
            phi = rng.uniform(0.0, 2 * np.pi, size=n_total)
            points = np.full((n_total, dims), 0.5)
            points[:, 0] += radii * np.cos(phi)
            points[:, 1] += radii * np.sin(phi)
        if noise_sigma > 0:
            points[:, :2] += noise_sigma * rng.standard_normal((n_total, 2))
        if nuisance_mode == "uniform":
            points[:, 2:] = rng.random((n_total, dims - 2))
        elif noise_sigma > 0:
            points[:, 2:] += noise_sigma * rng.standard_normal((n_total, dims - 2))
    inputs = np.clip(points, 0.0, 1.0)
    tag = f"synthetic:{kind}:{layout}:{nuisance_mode}" if kind == "blobs" else f"synthetic:{kind}"
    meta = DatasetMeta(source=tag, seed=seed, num_classes=classes, input_shape=input_shape)
    return _clean(inputs, labels, split, meta)


# ---------------------------------------------------------------------------
# label noise


def inject_label_noise(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Relabel exactly floor(rate * N) samples, uniformly among the other classes.

    The flip set is drawn once (uniformly, without replacement) and stored in
    the returned dataset; downstream code never re-rolls it.
    """
    if ds.split != "train":
        raise UsageError("label noise applies to the train split only")
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"noise rate must be in [0, 1), got {rate}")
    if ds.noise_mask.any():
        raise UsageError("dataset already carries label noise")
    n_flip = int(np.floor(rate * len(ds)))
    rng = np.random.default_rng(derive_seed(seed, "label-noise"))
    flip_idx = rng.choice(len(ds), size=n_flip, replace=False)
    assigned = ds.true_labels.copy()
    if n_flip:
        c = ds.num_classes
        # uniform over the c-1 wrong classes
        draws = rng.integers(0, c - 1, size=n_flip)
        old = assigned[flip_idx]
        assigned[flip_idx] = np.where(draws < old, draws, draws + 1)
    mask = assigned != ds.true_labels
    meta = replace(ds.meta, noise_rate=rate, noise_seed=seed)
    return Dataset(
        inputs=ds.inputs,
        true_labels=ds.true_labels,
        assigned_labels=assigned,
        noise_mask=mask,
        split=ds.split,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentFlags:
    crop_pad: int = 0
    hflip: bool = False

    @property
    def active(self) -> bool:
        return self.crop_pad > 0 or self.hflip


def crop_offsets(rng: np.random.Generator, n: int, pad: int) -> np.ndarray:
    """(n, 2) integer crop offsets, each drawn from {0 .. 2*pad}."""
    return rng.integers(0, 2 * pad + 1, size=(n, 2))


def hflip_image(flat: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = shape
    return flat.reshape(-1, c, h, w)[:, :, :, ::-1].reshape(flat.shape)


def augment(
    batch: np.ndarray,
    shape: tuple[int, int, int] | None,
    flags: AugmentFlags,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random crop (zero padding) then horizontal flip with prob 0.5 per sample."""
    if not flags.active:
        return batch
    if shape is None:
        raise UsageError("augmentation flags require image-shaped data")
    c, h, w = shape
    x = batch.reshape(-1, c, h, w)
    if flags.crop_pad > 0:
        p = flags.crop_pad
        offs = crop_offsets(rng, x.shape[0], p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        out = np.empty_like(x)
        for i, (dy, dx) in enumerate(offs):
            out[i] = xp[i, :, dy : dy + h, dx : dx + w]
        x = out
    if flags.hflip:
        do = rng.random(x.shape[0]) < 0.5
        x = x.copy()
        x[do] = x[do][:, :, :, ::-1]
    return x.reshape(batch.shape)


# ---------------------------------------------------------------------------
# off-manifold probe triplets


def make_offmanifold(
    kind: str,
    base: np.ndarray | None = None,
    image_shape: tuple[int, int, int] | None = None,
    dims: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Three probe images: per-image spatial pixel shuffles of a base triplet,
    or i.i.d. uniform noise. Returns a (3, n) array."""
    rng = np.random.default_rng(derive_seed(seed, "offmanifold", kind))
    if kind == "pixel_shuffle":
        if base is None or image_shape is None:
            raise UsageError("pixel_shuffle needs a base triplet and its image shape")
        base = np.asarray(base, dtype=np.float64)
        if base.shape[0] != 3:
            raise UsageError(f"base triplet must have 3 rows, got {base.shape}")
        c, h, w = image_shape
        out = np.empty_like(base)
        for i in range(3):
            perm = rng.permutation(h * w)
            img = base[i].reshape(c, h * w)
            out[i] = img[:, perm].reshape(-1)  # channel tuples move together
        return out
    if kind == "uniform":
        if dims is None:
            if image_shape is None:
                raise UsageError("uniform probes need dims or image_shape")
            dims = int(np.prod(image_shape))
        return rng.random((3, dims))
    raise UsageError(f"unknown off-manifold kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV persistence (label, dim0 ... dim{n-1}) + JSON sidecar


def sidecar_path(csv_path: str | Path) -> Path:
    return Path(str(csv_path) + ".json")


def save_csv(ds: Dataset, csv_path: str | Path) -> None:
    """Write assigned labels + inputs as CSV and full provenance as a sidecar."""
    csv_path = Path(csv_path)
    n = ds.dim
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"dim{i}" for i in range(n)])
        for label, row in zip(ds.assigned_labels, ds.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
    flipped = [[int(i), int(ds.true_labels[i])] for i in np.flatnonzero(ds.noise_mask)]
    sidecar = {
        "split": ds.split,
        "flipped": flipped,
        **ds.meta.to_json_dict(),
    }
    sidecar_path(csv_path).write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_csv(csv_path: str | Path) -> Dataset:
    csv_path = Path(csv_path)
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise FormatError(f"{csv_path}: first column must be 'label'", offset=0)
        labels, rows = [], []
        for rec in reader:
            labels.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    assigned = np.asarray(labels, dtype=np.int64)
    inputs = np.asarray(rows, dtype=np.float64)
    side = sidecar_path(csv_path)
    if side.exists():
        info = json.loads(side.read_text())
        true = assigned.copy()
        for idx, true_label in info.get("flipped", []):
            true[idx] = true_label
        meta = DatasetMeta(
            source=info.get("source", str(csv_path)),
            seed=info.get("seed"),
            num_classes=info.get("num_classes", int(assigned.max()) + 1),
            input_shape=tuple(info["input_shape"]) if info.get("input_shape") else None,
            noise_rate=info.get("noise_rate", 0.0),
            noise_seed=info.get("noise_seed"),
        )
        split = info.get("split", "train")
    else:
        true = assigned.copy()
        meta = DatasetMeta(source=str(csv_path), seed=None, num_classes=int(assigned.max()) + 1)
        split = "train"
    return Dataset(
        inputs=inputs,
        true_labels=true,
        assigned_labels=assigned,
        noise_mask=assigned != true,
        split=split,
        meta=meta,
    )
