"""Width-parameterized classifier families with numpy forward/backward passes.

Three families, all scaled by a single width parameter k:

* ``mlp``       -- `depth` hidden ReLU layers of k units on flattened input.
* ``convlite``  -- 3x3 conv blocks with channels k, 2k, 4k, 4k (stride-2
                   downsampling on every other block), global average pooling,
                   linear head. Stand-in for a width-scaled residual CNN;
                   skip connections are deliberately omitted.
* ``mixerlite`` -- patch embedding to k dims followed by `depth` mixer blocks
                   (token-mixing MLP + channel-mixing MLP, both residual),
                   token averaging, linear head.

Parameters live in a single flat float32 vector per model; the engine computes
in float64 internally so analytic gradients survive finite-difference checks.
Initialization is fan-in-scaled uniform, U(-sqrt(1/fan_in), +sqrt(1/fan_in)),
drawn deterministically from the spec's init seed.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ShapeError, ValidationError
from .seeding import derive_seed

FAMILIES = ("mlp", "convlite", "mixerlite")

# Channel multipliers for convlite blocks; blocks beyond the fourth stay at 4x.
_CONV_MULTS = (1, 2, 4, 4)

# Fixed chunk size for bulk prediction. BLAS results for one row depend on the
# shape of the whole matmul, so all bulk evaluation paths chunk identically to
# keep outputs bit-for-bit independent of caller batch sizes.
EVAL_CHUNK = 256


@dataclass(frozen=True)
class ModelSpec:
    family: str
    width: int
    depth: int
    input_dims: int | tuple[int, int, int]
    num_classes: int
    init_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.width < 1:
            raise ConfigurationError(f"width must be >= 1, got {self.width}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        dims = self.input_dims
        if isinstance(dims, (tuple, list)):
            dims = tuple(int(d) for d in dims)
            object.__setattr__(self, "input_dims", dims)
            if len(dims) != 3 or any(d < 1 for d in dims):
                raise ConfigurationError(f"image input_dims must be 3 positive ints, got {dims}")
        else:
            if int(dims) < 1:
                raise ConfigurationError(f"flat input_dims must be >= 1, got {dims}")
            object.__setattr__(self, "input_dims", int(dims))
        if self.family in ("convlite", "mixerlite") and not isinstance(self.input_dims, tuple):
            raise ConfigurationError(f"{self.family} requires (channels, height, width) input_dims")

    @property
    def flat_dim(self) -> int:
        d = self.input_dims
        return int(np.prod(d)) if isinstance(d, tuple) else d

    def structure_key(self) -> tuple:
        return (self.family, self.width, self.depth, self.input_dims, self.num_classes)

    def to_json_dict(self) -> dict:
        d = self.input_dims
        return {
            "family": self.family,
            "width": self.width,
            "depth": self.depth,
            "input_dims": list(d) if isinstance(d, tuple) else d,
            "num_classes": self.num_classes,
            "init_seed": self.init_seed,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ModelSpec":
        dims = d["input_dims"]
        if isinstance(dims, list):
            dims = tuple(dims)
        return ModelSpec(d["family"], d["width"], d["depth"], dims, d["num_classes"], d["init_seed"])


@dataclass
class TrainMeta:
    optimizer: str = "none"
    epochs: int = 0
    data_seed: int = 0
    noise_rate: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "epochs": self.epochs,
            "data_seed": self.data_seed,
            "noise_rate": self.noise_rate,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TrainMeta":
        return TrainMeta(d["optimizer"], d["epochs"], d["data_seed"], d["noise_rate"])


@dataclass
class Model:
    """Immutable-after-training classifier: spec + flat float32 parameters."""

    spec: ModelSpec
    params: np.ndarray
    train_meta: TrainMeta = field(default_factory=TrainMeta)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float32)
        expected = param_count(self.spec)
        if self.params.shape != (expected,):
            raise ConfigurationError(
                f"params length {self.params.shape} does not match spec ({expected},)"
            )


def model_id(model: Model) -> str:
    """Stable 12-hex-digit identifier of (spec, params)."""
    h = hashlib.sha256()
    h.update(json.dumps(model.spec.to_json_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(model.params, dtype="<f4").tobytes())
    return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# layers


class _Layer:
    params: list = []
    grads: list = []
    fan_ins: list = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Dense(_Layer):
    """Affine map on the last axis; leading axes broadcast."""

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.W = np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.params = [self.W, self.b]
        self.grads = [self.dW, self.db]
        self.fan_ins = [n_in, n_in]

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.dW += x2.T @ dy2
        self.db += dy2.sum(axis=0)
        return dy @ self.W.T


class Relu(_Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Conv2d(_Layer):
    """3x3 convolution, zero padding 1, given stride, via im2col."""

    def __init__(self, c_in: int, c_out: int, stride: int):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.W = np.zeros((c_in * 9, c_out))
        self.b = np.zeros(c_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.params = [self.W, self.b]
        self.grads = [self.dW, self.db]
        self.fan_ins = [c_in * 9, c_in * 9]

    def _im2col(self, x):
        B, C, H, W = x.shape
        s = self.stride
        Ho, Wo = (H - 1) // s + 1, (W - 1) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        col = np.empty((B, C, 3, 3, Ho, Wo))
        for ky in range(3):
            for kx in range(3):
                col[:, :, ky, kx] = xp[:, :, ky : ky + (Ho - 1) * s + 1 : s,
                                       kx : kx + (Wo - 1) * s + 1 : s]
        return col, Ho, Wo

    def forward(self, x):
        self._xshape = x.shape
        col, Ho, Wo = self._im2col(x)
        B = x.shape[0]
        # rows ordered (b, ho, wo), columns (c_in, ky, kx)
        self._col2 = col.transpose(0, 4, 5, 1, 2, 3).reshape(B * Ho * Wo, self.c_in * 9)
        self._HoWo = (Ho, Wo)
        out = self._col2 @ self.W + self.b
        return out.reshape(B, Ho, Wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        B, C, H, W = self._xshape
        Ho, Wo = self._HoWo
        s = self.stride
        dy2 = dy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, self.c_out)
        self.dW += self._col2.T @ dy2
        self.db += dy2.sum(axis=0)
        dcol = (dy2 @ self.W.T).reshape(B, Ho, Wo, C, 3, 3).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros((B, C, H + 2, W + 2))
        for ky in range(3):
            for kx in range(3):
                dxp[:, :, ky : ky + (Ho - 1) * s + 1 : s,
                    kx : kx + (Wo - 1) * s + 1 : s] += dcol[:, :, ky, kx]
        return dxp[:, :, 1 : H + 1, 1 : W + 1]


class GlobalAvgPool(_Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        B, C, H, W = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape) / (H * W)


class ToImage(_Layer):
    def __init__(self, c: int, h: int, w: int):
        self.c, self.h, self.w = c, h, w

    def forward(self, x):
        return x.reshape(x.shape[0], self.c, self.h, self.w)

    def backward(self, dy):
        return dy.reshape(dy.shape[0], self.c * self.h * self.w)


class Flatten(_Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class ToPatches(_Layer):
    """(B, C, H, W) -> (B, T, C*p*p) with T = (H/p)*(W/p)."""

    def __init__(self, c: int, h: int, w: int, p: int):
        self.c, self.h, self.w, self.p = c, h, w, p
        self.hp, self.wp = h // p, w // p

    def forward(self, x):
        B = x.shape[0]
        p = self.p
        x = x.reshape(B, self.c, self.hp, p, self.wp, p)
        return x.transpose(0, 2, 4, 1, 3, 5).reshape(B, self.hp * self.wp, self.c * p * p)

    def backward(self, dy):
        B = dy.shape[0]
        p = self.p
        dy = dy.reshape(B, self.hp, self.wp, self.c, p, p).transpose(0, 3, 1, 4, 2, 5)
        return dy.reshape(B, self.c, self.h, self.w)


class Transpose12(_Layer):
    def forward(self, x):
        return x.transpose(0, 2, 1)

    def backward(self, dy):
        return dy.transpose(0, 2, 1)


class MeanTokens(_Layer):
    def forward(self, x):
        self._T = x.shape[1]
        return x.mean(axis=1)

    def backward(self, dy):
        return np.repeat(dy[:, None, :], self._T, axis=1) / self._T


class Residual(_Layer):
    def __init__(self, inner: list[_Layer]):
        self.inner = inner

    def forward(self, x):
        h = x
        for layer in self.inner:
            h = layer.forward(h)
        return x + h

    def backward(self, dy):
        dh = dy
        for layer in reversed(self.inner):
            dh = layer.backward(dh)
        return dy + dh


def _walk(layers):
    for layer in layers:
        yield layer
        if isinstance(layer, Residual):
            yield from _walk(layer.inner)


# ---------------------------------------------------------------------------
# family builders


def mixer_patch_size(h: int, w: int) -> int:
    """Largest of 4, 2, 1 dividing both spatial dims."""
    for p in (4, 2, 1):
        if h % p == 0 and w % p == 0:
            return p
    return 1


def _build_layers(spec: ModelSpec) -> list[_Layer]:
    if spec.family == "mlp":
        layers: list[_Layer] = [Flatten()]
        d_in = spec.flat_dim
        for _ in range(spec.depth):
            layers += [Dense(d_in, spec.width), Relu()]
            d_in = spec.width
        layers.append(Dense(d_in, spec.num_classes))
        return layers

    c, h, w = spec.input_dims
    if spec.family == "convlite":
        layers = [ToImage(c, h, w)]
        c_in = c
        for i in range(spec.depth):
            c_out = spec.width * _CONV_MULTS[min(i, 3)]
            stride = 2 if i in (1, 3) else 1
            layers += [Conv2d(c_in, c_out, stride), Relu()]
            c_in = c_out
        layers += [GlobalAvgPool(), Dense(c_in, spec.num_classes)]
        return layers

    # mixerlite
    p = mixer_patch_size(h, w)
    tokens = (h // p) * (w // p)
    k = spec.width
    layers = [ToImage(c, h, w), ToPatches(c, h, w, p), Dense(c * p * p, k)]
    for _ in range(spec.depth):
        layers.append(Residual([Transpose12(), Dense(tokens, tokens), Relu(),
                                Dense(tokens, tokens), Transpose12()]))
        layers.append(Residual([Dense(k, k), Relu(), Dense(k, k)]))
    layers += [MeanTokens(), Dense(k, spec.num_classes)]
    return layers


# ---------------------------------------------------------------------------
# engine


class Engine:
    """Mutable compute graph for one model structure.

    Holds float64 parameter tensors; `set_params` loads a flat vector,
    `loss_and_grad` runs forward+backward. Not thread-safe; use
    `engine_for` which hands out one engine per (thread, structure).
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers = _build_layers(spec)
        self._tensors = []
        for layer in _walk(self.layers):
            for t, g, f in zip(layer.params, layer.grads, layer.fan_ins):
                self._tensors.append((t, g, f))
        self.n_params = int(sum(t.size for t, _, _ in self._tensors))

    def init_vector(self, init_seed: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(init_seed, "init"))
        parts = []
        for t, _, fan_in in self._tensors:
            bound = np.sqrt(1.0 / fan_in)
            parts.append(rng.uniform(-bound, bound, size=t.size))
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_params(self, vec: np.ndarray) -> None:
        ofs = 0
        for t, _, _ in self._tensors:
            t[...] = vec[ofs : ofs + t.size].reshape(t.shape)
            ofs += t.size

    def _zero_grads(self):
        for _, g, _ in self._tensors:
            g[...] = 0.0

    def _gather_grads(self) -> np.ndarray:
        return np.concatenate([g.ravel() for _, g, _ in self._tensors])

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def loss_and_grad(self, x: np.ndarray, targets) -> tuple[float, np.ndarray]:
        kind, t = as_targets(targets, self.spec.num_classes)
        z = self.logits(x)
        B = z.shape[0]
        logp = log_softmax(z)
        if kind == "hard":
            loss = -logp[np.arange(B), t].mean()
            tmat = np.zeros_like(z)
            tmat[np.arange(B), t] = 1.0
        else:
            loss = -(t * logp).mean(axis=0).sum()
            tmat = t
        dz = (np.exp(logp) - tmat) / B
        self._zero_grads()
        dh = dz
        for layer in reversed(self.layers):
            dh = layer.backward(dh)
        return float(loss), self._gather_grads()


_local = threading.local()


def engine_for(spec: ModelSpec) -> Engine:
    cache = getattr(_local, "engines", None)
    if cache is None:
        cache = _local.engines = {}
    key = spec.structure_key()
    eng = cache.get(key)
    if eng is None:
        eng = cache[key] = Engine(replace(spec, init_seed=0))
    return eng


def param_count(spec: ModelSpec) -> int:
    return engine_for(spec).n_params


# ---------------------------------------------------------------------------
# public ops


def init_model(spec: ModelSpec) -> Model:
    """Deterministic fan-in-scaled uniform initialization from spec.init_seed."""
    eng = engine_for(spec)
    vec = eng.init_vector(spec.init_seed)
    return Model(spec=spec, params=vec.astype(np.float32))


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n = spec.flat_dim
    if x.ndim == 2:
        if x.shape[1] != n:
            raise ShapeError(f"batch has {x.shape[1]} features, model expects {n}")
        return x
    if x.ndim == 4 and isinstance(spec.input_dims, tuple):
        if x.shape[1:] != spec.input_dims:
            raise ShapeError(f"batch shape {x.shape[1:]} != input_dims {spec.input_dims}")
        return x.reshape(x.shape[0], n)
    raise ShapeError(f"cannot feed batch of shape {x.shape} to input_dims {spec.input_dims}")


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Per-sample logits, shape (B, num_classes). Pure in (params, batch)."""
    x = _check_batch(model.spec, batch)
    eng = engine_for(model.spec)
    eng.set_params(model.params.astype(np.float64))
    return eng.logits(x)


def batched_logits(model: Model, X: np.ndarray) -> np.ndarray:
    """Logits over many samples, evaluated in fixed-size chunks.

    The chunking (EVAL_CHUNK rows at a time) is part of the output contract:
    results are bit-identical no matter how callers batch their requests.
    """
    X = _check_batch(model.spec, X)
    eng = engine_for(model.spec)
    eng.set_params(model.params.astype(np.float64))
    out = np.empty((X.shape[0], model.spec.num_classes))
    for i in range(0, X.shape[0], EVAL_CHUNK):
        out[i : i + EVAL_CHUNK] = eng.logits(X[i : i + EVAL_CHUNK])
    return out


def predict_labels(model: Model, X: np.ndarray) -> np.ndarray:
    return batched_logits(model, X).argmax(axis=1)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=-1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))


def as_targets(targets, num_classes: int) -> tuple[str, np.ndarray]:
    """Classify targets as hard class indices or soft distribution rows."""
    t = np.asarray(targets)
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
        if t.size and (t.min() < 0 or t.max() >= num_classes):
            raise ValidationError(f"class indices out of range [0, {num_classes})")
        return "hard", t
    if t.ndim == 2 and t.shape[1] == num_classes:
        t = t.astype(np.float64)
        if (t < 0).any():
            raise ValidationError("soft targets must be nonnegative")
        sums = t.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValidationError("soft target rows must sum to 1 within 1e-6")
        return "soft", t
    raise ValidationError(f"targets of shape {t.shape}/dtype {t.dtype} not understood")


def loss_and_grad(model: Model, batch: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. params.

    Targets are either int class indices or rows of nonnegative reals summing
    to one (soft labels for distillation / mixup).
    """
    x = _check_batch(model.spec, batch)
    eng = engine_for(model.spec)
    eng.set_params(model.params.astype(np.float64))
    return eng.loss_and_grad(x, targets)
