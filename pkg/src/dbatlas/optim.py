"""SGD (momentum), Adam, and SAM-over-SGD on flat parameter vectors.

SAM takes one extra gradient evaluation per step: the incoming gradient g
defines a perturbation rho * g/||g||2, a callback re-evaluates the gradient at
the perturbed parameters, and a plain SGD-momentum update applies that second
gradient at the unperturbed point. The perturbation uses the global l2 norm of
the flat gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

OPTIMIZERS = ("sgd", "adam", "sam_sgd")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    learning_rate: float
    momentum: float = 0.0                      # sgd / sam_sgd
    betas: tuple[float, float] = (0.9, 0.999)  # adam
    epsilon: float = 1e-8                      # adam
    rho: float = 0.05                          # sam_sgd perturbation radius
    lr_schedule: tuple[tuple[int, float], ...] = ()  # (epoch, multiplier) drops

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.kind == "sam_sgd" and self.rho <= 0:
            raise ConfigurationError(f"rho must be > 0 for sam_sgd, got {self.rho}")
        object.__setattr__(self, "lr_schedule", tuple((int(e), float(m)) for e, m in self.lr_schedule))

    def lr_at_epoch(self, epoch: int) -> float:
        """Base learning rate times every scheduled multiplier whose epoch has started."""
        lr = self.learning_rate
        for drop_epoch, mult in self.lr_schedule:
            if epoch >= drop_epoch:
                lr *= mult
        return lr


@dataclass
class OptimizerState:
    params: np.ndarray                 # float64, updated in place
    velocity: np.ndarray | None = None # sgd momentum buffer
    m: np.ndarray | None = None        # adam first moment
    v: np.ndarray | None = None        # adam second moment
    step_count: int = 0


def init_state(params: np.ndarray, spec: OptimizerSpec) -> OptimizerState:
    p = np.asarray(params, dtype=np.float64).copy()
    state = OptimizerState(params=p)
    if spec.kind in ("sgd", "sam_sgd"):
        state.velocity = np.zeros_like(p)
    else:
        state.m = np.zeros_like(p)
        state.v = np.zeros_like(p)
    return state


def _sgd_update(state: OptimizerState, grad: np.ndarray, momentum: float, lr: float) -> None:
    state.velocity *= momentum
    state.velocity += grad
    state.params -= lr * state.velocity


def optimizer_step(
    state: OptimizerState,
    grad: np.ndarray,
    spec: OptimizerSpec,
    grad_fn=None,
    lr: float | None = None,
) -> OptimizerState:
    """Apply one update in place and return the state.

    `grad_fn(params) -> grad` is required for sam_sgd (second gradient at the
    perturbed point). `lr` overrides spec.learning_rate; the training loop uses
    it to apply scheduled drops.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.params.shape:
        raise ConfigurationError(f"grad shape {grad.shape} != params shape {state.params.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient; step refused")
    lr = spec.learning_rate if lr is None else lr

    if spec.kind == "sgd":
        _sgd_update(state, grad, spec.momentum, lr)
    elif spec.kind == "sam_sgd":
        if grad_fn is None:
            raise ConfigurationError("sam_sgd requires a grad_fn callback")
        norm = float(np.linalg.norm(grad))
        if norm > 0.0:
            grad = np.asarray(grad_fn(state.params + (spec.rho / norm) * grad), dtype=np.float64)
            if not np.isfinite(grad).all():
                raise NumericError("non-finite gradient at perturbed point; step refused")
        _sgd_update(state, grad, spec.momentum, lr)
    else:  # adam
        b1, b2 = spec.betas
        state.step_count += 1
        t = state.step_count
        state.m *= b1
        state.m += (1 - b1) * grad
        state.v *= b2
        state.v += (1 - b2) * grad * grad
        m_hat = state.m / (1 - b1**t)
        v_hat = state.v / (1 - b2**t)
        state.params -= lr * m_hat / (np.sqrt(v_hat) + spec.epsilon)
    return state
