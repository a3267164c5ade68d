"""Deterministic training loop, mixup, and teacher-student distillation.

All randomness (shuffling, augmentation, mixup pairing) derives from the data
seed through keyed streams, so runs with identical seeds and config reproduce
bit-for-bit. Targets are carried as soft rows internally; hard labels are
one-hot encoded once up front. That keeps the no-mixup path and the
mixup-with-lambda-1 path numerically identical, not just close.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models as M
from .datasets import AugmentFlags, Dataset, augment
from .errors import ConfigurationError, NumericError, TrainingError, UsageError
from .optim import OptimizerSpec, init_state, optimizer_step
from .seeding import derive_seed, rng_for


@dataclass
class TrainCurves:
    train_errors: list[float] = field(default_factory=list)  # vs assigned labels
    test_errors: list[float] = field(default_factory=list)   # vs true labels


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def mixup_batch(
    batch: np.ndarray,
    one_hot_targets: np.ndarray,
    lam: float,
    pairing_seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of each sample with a seeded random partner."""
    if not 0.0 <= lam <= 1.0:
        raise UsageError(f"mixup lambda must be in [0, 1], got {lam}")
    rng = np.random.default_rng(derive_seed(pairing_seed, "mixup-pairing"))
    partner = rng.permutation(batch.shape[0])
    mixed_x = lam * batch + (1.0 - lam) * batch[partner]
    mixed_y = lam * one_hot_targets + (1.0 - lam) * one_hot_targets[partner]
    return mixed_x, mixed_y


def _chunked_error(engine: M.Engine, inputs: np.ndarray, labels: np.ndarray) -> float:
    wrong = 0
    for i in range(0, inputs.shape[0], M.EVAL_CHUNK):
        z = engine.logits(inputs[i : i + M.EVAL_CHUNK])
        wrong += int((z.argmax(axis=1) != labels[i : i + M.EVAL_CHUNK]).sum())
    return wrong / inputs.shape[0]


def error_rate(model: M.Model, inputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(M.predict_labels(model, inputs) != np.asarray(labels)))


def train(
    model: M.Model,
    dataset: Dataset,
    opt: OptimizerSpec,
    epochs: int,
    batch_size: int,
    augment_flags: AugmentFlags | None = None,
    mixup_alpha: float | None = None,
    data_seed: int = 0,
    test_dataset: Dataset | None = None,
    soft_targets: np.ndarray | None = None,
    mixup_lambda: float | None = None,
) -> tuple[M.Model, TrainCurves]:
    """Train a copy of `model` on assigned labels; returns model + error curves.

    `soft_targets` (N, C) replaces the one-hot assigned labels (distillation).
    `mixup_lambda` pins the per-batch mixup coefficient instead of drawing it
    from Beta(alpha, alpha); meant for endpoint checks.
    """
    if len(dataset) == 0:
        raise UsageError("cannot train on an empty dataset")
    if epochs < 1:
        raise UsageError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    spec = model.spec
    if dataset.dim != spec.flat_dim:
        raise UsageError(f"dataset dim {dataset.dim} != model input dim {spec.flat_dim}")

    engine = M.engine_for(spec)
    state = init_state(model.params.astype(np.float64), opt)
    inputs = dataset.inputs
    if soft_targets is not None:
        targets = np.asarray(soft_targets, dtype=np.float64)
        if targets.shape != (len(dataset), spec.num_classes):
            raise UsageError(f"soft targets shape {targets.shape} != (N, C)")
    else:
        targets = one_hot(dataset.assigned_labels, spec.num_classes)
    n = len(dataset)
    shape = dataset.meta.input_shape
    curves = TrainCurves()

    for epoch in range(epochs):
        lr = opt.lr_at_epoch(epoch)
        order = rng_for(data_seed, "order", epoch).permutation(n)
        aug_rng = rng_for(data_seed, "augment", epoch)
        mix_rng = rng_for(data_seed, "mixup", epoch)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            xb = inputs[idx]
            tb = targets[idx]
            if augment_flags is not None and augment_flags.active:
                xb = augment(xb, shape, augment_flags, aug_rng)
            if mixup_alpha is not None:
                lam = mixup_lambda if mixup_lambda is not None else float(mix_rng.beta(mixup_alpha, mixup_alpha))
                xb, tb = mixup_batch(xb, tb, lam, derive_seed(data_seed, "mixup-pair", epoch, b))

            engine.set_params(state.params)
            loss, grad = engine.loss_and_grad(xb, tb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss}", epoch=epoch)

            def grad_at(p, xb=xb, tb=tb):
                engine.set_params(p)
                return engine.loss_and_grad(xb, tb)[1]

            try:
                optimizer_step(state, grad, opt, grad_fn=grad_at, lr=lr)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc

        engine.set_params(state.params)
        curves.train_errors.append(_chunked_error(engine, inputs, dataset.assigned_labels))
        if test_dataset is not None:
            curves.test_errors.append(
                _chunked_error(engine, test_dataset.inputs, test_dataset.true_labels))

    meta = M.TrainMeta(optimizer=opt.kind, epochs=epochs, data_seed=data_seed,
                       noise_rate=dataset.meta.noise_rate)
    trained = M.Model(spec=spec, params=state.params.astype(np.float32), train_meta=meta)
    return trained, curves


def distill(
    student_spec: M.ModelSpec,
    teacher: M.Model,
    dataset: Dataset,
    opt: OptimizerSpec,
    epochs: int,
    batch_size: int = 128,
    temperature: float = 1.0,
    data_seed: int = 0,
    test_dataset: Dataset | None = None,
) -> tuple[M.Model, TrainCurves]:
    """Train a student against the teacher's temperature-softened softmax."""
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    if student_spec.input_dims != teacher.spec.input_dims:
        raise ConfigurationError("student and teacher must share input_dims")
    if student_spec.num_classes != teacher.spec.num_classes:
        raise ConfigurationError("student and teacher must share num_classes")
    student = M.init_model(student_spec)
    if epochs == 0:
        return student, TrainCurves()
    soft = teacher_targets(teacher, dataset.inputs, temperature)
    return train(student, dataset, opt, epochs, batch_size,
                 data_seed=data_seed, test_dataset=test_dataset, soft_targets=soft)


def teacher_targets(teacher: M.Model, inputs: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return M.softmax(M.batched_logits(teacher, inputs) / temperature)
