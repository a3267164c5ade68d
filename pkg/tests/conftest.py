import hypothesis
import numpy as np
import pytest

from dbatlas import models as M

hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.load_profile("ci")


def numeric_gradient(spec, params64, x, targets, h=1e-3):
    """Central finite differences of the batch loss, one coordinate at a time."""
    eng = M.engine_for(spec)
    num = np.zeros_like(params64)
    for i in range(len(params64)):
        p = params64.copy()
        p[i] += h
        eng.set_params(p)
        lp, _ = eng.loss_and_grad(x, targets)
        p[i] -= 2 * h
        eng.set_params(p)
        lm, _ = eng.loss_and_grad(x, targets)
        num[i] = (lp - lm) / (2 * h)
    return num


def max_rel_err(analytic, numeric):
    """Elementwise relative error with a floor at 1% of the gradient scale,
    so exactly-zero entries (dead ReLUs) do not divide by noise."""
    scale = max(np.abs(numeric).max(), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 0.01 * scale)
    return float((np.abs(analytic - numeric) / denom).max())


def gradcheck(spec, batch=4, h=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    model = M.init_model(spec)
    x = rng.random((batch, spec.flat_dim))
    t = rng.integers(0, spec.num_classes, batch)
    _, grad = M.loss_and_grad(model, x, t)
    num = numeric_gradient(spec, model.params.astype(np.float64), x, t, h=h)
    return max_rel_err(grad, num)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
