import numpy as np
import pytest

from dbatlas import models as M
from dbatlas import training as T
from dbatlas.datasets import Dataset, DatasetMeta, gen_synthetic
from dbatlas.errors import ConfigurationError, TrainingError, UsageError
from dbatlas.optim import OptimizerSpec


def balanced_test_set(n_per_class, classes, dims, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), n_per_class)
    X = rng.random((len(labels), dims))
    return Dataset(X, labels, labels.copy(), np.zeros(len(labels), bool), "test",
                   DatasetMeta("random", seed, classes))


def test_untrained_model_chance_accuracy():
    # balanced 10-class set, labels independent of inputs: accuracy ~ 1/10
    te = balanced_test_set(200, 10, 16, seed=3)
    model = M.init_model(M.ModelSpec("mlp", 8, 1, 16, 10, init_seed=4))
    acc = 1.0 - T.error_rate(model, te.inputs, te.true_labels)
    assert abs(acc - 0.10) <= 0.03


def test_separable_blobs_reach_full_train_accuracy():
    ds = gen_synthetic("blobs", 100, 2, 2, 0.05, seed=7)
    # independent linear-separator oracle: least squares on {-1, +1}
    y = ds.true_labels * 2.0 - 1.0
    A = np.hstack([ds.inputs, np.ones((len(ds), 1))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.mean(np.sign(A @ coef) == y) > 0.99, "oracle says data is separable"

    spec = M.ModelSpec("mlp", 8, 1, 2, 2, init_seed=0)
    model, curves = T.train(M.init_model(spec), ds, OptimizerSpec("adam", 1e-2),
                            epochs=50, batch_size=32, data_seed=1)
    assert curves.train_errors[-1] == 0.0


def test_train_deterministic_predictions():
    ds = gen_synthetic("rings", 60, 3, 4, 0.03, seed=5)
    te = gen_synthetic("rings", 30, 3, 4, 0.03, seed=5, split="test")
    spec = M.ModelSpec("mlp", 6, 1, 4, 3, init_seed=2)
    opt = OptimizerSpec("sgd", 0.1, momentum=0.9)
    m1, c1 = T.train(M.init_model(spec), ds, opt, 10, 16, data_seed=9, test_dataset=te)
    m2, c2 = T.train(M.init_model(spec), ds, opt, 10, 16, data_seed=9, test_dataset=te)
    assert np.array_equal(m1.params, m2.params)
    assert np.array_equal(M.predict_labels(m1, te.inputs), M.predict_labels(m2, te.inputs))
    assert c1.train_errors == c2.train_errors
    assert c1.test_errors == c2.test_errors


def test_curves_lengths_and_meta():
    ds = gen_synthetic("blobs", 30, 2, 3, 0.05, seed=1)
    te = gen_synthetic("blobs", 10, 2, 3, 0.05, seed=1, split="test")
    spec = M.ModelSpec("mlp", 4, 1, 3, 2, init_seed=0)
    model, curves = T.train(M.init_model(spec), ds, OptimizerSpec("adam", 1e-3), 7, 16,
                            data_seed=0, test_dataset=te)
    assert len(curves.train_errors) == 7
    assert len(curves.test_errors) == 7
    assert model.train_meta.optimizer == "adam"
    assert model.train_meta.epochs == 7


def test_divergence_raises_training_error():
    # lr 1e200 puts the params near 1e200, so the two-layer forward product
    # overflows float64 and the loss goes non-finite on the next batch
    ds = gen_synthetic("blobs", 30, 2, 3, 0.05, seed=1)
    spec = M.ModelSpec("mlp", 4, 1, 3, 2, init_seed=0)
    with pytest.raises(TrainingError) as err:
        T.train(M.init_model(spec), ds, OptimizerSpec("sgd", 1e200), 5, 16, data_seed=0)
    assert err.value.epoch is not None


def test_empty_and_bad_args():
    ds = gen_synthetic("blobs", 10, 2, 3, 0.05, seed=1)
    spec = M.ModelSpec("mlp", 4, 1, 3, 2, init_seed=0)
    with pytest.raises(UsageError):
        T.train(M.init_model(spec), ds, OptimizerSpec("adam", 1e-3), 0, 16)
    with pytest.raises(UsageError):
        T.train(M.init_model(spec), ds.subset(np.array([], dtype=int)),
                OptimizerSpec("adam", 1e-3), 1, 16)


# mixup


def test_mixup_lambda_one_is_identity(rng):
    x = rng.random((6, 4))
    y = T.one_hot(rng.integers(0, 3, 6), 3)
    mx, my = T.mixup_batch(x, y, 1.0, pairing_seed=3)
    assert np.array_equal(mx, x)
    assert np.array_equal(my, y)


def test_mixup_half_mixes_one_hots():
    x = np.array([[0.0], [1.0]])
    y = T.one_hot(np.array([0, 1]), 2)
    for seed in range(20):
        mx, my = T.mixup_batch(x, y, 0.5, pairing_seed=seed)
        rows = {tuple(r) for r in my}
        # partner permutation either keeps or swaps; swapped rows are 0.5/0.5
        assert rows <= {(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)}
    # find a seed that actually pairs the two samples together
    swapped = [s for s in range(20)
               if T.mixup_batch(x, y, 0.5, pairing_seed=s)[1][0][1] == 0.5]
    assert swapped, "no pairing seed swapped the two samples"


def test_mixup_quarter_scalar_inputs():
    # lambda=0.25 on scalars 0 and 4 -> 0.25*0 + 0.75*4 = 3 when paired together
    x = np.array([[0.0], [4.0]])
    y = T.one_hot(np.array([0, 1]), 2)
    seed = next(s for s in range(50)
                if T.mixup_batch(x, y, 0.5, pairing_seed=s)[1][0][1] == 0.5)
    mx, _ = T.mixup_batch(x, y, 0.25, pairing_seed=seed)
    assert mx[0, 0] == pytest.approx(3.0)


def test_mixup_lambda_one_training_trajectory_identical():
    ds = gen_synthetic("blobs", 40, 2, 3, 0.05, seed=2)
    spec = M.ModelSpec("mlp", 4, 1, 3, 2, init_seed=1)
    opt = OptimizerSpec("adam", 1e-3)
    plain, _ = T.train(M.init_model(spec), ds, opt, 5, 16, data_seed=4)
    mixed, _ = T.train(M.init_model(spec), ds, opt, 5, 16, data_seed=4,
                       mixup_alpha=1.0, mixup_lambda=1.0)
    assert np.array_equal(plain.params, mixed.params)


def test_mixup_invalid_lambda():
    with pytest.raises(UsageError):
        T.mixup_batch(np.zeros((2, 1)), np.eye(2), 1.5, 0)


# distillation


def test_distill_temperature_one_targets_equal_teacher_softmax(rng):
    teacher = M.init_model(M.ModelSpec("mlp", 6, 1, 4, 3, init_seed=8))
    X = rng.random((20, 4))
    targets = T.teacher_targets(teacher, X, temperature=1.0)
    assert np.allclose(targets, M.softmax(M.batched_logits(teacher, X)))


def test_distill_zero_epochs_equals_vanilla_init():
    ds = gen_synthetic("blobs", 20, 2, 4, 0.05, seed=3)
    teacher = M.init_model(M.ModelSpec("mlp", 6, 1, 4, 2, init_seed=8))
    spec = M.ModelSpec("mlp", 4, 1, 4, 2, init_seed=5)
    student, curves = T.distill(spec, teacher, ds, OptimizerSpec("adam", 1e-3), epochs=0)
    assert np.array_equal(student.params, M.init_model(spec).params)
    assert curves.train_errors == []


def test_distill_validation():
    ds = gen_synthetic("blobs", 20, 2, 4, 0.05, seed=3)
    teacher = M.init_model(M.ModelSpec("mlp", 6, 1, 4, 2, init_seed=8))
    with pytest.raises(ConfigurationError):
        T.distill(M.ModelSpec("mlp", 4, 1, 4, 2), teacher, ds,
                  OptimizerSpec("adam", 1e-3), 1, temperature=0.0)
    with pytest.raises(ConfigurationError):
        T.distill(M.ModelSpec("mlp", 4, 1, 5, 2), teacher, ds,
                  OptimizerSpec("adam", 1e-3), 1)


def test_distill_student_matches_teacher_on_dense_grid():
    # 2-D teacher, dense grid as train data; distilled student should agree
    # with the teacher on a held-out grid
    gx, gy = np.meshgrid(np.linspace(0, 1, 40), np.linspace(0, 1, 40))
    X = np.column_stack([gx.ravel(), gy.ravel()])
    teacher = M.init_model(M.ModelSpec("mlp", 8, 1, 2, 3, init_seed=12))
    t_labels = M.predict_labels(teacher, X)
    ds = Dataset(X, t_labels, t_labels.copy(), np.zeros(len(X), bool), "train",
                 DatasetMeta("grid", 0, 3))
    student, _ = T.distill(M.ModelSpec("mlp", 16, 1, 2, 3, init_seed=3), teacher, ds,
                           OptimizerSpec("adam", 5e-3), epochs=150, batch_size=128)
    held = np.random.default_rng(0).random((1200, 2))
    agree = np.mean(M.predict_labels(student, held) == M.predict_labels(teacher, held))
    assert agree > 0.95
