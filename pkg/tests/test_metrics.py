import numpy as np
import pytest

from dbatlas import metrics as X
from dbatlas import models as M
from dbatlas import plane as P
from dbatlas.datasets import Dataset, DatasetMeta, gen_synthetic, inject_label_noise


def triplet(x1, x2, x3):
    return P.Triplet(np.asarray(x1, float), np.asarray(x2, float), np.asarray(x3, float),
                     (0, 1, 2), "distinct_class", None)


def random_triplets(rng, n, dim=6):
    return [triplet(rng.random(dim), rng.random(dim), rng.random(dim)) for _ in range(n)]


def threshold_model(cut):
    def fn(X_):
        s = np.where(np.asarray(X_)[:, 0] >= cut, 1.0, -1.0)
        return np.column_stack([-s, s])
    return fn


def constant_model(c, classes):
    def fn(X_):
        z = np.zeros((len(X_), classes))
        z[:, c] = 5.0
        return z
    return fn


# ---- union-find oracle, independent of the flood-fill implementation ----


def union_find_components(raster, connectivity=4):
    h, w = raster.shape
    parent = list(range(h * w))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    if connectivity == 4:
        nbrs = [(0, 1), (1, 0)]
    else:
        nbrs = [(0, 1), (1, 0), (1, 1), (1, -1)]
    for y in range(h):
        for x in range(w):
            for dy, dx in nbrs:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and raster[ny, nx] == raster[y, x]:
                    union(y * w + x, ny * w + nx)
    return len({find(i) for i in range(h * w)})


# ---- reproducibility ----


def test_self_reproducibility_is_one(rng):
    model = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 3, init_seed=1))
    rep = X.reproducibility(model, model, random_triplets(rng, 10))
    assert rep.mean == 1.0
    assert all(s == 1.0 for s in rep.per_triplet_scores)


def test_constant_models_disagree_fully(rng):
    rep = X.reproducibility(constant_model(0, 3), constant_model(2, 3),
                            random_triplets(rng, 5))
    assert rep.mean == 0.0


def test_two_threshold_models_score_09_exactly():
    # boundaries x=0.5 and x=0.6 on a 50x50 cell-center grid over [0,1]^2:
    # 5 of 50 columns disagree -> 0.9
    f = P.PlaneFrame(base=np.zeros(2), u=np.array([1.0, 0.0]), w=np.array([0.0, 1.0]),
                     scale_u=1.0, norm_v1=1.0, v2_dot_u=0.0,
                     alpha_range=(0.01, 0.99), beta_range=(0.01, 0.99))
    g = P.make_grid(f, (50, 50))
    a = P.evaluate_grid(threshold_model(0.5), g)
    b = P.evaluate_grid(threshold_model(0.6), g)
    assert X.agreement(a, b) == 0.9


def test_reproducibility_symmetric(rng):
    m1 = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 3, init_seed=1))
    m2 = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 3, init_seed=2))
    ts = random_triplets(rng, 8)
    assert X.reproducibility(m1, m2, ts).mean == X.reproducibility(m2, m1, ts).mean


def test_label_permuted_copy_scores_zero(rng):
    model = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 4, init_seed=7))
    perm = np.array([1, 2, 3, 0])  # derangement

    def permuted(X_):
        z = M.batched_logits(model, X_)
        return z[:, np.argsort(perm)]  # argmax(permuted) = perm[argmax(original)]

    rep = X.reproducibility(model, permuted, random_triplets(rng, 10))
    assert rep.mean == 0.0


def test_reproducibility_jobs_invariant(rng):
    m1 = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 3, init_seed=1))
    m2 = M.init_model(M.ModelSpec("mlp", 5, 1, 6, 3, init_seed=2))
    ts = random_triplets(rng, 12)
    a = X.reproducibility(m1, m2, ts, jobs=1)
    b = X.reproducibility(m1, m2, ts, jobs=4)
    assert a.per_triplet_scores == b.per_triplet_scores
    assert a.mean == b.mean


# ---- fragmentation ----


def test_constant_grid_one_component():
    assert X.count_components(np.zeros((50, 50), dtype=int)) == 1


def test_half_half_grid_two_components():
    raster = np.zeros((50, 50), dtype=int)
    raster[:, 25:] = 1
    assert X.count_components(raster) == 2


def test_checkerboard_2x2_blocks_625_components():
    blocks = np.add.outer(np.arange(25), np.arange(25)) % 2
    raster = np.kron(blocks, np.ones((2, 2), dtype=int))
    assert raster.shape == (50, 50)
    assert X.count_components(raster, connectivity=4) == 625
    assert union_find_components(raster, 4) == 625


@pytest.mark.parametrize("connectivity", [4, 8])
def test_flood_fill_matches_union_find_on_random_grids(connectivity):
    rng = np.random.default_rng(99)
    for _ in range(100):
        classes = rng.integers(2, 6)
        raster = rng.integers(0, classes, size=(50, 50))
        assert X.count_components(raster, connectivity) == \
            union_find_components(raster, connectivity)


def test_fragmentation_report(rng):
    ts = random_triplets(rng, 6)
    rep = X.fragmentation(threshold_model(0.5), ts, resolution=(20, 20))
    assert rep.n_triplets == 6
    assert all(c >= 1 for c in rep.per_triplet_counts)
    assert rep.mean == pytest.approx(np.mean(rep.per_triplet_counts))


# ---- margins ----


def test_margin_axis_aligned_crossing():
    rep = X.margins(threshold_model(0.5), np.array([[0.2, 0.3]]), n_directions=1,
                    max_radius=1.0, tolerance=1e-6, seed=0)
    # override directions by monkeypatching is heavier than calling the
    # bracketing path directly with a fixed direction via a 1-direction report;
    # instead check the generic contract: minimum distance to the boundary
    # along the sampled direction is >= the straight-line distance 0.3
    assert rep.per_point_mean_margins[0] >= 0.3 - 1e-5


def test_margin_hand_cases_fixed_directions(monkeypatch):
    import dbatlas.metrics as metrics_mod

    def fixed_dirs(rng, count, dim):
        base = np.array([[1.0, 0.0], [0.0, 1.0], [np.sqrt(0.5), np.sqrt(0.5)]])
        return np.tile(base, (count // 3 + 1, 1))[:count]

    monkeypatch.setattr(metrics_mod, "random_directions", fixed_dirs)
    rep = X.margins(threshold_model(0.5), np.array([[0.2, 0.3]]), n_directions=3,
                    max_radius=2.0, tolerance=1e-6, seed=0)
    per_ray = np.array(rep.per_point_mean_margins) * 3  # mean over 3 directions
    # direction (1,0): crossing at 0.3; (0,1): censored at 2.0; diagonal: 0.3*sqrt(2)
    expected = 0.3 + 2.0 + 0.3 * np.sqrt(2)
    assert per_ray[0] == pytest.approx(expected, abs=1e-4)
    assert rep.fraction_censored == pytest.approx(1 / 3)


def test_margin_bisection_brackets_boundary(rng):
    # monotonicity: just inside the returned distance the label is unchanged,
    # just outside it has flipped (single-direction reports so the sampled
    # direction is reconstructible)
    from dbatlas.seeding import derive_seed

    model = M.init_model(M.ModelSpec("mlp", 6, 1, 4, 3, init_seed=2))
    pts = rng.random((20, 4))
    tol = 1e-4

    def labels_of(Z):
        return M.batched_logits(model, Z).argmax(axis=1)

    base = labels_of(pts)
    checked = 0
    for i in range(20):
        r1 = X.margins(model, pts[i : i + 1], n_directions=1, max_radius=2.0,
                       tolerance=tol, seed=3)
        s = r1.per_point_mean_margins[0]
        if s >= 2.0:   # censored
            continue
        d = X.random_directions(np.random.default_rng(derive_seed(3, "margins")), 1, 4)[0]
        assert labels_of((pts[i] + (s - tol) * d)[None])[0] == base[i]
        assert labels_of((pts[i] + (s + tol) * d)[None])[0] != base[i]
        checked += 1
    assert checked >= 3


def test_margins_validation():
    with pytest.raises(Exception):
        X.margins(threshold_model(0.5), np.zeros((2, 2)), max_radius=-1.0)


# ---- error breakdown ----


def make_noisy(n=100, classes=5, dims=4, rate=0.2):
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(classes), n // classes)
    ds = Dataset(rng.random((n, dims)), labels, labels.copy(), np.zeros(n, bool),
                 "train", DatasetMeta("t", 0, classes))
    return inject_label_noise(ds, rate, seed=1)


def test_breakdown_clean_dataset_noisy_is_null():
    ds = gen_synthetic("blobs", 20, 2, 4, 0.05, seed=2)
    out = X.error_breakdown(constant_model(0, 2), ds)
    assert out["noisy_subset"] is None


def test_breakdown_true_label_oracle_model():
    ds = make_noisy()

    def oracle(X_):
        # predicts the true label perfectly (lookup by row identity)
        idx = [np.flatnonzero((ds.inputs == row).all(axis=1))[0] for row in np.asarray(X_)]
        return np.eye(ds.num_classes)[ds.true_labels[idx]] * 10
    out = X.error_breakdown(oracle, ds)
    assert out["clean_subset"] == 0.0
    assert out["noisy_subset"] == 1.0
    assert out["overall"] == pytest.approx(0.2)


def test_breakdown_constant_model_on_balanced_set():
    ds = gen_synthetic("blobs", 30, 10, 4, 0.05, seed=3)
    out = X.error_breakdown(constant_model(0, 10), ds)
    assert out["overall"] == pytest.approx(0.9)
