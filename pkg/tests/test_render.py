import itertools
from pathlib import Path

import numpy as np
import pytest

from dbatlas import models as M
from dbatlas import plane as P
from dbatlas import render as R
from dbatlas.errors import ConfigurationError

GOLDEN = Path(__file__).parent / "golden"


def label_grid(labels, confidence, na, nb):
    return P.LabelGrid(labels=np.asarray(labels, dtype=np.int64),
                       confidence=np.asarray(confidence, dtype=np.float64),
                       resolution=(na, nb), alpha_range=(-0.1, 1.1),
                       beta_range=(-0.1, 1.1), model_id="test")


def test_palette_distinctness_enforced():
    with pytest.raises(ConfigurationError):
        R.Palette(colors=((10, 10, 10), (20, 15, 12)))


def test_default_palette_valid():
    pal = R.Palette()
    assert len(pal.colors) == 10
    assert pal.colors[6] == (255, 40, 40)    # frog: red
    assert pal.colors[2] == (40, 200, 40)    # bird: green
    assert pal.colors[1] == (255, 150, 20)   # automobile: orange


def test_constant_grid_solid_color():
    lg = label_grid([3] * 12, [0.9] * 12, 4, 3)
    img = R.render(lg)
    assert img.shape == (3, 4, 3)
    assert (img == np.array(R.Palette().colors[3], dtype=np.uint8)).all()


def test_2x2_exact_palette_no_shading():
    lg = label_grid([0, 1, 1, 0], [0.6, 0.7, 0.8, 0.9], 2, 2)
    img = R.render(lg)
    pal = R.Palette().colors
    # row 0 of the image is the top = highest beta = second raster row
    assert tuple(img[0, 0]) == pal[1]
    assert tuple(img[0, 1]) == pal[0]
    assert tuple(img[1, 0]) == pal[0]
    assert tuple(img[1, 1]) == pal[1]


def test_shading_maps_confidence_range():
    lg = label_grid([0, 0], [0.5, 1.0], 2, 1)  # C=10 -> conf floor 0.1
    img = R.render(lg, options=R.RenderOptions(shade_by_confidence=True))
    base = np.array(R.Palette().colors[0], dtype=np.float64)
    lo = 0.35 + 0.65 * (0.5 - 0.1) / 0.9
    assert tuple(img[0, 0]) == tuple(np.floor(base * lo + 0.5).astype(np.uint8))
    assert tuple(img[0, 1]) == tuple(np.floor(base * 1.0 + 0.5).astype(np.uint8))


def test_shading_never_collides_across_classes(rng):
    pal = R.Palette()
    confs = np.linspace(0.1, 1.0, 200)
    shaded = []
    for c, rgb in enumerate(pal.colors):
        fac = 0.35 + 0.65 * (confs - 0.1) / 0.9
        px = np.floor(np.outer(fac, rgb) + 0.5).astype(int)
        shaded.append({tuple(p) for p in px})
    for a, b in itertools.combinations(range(10), 2):
        assert not (shaded[a] & shaded[b])


def test_missing_palette_class_rejected():
    lg = label_grid([11], [0.9], 1, 1)
    with pytest.raises(ConfigurationError):
        R.render(lg)


def test_markers_drawn_deterministically():
    lg = label_grid([0] * 2500, [1.0] * 2500, 50, 50)
    opts = R.RenderOptions(markers=(R.Marker(0.0, 0.0), R.Marker(1.0, 1.0, mislabeled=True)))
    a = R.render(lg, options=opts)
    b = R.render(lg, options=opts)
    assert np.array_equal(a, b)
    assert (a == 0).any()  # some marker pixels present


def test_upscale_nearest_neighbor():
    lg = label_grid([0, 1, 2, 3], [1.0] * 4, 2, 2)
    img = R.render(lg, options=R.RenderOptions(upscale=3))
    assert img.shape == (6, 6, 3)
    assert (img[:3, :3] == img[0, 0]).all()


# ---- PPM ----


def test_ppm_1x1_red_exact_bytes(tmp_path):
    path = tmp_path / "red.ppm"
    R.write_ppm(np.array([[[255, 0, 0]]], dtype=np.uint8), path)
    data = path.read_bytes()
    assert data == b"P6\n1 1\n255\n" + bytes([255, 0, 0])
    assert len(data) == 14


def test_ppm_roundtrip(tmp_path, rng):
    img = (rng.random((7, 5, 3)) * 255).astype(np.uint8)
    path = tmp_path / "img.ppm"
    R.write_ppm(img, path)
    assert np.array_equal(R.read_ppm(path), img)


def test_ppm_50x50_size_arithmetic(tmp_path):
    img = np.zeros((50, 50, 3), dtype=np.uint8)
    path = tmp_path / "grid.ppm"
    R.write_ppm(img, path)
    header = b"P6\n50 50\n255\n"
    assert path.stat().st_size == len(header) + 7500


def tiny_fixture_image():
    """Fixed tiny model + fixed triplet rendered with markers and shading."""
    model = M.init_model(M.ModelSpec("mlp", 5, 1, 8, 4, init_seed=404))
    rng = np.random.default_rng(505)
    t = P.Triplet(rng.random(8), rng.random(8), rng.random(8), (0, 1, 2),
                  "distinct_class", (0, 1, 2))
    frame = P.build_frame(t)
    lg = P.evaluate_grid(model, P.make_grid(frame, (40, 40)))
    (a2, b2), (a3, b3) = frame.anchor_coords()
    opts = R.RenderOptions(markers=(R.Marker(0, 0), R.Marker(a2, b2),
                                    R.Marker(a3, b3, mislabeled=True)),
                           shade_by_confidence=True, upscale=2)
    return R.render(lg, options=opts)


def test_render_golden_bytes(tmp_path):
    img = tiny_fixture_image()
    out = tmp_path / "fixture.ppm"
    R.write_ppm(img, out)
    golden = GOLDEN / "tiny_plane.ppm"
    assert golden.exists(), "golden file missing; regenerate with scripts/make_golden.py"
    assert out.read_bytes() == golden.read_bytes()
