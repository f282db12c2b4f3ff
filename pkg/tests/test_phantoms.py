import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from elastoscope.fields import Grid, VectorField
from elastoscope.material import MaterialMap
from elastoscope.phantoms import (
    CATALOG,
    DRIVE_HZ,
    ETA_BG,
    MU_BG,
    Drive,
    NoiseSpec,
    add_noise,
    build_phantom,
    edge_response_width,
    generate_data,
    get_phantom,
    load_catalog,
    quadrant_bounds,
    quadrant_masks,
    refine_grid,
    relative_error,
    save_catalog,
)


def test_background_values():
    assert np.sqrt(MU_BG) == pytest.approx(200.0)
    assert 2 * np.pi * DRIVE_HZ * ETA_BG / MU_BG == pytest.approx(0.15)


def test_model1_layout():
    g = Grid(65, 65)
    m = build_phantom("model1", g)
    X, Y = g.mesh()
    inside = (X - 5) ** 2 + (Y - 5) ** 2 <= 1.5**2
    assert np.all(m.mu[inside] == 3 * MU_BG) and np.all(m.eta[inside] == 2 * ETA_BG)
    assert np.all(m.mu[~inside] == MU_BG) and np.all(m.eta[~inside] == ETA_BG)


@pytest.mark.parametrize("pid", sorted(CATALOG))
def test_area_and_support(pid):
    ph = get_phantom(pid)
    areas = []
    for n in (33, 65, 129):
        g = Grid(n, n)
        m = ph.sample(g)
        assert np.all(m.mu[~m.interior_mask] == ph.mu_bg) and np.all(m.eta[~m.interior_mask] == ph.eta_bg)
        exact = sum(i.area for i in ph.inclusions)
        inc = m.mu != ph.mu_bg
        areas.append((abs(inc.sum() * g.hx * g.hy - exact), g.hx))
    for err, h in areas:
        # O(h): at most a band of width h along the perimeters
        perim = sum(2 * np.pi * max(i.semi_axes) for i in ph.inclusions)
        assert err <= perim * h + 1e-12


def test_unknown_phantom():
    with pytest.raises(ValueError, match="unknown phantom"):
        get_phantom("model9")


def test_catalog_roundtrip(tmp_path):
    save_catalog(tmp_path / "cat.json")
    assert load_catalog(tmp_path / "cat.json") == CATALOG


def test_refine_grid_nests():
    g = Grid(9, 5, dirichlet_sides=("bottom",))
    f = refine_grid(g, 2)
    assert (f.nx, f.ny) == (17, 9) and np.allclose(f.x[::2], g.x) and f.dirichlet_sides == g.dirichlet_sides


def test_generate_data_linear_in_drive():
    g = Grid(17, 17)
    u1 = generate_data(get_phantom("model1"), g, Drive(g=(0.3, 0.3)))
    u2 = generate_data(get_phantom("model1"), g, Drive(g=(0.6, 0.6)))
    assert np.linalg.norm(u2.values - 2 * u1.values) <= 1e-10 * np.linalg.norm(u2.values)


def test_generate_data_deterministic_and_divergence_controlled():
    g = Grid(17, 17)
    u, sol = generate_data(get_phantom("model2"), g, Drive(), refine=2, return_solution=True)
    again = generate_data(get_phantom("model2"), g, Drive(), refine=2)
    assert u.values.tobytes() == again.values.tobytes()
    assert sol.div_residual <= 1e-6 and u.grid.dirichlet_sides == ("bottom",)


def test_generate_data_needs_phantom_for_refinement():
    g = Grid(9, 9)
    with pytest.raises(ValueError):
        generate_data(build_phantom("model1", g), g, Drive(), refine=2)


def _field(g, seed=0):
    rng = np.random.default_rng(seed)
    return VectorField(g, rng.standard_normal(g.shape + (2,)) + 1j * rng.standard_normal(g.shape + (2,)))


def test_zero_noise_is_identity():
    u = _field(Grid(9, 9))
    assert add_noise(u, NoiseSpec(0.0)) is u


def test_noise_level_and_confinement():
    g = Grid(129, 129)
    u = _field(g, 1)
    region = quadrant_masks(g)["top_right"]
    noisy = add_noise(u, NoiseSpec(0.03, region, seed=7))
    assert np.array_equal(noisy.values[~region], u.values[~region])
    d = noisy.values[region] - u.values[region]
    ratio = np.sqrt(np.mean(np.abs(d) ** 2)) / np.sqrt(np.mean(np.abs(u.values[region]) ** 2))
    assert ratio == pytest.approx(0.03, rel=0.1)
    again = add_noise(u, NoiseSpec(0.03, region, seed=7))
    assert again.values.tobytes() == noisy.values.tobytes()


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(1.5)
    with pytest.raises(ValueError):
        add_noise(_field(Grid(5, 5)), NoiseSpec(0.1, np.ones((4, 4), dtype=bool)))


def test_quadrants_partition():
    g = Grid(65, 65)
    q = quadrant_masks(g)
    tr = q.pop("top_right")
    assert not any(np.any(tr & m) for m in q.values())
    assert np.all(tr | q["top_left"] | q["bottom_left"] | q["bottom_right"])
    for name, m in q.items():
        i0, i1, j0, j1 = quadrant_bounds(g, name)
        block = np.zeros(g.shape, dtype=bool)
        block[i0:i1 + 1, j0:j1 + 1] = True
        assert np.array_equal(block, m)


def test_relative_error_examples():
    g = Grid(33, 33)
    t = build_phantom("model1", g)
    assert relative_error(t, t) == (0.0, 0.0)
    scaled = MaterialMap(g, 1.1 * t.mu, 1.1 * t.eta, 1.1 * t.mu0, 1.1 * t.eta0,
                         np.ones(g.shape, dtype=bool), t.c1, t.c2)
    e = relative_error(scaled, t)
    assert e[0] == pytest.approx(0.1, rel=1e-12) and e[1] == pytest.approx(0.1, rel=1e-12)


@given(st.integers(0, 10_000))
def test_relative_error_brute_force(seed):
    g = Grid(17, 17)
    t = build_phantom("model1", g)
    rng = np.random.default_rng(seed)
    hit = np.zeros(g.shape, dtype=bool)
    idx = rng.choice(np.flatnonzero(t.interior_mask), size=int(0.1 * g.n_nodes), replace=False)
    hit.flat[idx] = True
    rec = t.replace(t.mu + hit * t.mu.mean(), t.eta + hit * t.eta.mean(), project=False)
    num = sum((rec.mu.flat[k] - t.mu.flat[k]) ** 2 for k in range(g.n_nodes))
    den = sum(t.mu.flat[k] ** 2 for k in range(g.n_nodes))
    assert relative_error(rec, t)[0] == pytest.approx(np.sqrt(num / den), rel=1e-12)


def test_edge_width_tracks_blur():
    g = Grid(129, 129)
    img = build_phantom("model1", g).mu
    sharp = edge_response_width(img, g, (5.0, 5.0), 1.5)
    blurred = edge_response_width(gaussian_filter(img, 4.0), g, (5.0, 5.0), 1.5)
    assert sharp <= 2 * g.hx < blurred
    flat = edge_response_width(np.full(g.shape, MU_BG), g, (5.0, 5.0), 1.5)
    assert flat == pytest.approx(4.0)
