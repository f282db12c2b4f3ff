import warnings

import numpy as np
import pytest

from elastoscope.fields import Grid, ScalarField, TensorField, VectorField, divergence, jacobian
from elastoscope.material import MaterialMap
from elastoscope.pde import (
    CompatibilityWarning,
    DivergenceLoad,
    ForwardProblem,
    build_operator,
    gradient_projection,
    solve_adjoint,
    solve_adjoint_direct,
    solve_forward,
    solve_poisson_vector,
)
from elastoscope.phantoms import ETA_BG, MU_BG, Drive, build_phantom, generate_data, get_phantom
from elastoscope.reconstruction import frechet_gradient, random_directions

DRIVE = Drive()
K = np.pi / 10


def _homogeneous_problem(n, g=None, sides=("bottom",), eta=ETA_BG):
    grid = Grid(n, n, dirichlet_sides=sides)
    mat = MaterialMap.homogeneous(grid, MU_BG, eta)
    gv = VectorField.constant(grid, DRIVE.g) if g is None else g(grid)
    return ForwardProblem(grid, mat, DRIVE.omega, DRIVE.rho, gv)


def test_zero_data_gives_zero_solution():
    prob = _homogeneous_problem(9, g=VectorField.zeros)
    sol = solve_forward(prob)
    assert np.abs(sol.u.values).max() == 0 and np.abs(sol.p.values).max() == 0


def _mms_error(n):
    c = complex(MU_BG, DRIVE.omega * ETA_BG)

    def u_star(X, Y):
        return K * np.sin(K * X) * np.cos(K * Y), -K * np.cos(K * X) * np.sin(K * Y)

    def body(X, Y):
        u1, u2 = u_star(X, Y)
        s = DRIVE.rho * DRIVE.omega**2 - 2 * c * K**2
        return s * u1 - K * np.sin(K * X), s * u2

    g = Grid(n, n)
    prob = ForwardProblem(g, MaterialMap.homogeneous(g, MU_BG, ETA_BG), DRIVE.omega, DRIVE.rho,
                          VectorField.from_function(g, u_star), VectorField.from_function(g, body))
    sol = solve_forward(prob)
    X, Y = g.mesh()
    p = sol.p.values - np.sum(g.trapezoid_weights() * (sol.p.values - np.cos(K * X))) / (g.lx * g.ly)
    return np.abs(sol.u.values - VectorField.from_function(g, u_star).values).max(), np.abs(p - np.cos(K * X)).max()


def test_manufactured_solution_second_order():
    errs = np.array([_mms_error(n) for n in (17, 33, 65)])
    orders = np.log2(errs[:-1] / errs[1:])
    assert orders[:, 0].min() >= 1.8
    assert errs[-1, 1] < errs[0, 1]


def test_model1_forward_contract():
    g = Grid(33, 33)
    u, sol = generate_data(get_phantom("model1"), g, DRIVE, return_solution=True)
    assert sol.report.converged and sol.report.relative_residual <= 1e-10
    assert sol.div_residual <= 1e-6
    assert np.all(np.isfinite(u.values)) and np.abs(u.values).max() < 10 * np.abs(DRIVE.g).max()
    # oscillatory along the propagation axis
    line = u.values[16, :, 0].real
    assert np.count_nonzero(np.diff(np.signbit(line))) >= 4


def test_linear_in_boundary_data():
    prob = _homogeneous_problem(17)
    prob2 = ForwardProblem(prob.grid, prob.material, prob.omega, prob.rho, prob.g * 2.0)
    u1, u2 = solve_forward(prob).u.values, solve_forward(prob2).u.values
    assert np.linalg.norm(u2 - 2 * u1) <= 1e-10 * np.linalg.norm(u2)


def test_divergence_decreases_with_refinement():
    # the continuity row is solved exactly; the stabilization leaves an O(h^2) divergence in u itself
    out = []
    for n in (17, 33, 65):
        g = Grid(n, n)
        u = generate_data(get_phantom("homogeneous"), g, DRIVE)
        m = g.interior_mask(0.5)
        out.append(np.abs(divergence(u).values[m]).max() / np.abs(jacobian(u)[m]).max())
    assert out[0] > out[1] > out[2]


def test_incompatible_dirichlet_data_projected_with_warning():
    prob = _homogeneous_problem(9, lambda g: VectorField.from_function(g, lambda X, Y: (X, Y)),
                                ("bottom", "top", "left", "right"))
    with pytest.warns(CompatibilityWarning):
        sol = solve_forward(prob)
    assert sol.flux_defect > 0


def test_zero_residual_gives_zero_adjoint():
    prob = _homogeneous_problem(9)
    sol = solve_adjoint(prob, VectorField.zeros(prob.grid))
    assert np.abs(sol.u.values).max() == 0 and np.abs(sol.p.values).max() == 0


def test_adjoint_reuse_matches_conjugated_assembly():
    g = Grid(17, 17)
    prob = DRIVE.problem(build_phantom("model1", g))
    r = VectorField(prob.grid, np.random.default_rng(0).standard_normal(g.shape + (2,)) * (1 + 1j))
    a, b = solve_adjoint(prob, r).u.values, solve_adjoint_direct(prob, r).u.values
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12 * np.abs(b).max())


def test_reciprocity_with_conjugated_operator():
    g = Grid(17, 17)
    prob = DRIVE.problem(build_phantom("model1", g))
    A = build_operator(prob).A
    A_adj = build_operator(prob, conjugate=True).A
    rng = np.random.default_rng(1)
    x = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
    y = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
    lhs = np.vdot(y, A @ x)
    rhs = np.vdot(A_adj @ y, x)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_elastic_adjoint_equals_forward_operator():
    base = _homogeneous_problem(9)
    prob = ForwardProblem(base.grid, base.material, base.omega, base.rho, base.g, coef=np.full(base.grid.shape, MU_BG + 0j))
    A, A_adj = build_operator(prob).A, build_operator(prob, conjugate=True).A
    assert abs(A - A_adj).max() == 0


def test_adjoint_identity_with_sensitivity_problem():
    g = Grid(33, 33)
    truth = build_phantom("model1", g)
    u_m = generate_data(get_phantom("model1"), g, DRIVE, refine=2)
    init = MaterialMap.homogeneous(g, MU_BG, ETA_BG).with_bounds(truth.c1, truth.c2)
    prob = DRIVE.problem(init)
    u0 = solve_forward(prob).u
    r = u0 - u_m
    v = solve_adjoint(prob, r).u
    w = g.trapezoid_weights()
    G = frechet_gradient(u0, v, DRIVE.omega, init.interior_mask)
    for dmu, deta in random_directions(init, 3, seed=5):
        load = DivergenceLoad(ScalarField(g, dmu + 1j * DRIVE.omega * deta), u0)
        u1 = solve_forward(ForwardProblem(prob.grid, init, DRIVE.omega, DRIVE.rho, None, load)).u
        lhs = np.real(np.sum(w[..., None] * u1.values * np.conj(r.values)))
        assert lhs == pytest.approx(G.dot(dmu, deta, w), rel=1e-6)


def test_poisson_zero_rhs():
    g = Grid(9, 9)
    assert np.abs(solve_poisson_vector(VectorField.zeros(g), "neumann").values).max() < 1e-14
    assert np.abs(solve_poisson_vector(VectorField.zeros(g), "dirichlet").values).max() == 0


def _neumann_error(n):
    g = Grid(n, n)
    X, Y = g.mesh()
    fstar = np.stack([np.cos(K * X), np.cos(K * Y)], axis=-1)
    rhs = VectorField(g, -K**2 * fstar)
    flux = TensorField(g, np.stack([-K * np.sin(K * X), 0 * X, -K * np.sin(K * Y)], axis=-1))
    f = solve_poisson_vector(rhs, "neumann", flux).values
    w = g.trapezoid_weights()[..., None]
    ref = fstar - np.sum(w * fstar, axis=(0, 1)) / np.sum(w)
    return np.abs(f - ref).max()


def test_poisson_neumann_manufactured_order():
    errs = np.array([_neumann_error(n) for n in (17, 33, 65)])
    assert np.log2(errs[:-1] / errs[1:]).min() >= 1.8


def test_poisson_dirichlet_series():
    g = Grid(65, 65, 1.0, 1.0)
    f = solve_poisson_vector(VectorField.constant(g, (1.0, 1.0)), "dirichlet").values[..., 0]
    m = np.arange(1, 400, 2)
    M, N = np.meshgrid(m, m, indexing="ij")
    for i, j in ((32, 32), (16, 16), (16, 48), (8, 40)):
        x, y = g.x[i], g.y[j]
        series = -np.sum(16 / (np.pi**4 * M * N * (M**2 + N**2)) * np.sin(M * np.pi * x) * np.sin(N * np.pi * y))
        assert abs(f[i, j].real - series) <= 1e-3 * abs(series)


def test_gradient_projection_recovers_gradient():
    g = Grid(33, 33)
    X, Y = g.mesh()
    p = np.cos(K * X) * np.cos(K * Y)
    q = VectorField(g, np.stack([-K * np.sin(K * X) * np.cos(K * Y), -K * np.cos(K * X) * np.sin(K * Y)], axis=-1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = gradient_projection(q).values
    w = g.trapezoid_weights()
    ref = p - np.sum(w * p) / np.sum(w)
    assert np.abs(out - ref).max() < 5e-3
