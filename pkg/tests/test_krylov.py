import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from pistonlub.assembly import BoundaryCondition, DiaSystem, assemble, expand_dense, stack
from pistonlub.geometry import (FilmMesh, KinematicState, PumpConfig,
                                film_thickness, film_thickness_rate)
from pistonlub.krylov import (Breakdown, DimensionMismatch, Preconditioner,
                              Variant, ZeroDiagonal,
                              build_preconditioner, dot, omega_sweep,
                              default_omega_grid, pcg_solve, spmv, tree_sum,
                              write_residual_csv)

CFG = PumpConfig()
VARIANTS = ["jacobian", "assor1", "assor2", "ssor"]


def system(nt=12, ny=10, e=(0.4e-6, -0.3e-6, -0.5e-6, 0.2e-6), seed=None):
    mesh = FilmMesh(nt, ny, 0.04)
    if seed is not None:
        rng = np.random.default_rng(seed)
        e = rng.uniform(-2e-6, 2e-6, 4)
        edot = rng.uniform(-1e-4, 1e-4, 4)
    else:
        edot = (1e-5, -2e-5, 0.0, 3e-5)
    s = KinematicState(np.array(e, float), np.array(edot, float))
    h = film_thickness(mesh, s, CFG)
    hd = film_thickness_rate(mesh, s, CFG)
    return assemble(mesh, h, hd, 0.63, CFG.oil_viscosity, BoundaryCondition(10e6))


def diagonal_system(nt=6, m=4, d=None):
    n = nt * m
    d = np.linspace(1.0, 3.0, n) if d is None else d
    z = np.zeros
    return DiaSystem(nt, m, d, z(n - m), z(n - m), z(m), z(m), z(n - nt), z(n - nt),
                     np.arange(1.0, n + 1))


def rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


# ---------------------------------------------------------------- reductions

@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_tree_sum_close_to_sum(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    assert tree_sum(x) == pytest.approx(np.sum(x), abs=1e-12 * np.abs(x).sum())


def test_tree_sum_independent_of_batching():
    x = np.random.default_rng(1).standard_normal((9, 1237))
    rows = tree_sum(x)
    for k in range(9):
        assert rows[k] == tree_sum(x[k])
        assert dot(x[k], x[k]) == dot(x, x)[k]


def test_dot_equals_tree_of_products():
    a, b = np.random.default_rng(2).standard_normal((2, 3, 101))
    assert np.array_equal(dot(a, b), tree_sum(a * b))


# ---------------------------------------------------------------- spmv

def test_spmv_identity_and_zero():
    s = diagonal_system(d=np.ones(24))
    x = np.random.default_rng(0).standard_normal(24)
    assert np.array_equal(spmv(s, x), x)
    assert np.all(spmv(system(), np.zeros(96)) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_spmv_matches_dense(seed):
    s = system(seed=seed)
    A, _ = expand_dense(s)
    x = np.random.default_rng(seed).standard_normal(s.n)
    assert rel(spmv(s, x), A @ x) <= 1e-13


def test_spmv_batched():
    a, b = system(seed=1), system(seed=2)
    x = np.random.default_rng(3).standard_normal((2, a.n))
    y = spmv(stack([a, b]), x)
    assert np.array_equal(y[0], spmv(a, x[0]))
    assert np.array_equal(y[1], spmv(b, x[1]))


def test_spmv_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        spmv(system(), np.zeros(5))


# ---------------------------------------------------------------- preconditioners

DENSE = {"assor1": oracle.assor1_inverse, "assor2": oracle.assor2_inverse,
         "ssor": oracle.ssor_inverse}


@pytest.mark.parametrize("variant", ["assor1", "assor2", "ssor"])
@pytest.mark.parametrize("w", [0.4, 1.0, 1.8])
def test_preconditioner_matches_dense(variant, w):
    s = system(12, 10)
    A, _ = expand_dense(s)
    Minv = DENSE[variant](A, w)
    r = np.random.default_rng(7).standard_normal(s.n)
    z = build_preconditioner(s, variant, w)(r)
    assert rel(z, Minv @ r) <= 1e-12


def test_jacobian_is_inverse_diagonal():
    s = system()
    r = np.random.default_rng(0).standard_normal(s.n)
    assert np.array_equal(build_preconditioner(s, "jacobian")(r), r * (1.0 / s.AP))


@pytest.mark.parametrize("w", [0.5, 1.0, 1.5])
def test_diagonal_matrix_limits(w):
    s = diagonal_system()
    r = np.random.default_rng(0).standard_normal(s.n)
    z2 = build_preconditioner(s, "assor2", w)(r)
    z1 = build_preconditioner(s, "assor1", w)(r)
    assert np.allclose(z2, w * (2 - w) * r / s.AP, rtol=1e-15)
    assert np.allclose(z1, w * (2 - w) * r / s.AP, rtol=1e-15)
    if w == 1.0:
        assert np.array_equal(z2, build_preconditioner(s, "jacobian")(r))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.9))
def test_assor2_symmetric(seed, w):
    s = system(seed=seed % 17)
    pc = build_preconditioner(s, "assor2", w)
    a, b = np.random.default_rng(seed).standard_normal((2, s.n))
    lhs, rhs = float(np.dot(pc(a), b)), float(np.dot(a, pc(b)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_preconditioner_guards():
    with pytest.raises(ValueError):
        build_preconditioner(system(), "assor2", 2.0)
    s = diagonal_system(d=np.r_[0.0, np.ones(23)])
    with pytest.raises(ZeroDiagonal):
        build_preconditioner(s, "jacobian")


# ---------------------------------------------------------------- PCG

def test_identity_converges_in_one_iteration():
    s = diagonal_system(d=np.ones(24))
    x, rep = pcg_solve(s, build_preconditioner(s, "jacobian"), tol=1e-12)
    assert rep.iterations == 1 and np.allclose(x, s.S)


def test_exact_start_needs_no_iterations():
    s = system()
    A, S = expand_dense(s)
    x, rep = pcg_solve(s, build_preconditioner(s, "jacobian"),
                       x0=np.linalg.solve(A, S), tol=1e-8)
    assert rep.iterations == 0 and rep.converged
    assert len(rep.residual_history) == 1


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", range(3))
def test_pcg_matches_direct_solve(variant, seed):
    s = system(seed=seed)
    A, S = expand_dense(s)
    x, rep = pcg_solve(s, build_preconditioner(s, variant, 1.6), tol=1e-10)
    ref = np.linalg.solve(A, S)
    assert rep.converged
    assert np.abs(x - ref).max() <= 1e-8 * np.abs(ref).max()
    assert rep.spmv_count == rep.iterations + 1
    assert len(rep.residual_history) == rep.iterations + 1


def test_a_norm_error_decreases():
    s = system(seed=4)
    A, S = expand_dense(s)
    ref = np.linalg.solve(A, S)
    errs = []
    for k in range(1, 25):
        x, _ = pcg_solve(s, build_preconditioner(s, "assor2", 1.4), tol=1e-300,
                         max_iter=k)
        err = x - ref
        errs.append(float(err @ A @ err))
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))


def test_all_variants_agree():
    s = system(20, 16, seed=9)
    tol = 1e-9
    xs = [pcg_solve(s, build_preconditioner(s, v, 1.5), tol=tol)[0] for v in VARIANTS]
    for x in xs[1:]:
        assert rel(x, xs[0]) <= 10 * tol


def test_non_spd_breakdown():
    s = diagonal_system(d=np.r_[-1.0, np.ones(23)])
    pc = Preconditioner(Variant.JACOBIAN, 1.0, s, np.abs(1.0 / s.AP))
    with pytest.raises(Breakdown):
        pcg_solve(s, pc, tol=1e-12)


def test_max_iter_returns_best_iterate():
    s = system(20, 16)
    x, rep = pcg_solve(s, build_preconditioner(s, "jacobian"), tol=1e-14, max_iter=3)
    assert not rep.converged and rep.iterations == 3
    assert rep.final_relative_residual == min(rep.residual_history)


def test_omega_sweep_grid(tmp_path):
    grid = default_omega_grid()
    assert grid[0] == 0.28 and grid[-1] == 1.9 and len(grid) == 10
    s = system(20, 16)
    out = omega_sweep(s, "assor2", [1.2], tol=1e-6)
    assert len(out) == 1 and out[0][0] == 1.2
    _, rep = pcg_solve(s, build_preconditioner(s, "assor2", 1.2), tol=1e-6)
    write_residual_csv(rep.residual_history, tmp_path / "r.csv")
    lines = open(tmp_path / "r.csv").read().splitlines()
    assert lines[0] == "iteration,relative_residual"
    assert len(lines) == rep.iterations + 2
