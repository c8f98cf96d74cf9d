import numpy as np
import pytest

from ugrid.grid import full_interior_mask
from ugrid.multigrid import dense_solve
from ugrid.net import init_params, zero_params
from ugrid.solver import (CONVERGED, DIVERGED, MAX_ITERS, SolveConfig, jacobi_solve, mg_solve,
                          read_trace_csv, solve, ugrid_iterate, write_trace_csv)
from ugrid.stencils import helmholtz, initial_guess, poisson, residual, smooth

from conftest import random_problem


def _square_poisson(n, rng):
    mask = full_interior_mask(n)
    b = np.where(mask != 0, 0.0, rng.uniform(-1, 1, (n, n)))
    return poisson(np.zeros((n, n)), b, mask)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0)
    with pytest.raises(ValueError):
        SolveConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolveConfig(nu1=-1)


def test_zero_params_is_plain_jacobi(rng):
    p = random_problem("cdr", 33, rng)
    u = rng.normal(size=(33, 33))
    cfg = SolveConfig(nu1=2, nu2=3)
    ref = u
    for _ in range(5):
        ref = smooth(p, ref)
    assert np.array_equal(ugrid_iterate(u, p, zero_params(depth=3, channels=2), cfg), ref)


def test_all_zero_stays_zero():
    z = np.zeros((17, 17))
    p = poisson(z, z, full_interior_mask(17))
    u, rep = solve(p, init_params(depth=3, channels=2))
    assert np.all(u == 0.0)
    assert rep.absolute and rep.terminated == CONVERGED and rep.iterations == 1


def test_zero_params_hit_max_iters(rng):
    _, rep = solve(_square_poisson(65, rng), zero_params(depth=4, channels=2))
    assert rep.terminated == MAX_ITERS and rep.iterations == 64
    assert rep.final_error > 1e-4


@pytest.mark.parametrize("family", ["poisson", "helmholtz", "cdr"])
def test_exact_warm_start(family, rng):
    p = random_problem(family, 17, rng)
    u_star = dense_solve(p)
    for run in (lambda: solve(p, init_params(depth=3, channels=2), u0=u_star),
                lambda: jacobi_solve(p, u0=u_star), lambda: mg_solve(p, u0=u_star)):
        _, rep = run()
        assert rep.terminated == CONVERGED and rep.iterations == 1


def test_single_interior_one_sweep():
    mask = np.zeros((5, 5))
    mask[2, 2] = 1
    p = poisson(np.zeros((5, 5)), np.where(mask != 0, 0.0, 1.0), mask)
    _, rep = jacobi_solve(p)
    assert rep.terminated == CONVERGED and rep.iterations == 1 and rep.final_error == 0.0


def test_degenerate_rhs_absolute_threshold(rng):
    z = np.zeros((17, 17))
    p = poisson(z, z, full_interior_mask(17))
    u0 = rng.normal(size=(17, 17)) * 1e-3
    _, rep = jacobi_solve(p, SolveConfig(tol=1e-4), u0=u0)
    assert rep.absolute
    assert rep.terminated == CONVERGED and rep.final_error <= 1e-4 * 17
    assert rep.trace[-2] > 1e-4 * 17


def test_diverged_reported():
    n = 9
    z = np.zeros((n, n))
    b = np.where(full_interior_mask(n) != 0, 0.0, 1.0)
    p = helmholtz(z, b, full_interior_mask(n), np.full((n, n), 2.0))
    _, rep = jacobi_solve(p)
    assert rep.terminated == DIVERGED


def test_trace_monotone_for_mg(rng):
    _, rep = mg_solve(_square_poisson(65, rng))
    assert rep.converged
    assert all(b < a for a, b in zip(rep.trace, rep.trace[1:]))
    assert len(rep.cumulative_ms) == rep.iterations


def test_trace_csv(tmp_path, rng):
    _, rep = jacobi_solve(_square_poisson(17, rng), SolveConfig(max_iters=5))
    write_trace_csv(tmp_path / "t.csv", rep)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,relative_residual,cumulative_ms"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [1, 2, 3, 4, 5]
    assert read_trace_csv(tmp_path / "t.csv") == rep.trace


def test_initial_guess_respects_boundary(rng):
    p = random_problem("poisson", 17, rng)
    u = initial_guess(p)
    assert np.all(u[p.mask != 0] == 0.0)
    assert np.array_equal(u[p.mask == 0], p.b[p.mask == 0])


def test_zero_params_trace_matches_jacobi(rng):
    p = _square_poisson(33, rng)
    cfg = SolveConfig(max_iters=10)
    _, ug = solve(p, zero_params(depth=3, channels=2), cfg)
    _, jac = jacobi_solve(p, SolveConfig(max_iters=40))
    assert ug.trace == jac.trace[3::4]


def test_boundary_exact_every_iteration(rng):
    p = random_problem("helmholtz", 33, rng)
    params = init_params(depth=3, channels=2, seed=1)
    u = initial_guess(p)
    for _ in range(5):
        u = ugrid_iterate(u, p, params)
        assert np.array_equal(u[p.mask == 0], p.b[p.mask == 0])
        assert np.all(np.isfinite(u))


def test_stagnated_solve_matches_dense(rng):
    p = random_problem("cdr", 9, rng)
    u, rep = jacobi_solve(p, SolveConfig(tol=1e-13, max_iters=5000))
    assert rep.converged
    assert np.linalg.norm(u - dense_solve(p)) / np.linalg.norm(dense_solve(p)) <= 1e-8


def test_iterate_keeps_exact_solution(rng):
    p = random_problem("poisson", 17, rng)
    u = ugrid_iterate(dense_solve(p), p, init_params(depth=3, channels=4))
    assert np.linalg.norm(residual(p, u)) <= 1e-9


def test_jacobi_trace_monotone(rng):
    _, rep = jacobi_solve(_square_poisson(17, rng), SolveConfig(max_iters=300))
    assert all(b <= a for a, b in zip(rep.trace, rep.trace[1:]))
