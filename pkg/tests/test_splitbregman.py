import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occseg import grid
from occseg.splitbregman import convex_objective, solve_convex_subproblem

LABELINGS_3X3 = np.array(list(itertools.product((0.0, 1.0), repeat=9))).reshape(-1, 3, 3)


def brute_force_min(r, nu, mode=grid.ANISOTROPIC):
    return min(convex_objective(r, q, nu, mode) for q in LABELINGS_3X3)


def test_sign_rule_without_tv():
    r = np.array([[-1.0, 2.0], [0.5, -0.1]])
    assert np.array_equal(solve_convex_subproblem(r, 0.0), [[1, 0], [0, 1]])


@given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.integers(1, 7))
@settings(max_examples=30)
def test_sign_rule_holds_exactly_at_zero_nu(seed, h, w):
    r = np.random.default_rng(seed).normal(size=(h, w))
    q = solve_convex_subproblem(r, 0.0, 1.0)
    assert np.array_equal(q[r < 0], np.ones((r < 0).sum()))
    assert np.array_equal(q[r > 0], np.zeros((r > 0).sum()))


@pytest.mark.parametrize("nu", [0.0, 0.3, 5.0])
@pytest.mark.parametrize("mode", grid.TV_MODES)
def test_constant_sign_fields(nu, mode):
    assert np.array_equal(solve_convex_subproblem(np.ones((5, 4)), nu, tv_mode=mode), np.zeros((5, 4)))
    assert np.array_equal(solve_convex_subproblem(-np.ones((5, 4)), nu, tv_mode=mode), np.ones((5, 4)))


def test_errors():
    with pytest.raises(ValueError):
        solve_convex_subproblem(np.array([[np.nan]]), 0.1)
    with pytest.raises(ValueError):
        solve_convex_subproblem(np.zeros((2, 2)), -0.1)
    with pytest.raises(ValueError):
        solve_convex_subproblem(np.zeros((2, 2)), 0.1, lam=0.0)


def test_output_in_box_and_shape():
    r = np.random.default_rng(0).normal(size=(9, 11)) * 3
    q = solve_convex_subproblem(r, 0.4, 1.0, sb_inner=30)
    assert q.shape == r.shape and q.min() >= 0 and q.max() <= 1


def test_single_pixel_uses_sign_rule():
    assert solve_convex_subproblem([[-0.2]], 1.0)[0, 0] == 1.0


def test_thresholded_3x3_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(10):
        r = rng.normal(size=(3, 3))
        q = solve_convex_subproblem(r, 0.5, 1.0, sb_inner=300, tol=1e-12)
        binary = (q > 0.5).astype(float)
        assert convex_objective(r, binary, 0.5) - brute_force_min(r, 0.5) < 1e-6


def test_relaxed_objective_not_worse_than_sign_rule():
    rng = np.random.default_rng(2)
    r = rng.normal(size=(16, 16))
    q = solve_convex_subproblem(r, 0.3, 0.6, sb_inner=100)
    assert convex_objective(r, q, 0.3) <= convex_objective(r, (r < 0).astype(float), 0.3) + 1e-9


def test_large_tv_gives_constant_solution():
    # with a heavy TV weight the best labelling is all-in or all-out
    r = np.zeros((6, 6))
    r[:, :2] = -1.0
    r[:, 2:] = 0.2
    q = solve_convex_subproblem(r, 10.0, 20.0, sb_inner=300, tol=1e-12)
    assert np.allclose(q, 1.0, atol=1e-6)


def test_deterministic():
    r = np.random.default_rng(4).normal(size=(10, 10))
    a = solve_convex_subproblem(r, 0.2, 0.4, sb_inner=20)
    b = solve_convex_subproblem(r, 0.2, 0.4, sb_inner=20)
    assert np.array_equal(a, b)


def test_isotropic_objective_uses_isotropic_tv():
    q = np.array([[0.0, 1.0], [1.0, 1.0]])
    r = np.zeros((2, 2))
    assert convex_objective(r, q, 1.0, grid.ISOTROPIC) == pytest.approx(grid.tv_norm(q, grid.ISOTROPIC))
    assert convex_objective(r, q, 1.0) == grid.tv_norm(q)
