import numpy as np
import pytest

from consensus_sos.sdp import (
    CapacityError,
    DataError,
    SdpProblem,
    SdpSolution,
    SolverSettings,
    Status,
    dump_text,
    residuals,
    solve,
)

KKT_TOL = 1e-8


def lambda_min_problem(M):
    """max t s.t. M - t I = X, X PSD."""
    n = M.shape[0]
    p = SdpProblem()
    b = p.add_block(n)
    t = p.add_free(1)
    for i in range(n):
        for j in range(i, n):
            # an off-diagonal term v contributes v * (X_ij + X_ji)
            w = 1.0 if i == j else 0.5
            p.add_equality([(b, i, j, w)], [(t, 1.0)] if i == j else [], M[i, j])
    p.set_objective(free_terms=[(t, 1.0)])
    return p


def char_poly_lambda_min(M):
    (a, b), (_, d) = M
    return 0.5 * ((a + d) - np.sqrt((a - d) ** 2 + 4 * b * b))


def assert_kkt(sol):
    assert sol.status is Status.OPTIMAL
    assert max(sol.residuals) <= KKT_TOL
    for X in sol.block_values:
        assert np.linalg.eigvalsh(X)[0] >= -KKT_TOL


def test_scalar_bound():
    p = SdpProblem()
    b = p.add_block(1)
    t = p.add_free(1)
    p.add_equality([(b, 0, 0, 1.0)], [(t, 1.0)], 1.0)
    p.set_objective(free_terms=[(t, 1.0)])
    sol = solve(p)
    assert_kkt(sol)
    assert sol.free_values[0] == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize(
    "M", [[[2.0, 1.0], [1.0, 2.0]], [[3.0, -0.5], [-0.5, 1.0]], [[1.0, 2.0], [2.0, -1.0]], [[5.0, 0.0], [0.0, 4.0]]]
)
def test_lambda_min_matches_characteristic_polynomial(M):
    M = np.array(M)
    sol = solve(lambda_min_problem(M))
    assert_kkt(sol)
    assert sol.free_values[0] == pytest.approx(char_poly_lambda_min(M), abs=1e-7)


def test_negative_identity_is_infeasible():
    p = SdpProblem()
    b = p.add_block(2)
    p.add_equality([(b, 0, 0, 1.0)], [], -1.0)
    p.add_equality([(b, 1, 1, 1.0)], [], -1.0)
    p.add_equality([(b, 0, 1, 1.0)], [], 0.0)
    sol = solve(p)
    assert sol.status is Status.INFEASIBLE
    check_farkas(p, sol.ray)


def check_farkas(p, u, tol=1e-6):
    """b.u = -1 and sum u_i A_i PSD, A_f^T u = 0: no X >= 0 can satisfy the rows."""
    A, Af, b, C, cf = p.matrices()
    assert float(b @ u) == pytest.approx(-1.0)
    for Ab, n in zip(A, p.block_dims):
        S = (Ab.T @ u).reshape(n, n)
        assert np.linalg.eigvalsh(S)[0] >= -tol * (1 + np.abs(S).max())
    if Af.shape[1]:
        assert np.abs(Af.T @ u).max() <= tol


def test_residuals_zero_at_exact_point():
    p = lambda_min_problem(np.array([[2.0, 1.0], [1.0, 2.0]]))
    X = np.array([[1.0, 1.0], [1.0, 1.0]])
    sol = SdpSolution(Status.OPTIMAL, [X], np.array([1.0]), np.zeros(3), (0, 0, 0))
    assert residuals(p, sol)[0] == 0.0


def test_residuals_recompute_and_perturb():
    p = lambda_min_problem(np.array([[2.0, 1.0], [1.0, 2.0]]))
    sol = solve(p)
    assert_kkt(sol)
    again = residuals(p, sol)
    assert np.allclose(again, sol.residuals, atol=1e-10, rtol=0)
    X = sol.block_values[0].copy()
    X[0, 0] += 1e-3
    bumped = SdpSolution(sol.status, [X], sol.free_values, sol.dual_values, sol.residuals)
    assert residuals(p, bumped)[0] >= 1e-4


def test_capacity_and_data_errors():
    p = SdpProblem()
    p.add_block(5)
    p.add_equality([(0, 0, 0, 1.0)], [], 1.0)
    with pytest.raises(CapacityError):
        solve(p, SolverSettings(max_block=4))
    q = SdpProblem()
    q.add_block(1)
    q.add_equality([(0, 0, 0, float("nan"))], [], 1.0)
    with pytest.raises(DataError):
        solve(q)


def test_dependent_rows_are_dropped():
    p = lambda_min_problem(np.array([[2.0, 1.0], [1.0, 2.0]]))
    p.add_equality([(0, 0, 1, 1.0)], [], 2.0)  # twice the off-diagonal row
    sol = solve(p)
    assert_kkt(sol)
    assert sol.removed_rows
    assert sol.free_values[0] == pytest.approx(1.0, abs=1e-7)


def test_inconsistent_dependent_rows_are_infeasible():
    p = lambda_min_problem(np.array([[2.0, 1.0], [1.0, 2.0]]))
    p.add_equality([(0, 0, 1, 1.0)], [], 0.0)  # contradicts X_01 = 1
    sol = solve(p)
    assert sol.status is Status.INFEASIBLE
    check_farkas(p, sol.ray)


def test_unbounded():
    p = SdpProblem()
    b = p.add_block(2)
    p.add_equality([(b, 0, 0, 1.0)], [], 1.0)
    p.set_objective([(b, 1, 1, 1.0)])
    assert solve(p).status is Status.UNBOUNDED


def test_dump_text_lists_all_rows():
    p = lambda_min_problem(np.array([[2.0, 1.0], [1.0, 2.0]]))
    text = dump_text(p)
    lines = text.splitlines()
    assert lines[0] == "3"
    assert lines[1] == "1 1"
    assert len(lines) == 4 + 1 + 3 + 2
    assert text == dump_text(p)


# random problems --------------------------------------------------------------------------

def random_sym(rng, n):
    M = rng.standard_normal((n, n))
    return 0.5 * (M + M.T)


def random_problem(rng, feasible):
    dims = list(rng.integers(2, 7, size=rng.integers(1, 3)))
    m = int(rng.integers(2, 2 + sum(d * (d + 1) // 2 for d in dims) // 2))
    mats = [[random_sym(rng, d) for d in dims] for _ in range(m)]
    if feasible:
        X0 = []
        for d in dims:
            Q = rng.standard_normal((d, d))
            X0.append(Q @ Q.T / d + 0.5 * np.eye(d))
        b = np.array([sum(float(np.sum(A * X)) for A, X in zip(row, X0)) for row in mats])
    else:
        # sum y_i A_i = P positive definite and b.y = -1: no PSD solution exists
        y = rng.standard_normal(m)
        y[-1] = 1.0 if abs(y[-1]) < 0.5 else y[-1]
        for k, d in enumerate(dims):
            Q = rng.standard_normal((d, d))
            P = Q @ Q.T / d + 0.5 * np.eye(d)
            rest = sum(y[i] * mats[i][k] for i in range(m - 1))
            mats[-1][k] = (P - rest) / y[-1]
        b = rng.standard_normal(m)
        b[-1] = (-1.0 - b[:-1] @ y[:-1]) / y[-1]
    p = SdpProblem()
    for d in dims:
        p.add_block(d)
    for row, rhs in zip(mats, b):
        terms = [(k, i, j, A[i, j]) for k, A in enumerate(row) for i in range(A.shape[0]) for j in range(i, A.shape[0])]
        p.add_equality(terms, [], rhs)
    return p, dims, mats, b


def alternating_projection_feasible(dims, mats, b, iters=20000, tol=1e-7):
    """Independent verdict: alternate between the affine set and the PSD cone."""
    rows = np.array([np.concatenate([A.ravel() for A in row]) for row in mats])
    pinv = np.linalg.pinv(rows)
    splits = np.cumsum([d * d for d in dims])[:-1]
    x = np.zeros(rows.shape[1])
    for _ in range(iters):
        a = x - pinv @ (rows @ x - b)
        parts = np.split(a, splits)
        proj = []
        for v, d in zip(parts, dims):
            M = v.reshape(d, d)
            w, U = np.linalg.eigh(0.5 * (M + M.T))
            proj.append(((U * np.maximum(w, 0)) @ U.T).ravel())
        x_new = np.concatenate(proj)
        gap = np.linalg.norm(a - x_new)
        if gap < tol:
            return True
        if np.linalg.norm(x_new - x) < 1e-12:
            return False
        x = x_new
    return False


@pytest.mark.parametrize("seed", range(50))
def test_random_feasibility_matches_projection_oracle(seed):
    rng = np.random.default_rng(seed)
    feasible = bool(seed % 2)
    p, dims, mats, b = random_problem(rng, feasible)
    sol = solve(p)
    oracle = alternating_projection_feasible(dims, mats, b)
    assert oracle == feasible
    assert (sol.status is Status.OPTIMAL) == oracle
    if sol.status is Status.OPTIMAL:
        assert_kkt(sol)
    else:
        assert sol.status is Status.INFEASIBLE
        check_farkas(p, sol.ray)


@pytest.mark.parametrize("seed", range(10))
def test_weak_duality_and_determinism(seed):
    rng = np.random.default_rng(100 + seed)
    p, dims, _, _ = random_problem(rng, True)
    # maximise -trace: bounded because X is PSD
    p.set_objective([(k, i, i, -1.0) for k, d in enumerate(dims) for i in range(d)])
    s1, s2 = solve(p), solve(p)
    assert_kkt(s1)
    scale = 1 + abs(s1.primal_objective) + abs(s1.dual_objective)
    assert s1.primal_objective <= s1.dual_objective + 1e-8 * scale
    assert s1.status is s2.status
    assert abs(s1.primal_objective - s2.primal_objective) <= 1e-9
    assert s1.iterations == s2.iterations
