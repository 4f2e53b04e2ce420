"""Dense block semidefinite programs in standard primal form.

The problem is::

    maximize    sum_b <C_b, X_b> + c_f . f
    subject to  sum_b <A_ib, X_b> + a_i . f = b_i      (i = 1..m)
                X_b PSD, f free

and its dual::

    minimize    b . u
    subject to  sum_i u_i A_ib - C_b  PSD,   sum_i u_i a_i = c_f.

``solve`` runs a primal-dual interior point method on the homogeneous
embedding of this pair (Nesterov-Todd scaling, Mehrotra predictor-corrector),
so an infeasible problem ends with a Farkas ray rather than an iteration cap.
"""
from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
MIN_STEP = 1e-8  # shorter steps count as a stall


class SdpError(Exception):
    pass


class CapacityError(SdpError):
    """Problem exceeds the configured size limits."""


class DataError(SdpError):
    """Problem data contains NaN or Inf, or is malformed."""


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverSettings:
    tol: float = 1e-8
    #: relative residual accepted for infeasibility and unboundedness rays
    infeas_tol: float = 1e-7
    max_iter: int = 200
    max_block: int = 200
    #: relative pivot threshold for dropping dependent equality rows
    pivot_tol: float = 1e-10
    step: float = 0.99


@dataclass
class SdpProblem:
    """Incrementally built block SDP.

    Coefficient entries are triplets ``(i, j, v)`` with ``i <= j`` describing a
    symmetric matrix whose ``(i, j)`` and ``(j, i)`` entries both equal ``v``;
    so an off-diagonal triplet contributes ``2 v X_ij`` to ``<A, X>``.
    """

    block_dims: list = field(default_factory=list)
    n_free: int = 0
    rhs: list = field(default_factory=list)
    # (row, block, i, j, value)
    block_entries: list = field(default_factory=list)
    # (row, k, value)
    free_entries: list = field(default_factory=list)
    obj_block_entries: list = field(default_factory=list)
    obj_free: dict = field(default_factory=dict)

    def add_block(self, dim: int) -> int:
        if dim < 1:
            raise ValueError("block dimension must be positive")
        self.block_dims.append(int(dim))
        return len(self.block_dims) - 1

    def add_free(self, count: int = 1) -> int:
        start = self.n_free
        self.n_free += int(count)
        return start

    def add_equality(self, block_terms=(), free_terms=(), rhs: float = 0.0) -> int:
        """Append ``sum <A_b, X_b> + a . f = rhs``; returns the row index.

        ``block_terms`` holds ``(block, i, j, value)``; ``free_terms`` holds
        ``(k, value)``.
        """
        row = len(self.rhs)
        for blk, i, j, v in block_terms:
            if i > j:
                i, j = j, i
            self.block_entries.append((row, blk, i, j, float(v)))
        for k, v in free_terms:
            self.free_entries.append((row, k, float(v)))
        self.rhs.append(float(rhs))
        return row

    def set_objective(self, block_terms=(), free_terms=()):
        self.obj_block_entries = []
        for blk, i, j, v in block_terms:
            if i > j:
                i, j = j, i
            self.obj_block_entries.append((blk, i, j, float(v)))
        self.obj_free = {}
        for k, v in free_terms:
            self.obj_free[k] = self.obj_free.get(k, 0.0) + float(v)

    @property
    def n_equalities(self) -> int:
        return len(self.rhs)

    def equality(self, row: int):
        """Dense view of one equality: (block matrices, free coefficients, rhs)."""
        mats = {}
        for r, blk, i, j, v in self.block_entries:
            if r != row:
                continue
            n = self.block_dims[blk]
            M = mats.setdefault(blk, np.zeros((n, n)))
            M[i, j] += v
            if i != j:
                M[j, i] += v
        free = {}
        for r, k, v in self.free_entries:
            if r == row:
                free[k] = free.get(k, 0.0) + v
        return mats, free, self.rhs[row]

    def validate(self, settings: SolverSettings | None = None):
        settings = settings or SolverSettings()
        for n in self.block_dims:
            if n > settings.max_block:
                raise CapacityError(f"block of size {n} exceeds limit {settings.max_block}")
        vals = [e[-1] for e in self.block_entries] + [e[-1] for e in self.free_entries]
        vals += list(self.rhs) + [e[-1] for e in self.obj_block_entries] + list(self.obj_free.values())
        if vals and not np.all(np.isfinite(vals)):
            raise DataError("problem data contains NaN or Inf")
        m = len(self.rhs)
        for r, blk, i, j, _ in self.block_entries:
            if not (0 <= r < m and 0 <= blk < len(self.block_dims) and 0 <= i <= j < self.block_dims[blk]):
                raise DataError(f"entry ({r}, {blk}, {i}, {j}) out of range")
        for r, k, _ in self.free_entries:
            if not (0 <= r < m and 0 <= k < self.n_free):
                raise DataError(f"free entry ({r}, {k}) out of range")
        for blk, i, j, _ in self.obj_block_entries:
            if not (0 <= blk < len(self.block_dims) and 0 <= i <= j < self.block_dims[blk]):
                raise DataError("objective entry out of range")
        for k in self.obj_free:
            if not 0 <= k < self.n_free:
                raise DataError("objective free index out of range")

    # dense/sparse assembly -----------------------------------------------------
    def matrices(self):
        """Return ``(A_blocks, A_free, b, C_blocks, c_free)``.

        ``A_blocks[b]`` is a CSR matrix of shape ``(m, n_b**2)`` holding the
        full (symmetric) row-major vectorisation of every coefficient matrix.
        """
        m = len(self.rhs)
        per_block = [([], [], []) for _ in self.block_dims]
        for r, blk, i, j, v in self.block_entries:
            n = self.block_dims[blk]
            rows, cols, vals = per_block[blk]
            rows.append(r)
            cols.append(i * n + j)
            vals.append(v)
            if i != j:
                rows.append(r)
                cols.append(j * n + i)
                vals.append(v)
        A = []
        for (rows, cols, vals), n in zip(per_block, self.block_dims):
            mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, n * n))
            mat.sum_duplicates()
            A.append(mat)
        Af = np.zeros((m, self.n_free))
        for r, k, v in self.free_entries:
            Af[r, k] += v
        C = [np.zeros((n, n)) for n in self.block_dims]
        for blk, i, j, v in self.obj_block_entries:
            C[blk][i, j] += v
            if i != j:
                C[blk][j, i] += v
        cf = np.zeros(self.n_free)
        for k, v in self.obj_free.items():
            cf[k] += v
        return A, Af, np.array(self.rhs, dtype=float), C, cf


@dataclass
class SdpSolution:
    status: Status
    block_values: list
    free_values: np.ndarray
    dual_values: np.ndarray
    residuals: tuple
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    iterations: int = 0
    #: Farkas certificate u with sum u_i A_i PSD, A_f^T u = 0 and b.u = -1
    #: (Infeasible), or an improving primal ray (Unbounded)
    ray: object = None
    removed_rows: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def stats(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "residuals": {"primal": self.residuals[0], "dual": self.residuals[1], "gap": self.residuals[2]},
        }


# residuals --------------------------------------------------------------------

def _apply_A(A, Af, X, f):
    out = Af @ f if Af.shape[1] else np.zeros(A[0].shape[0] if A else Af.shape[0])
    for Ab, Xb in zip(A, X):
        out = out + Ab @ Xb.ravel()
    return out


def _apply_AT(A, u, dims):
    return [(Ab.T @ u).reshape(n, n) for Ab, n in zip(A, dims)]


def residuals(problem: SdpProblem, solution: SdpSolution):
    """Relative (primal, dual, gap) residuals recomputed from the raw data."""
    A, Af, b, C, cf = problem.matrices()
    dims = problem.block_dims
    X = solution.block_values
    f = np.asarray(solution.free_values, dtype=float)
    u = np.asarray(solution.dual_values, dtype=float)
    if len(X) != len(dims) or any(x.shape != (n, n) for x, n in zip(X, dims)):
        raise ValueError("block values do not match the problem blocks")
    if f.shape != (problem.n_free,) or u.shape != (len(b),):
        raise ValueError("solution vector lengths do not match the problem")
    return _residuals(A, Af, b, C, cf, dims, X, f, u)


def _residuals(A, Af, b, C, cf, dims, X, f, u):
    rp = _apply_A(A, Af, X, f) - b if len(b) else np.zeros(0)
    primal = np.linalg.norm(rp) / (1.0 + np.linalg.norm(b))
    slack = _apply_AT(A, u, dims) if len(b) else [np.zeros((n, n)) for n in dims]
    neg = 0.0
    for Sb, Cb in zip(slack, C):
        w = np.linalg.eigvalsh(Sb - Cb)
        neg += float(np.sum(np.minimum(w, 0.0) ** 2))
    rd = (Af.T @ u - cf) if len(cf) else np.zeros(0)
    cnorm = np.sqrt(sum(float(np.sum(Cb * Cb)) for Cb in C)) + np.linalg.norm(cf)
    dual = (np.linalg.norm(rd) + np.sqrt(neg)) / (1.0 + cnorm)
    pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(C, X)) + float(cf @ f)
    dobj = float(b @ u)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return float(primal), float(dual), float(gap)


# presolve -----------------------------------------------------------------------

def _svec_rows(problem: SdpProblem, keep_free):
    """Dense matrix whose rows are the equalities in svec coordinates."""
    offsets, total = [], 0
    for n in problem.block_dims:
        offsets.append(total)
        total += n * (n + 1) // 2
    m = len(problem.rhs)
    B = np.zeros((m, total + len(keep_free)))
    for r, blk, i, j, v in problem.block_entries:
        n = problem.block_dims[blk]
        # row-major index of (i, j), i <= j, in the upper triangle
        idx = offsets[blk] + i * n - i * (i - 1) // 2 + (j - i)
        B[r, idx] += v * (SQRT2 if i != j else 1.0)
    col = {k: total + c for c, k in enumerate(keep_free)}
    for r, k, v in problem.free_entries:
        if k in col:
            B[r, col[k]] += v
    return B


def _independent_columns(M, tol):
    """Indices of a maximal independent set of columns (pivoted QR)."""
    if M.shape[1] == 0:
        return np.zeros(0, dtype=int)
    if M.shape[0] == 0:
        return np.zeros(0, dtype=int)
    R, piv = sla.qr(M, mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(d > tol * d[0]))
    return np.sort(piv[:rank])


@dataclass
class _Presolved:
    rows: np.ndarray
    free: np.ndarray
    A: list
    Af: np.ndarray
    b: np.ndarray
    C: list
    cf: np.ndarray
    scale: np.ndarray


# interior point core --------------------------------------------------------------

class _Scaling:
    """Nesterov-Todd scaling for one PSD block, kept in factored form."""

    __slots__ = ("R", "Rinv", "lam")

    def __init__(self, R, Rinv, lam):
        self.R, self.Rinv, self.lam = R, Rinv, lam

    @classmethod
    def from_factors(cls, Ls, Lz, Ls_inv):
        U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
        r = 1.0 / np.sqrt(lam)
        R = (Ls @ Vt.T) * r
        Rinv = (np.sqrt(lam)[:, None] * Vt) @ Ls_inv
        return cls(R, Rinv, lam)

    @classmethod
    def from_matrices(cls, S, Z):
        Ls = np.linalg.cholesky(S)
        Lz = np.linalg.cholesky(Z)
        Ls_inv = sla.solve_triangular(Ls, np.eye(S.shape[0]), lower=True)
        return cls.from_factors(Ls, Lz, Ls_inv)

    def updated(self, s_tilde, z_tilde):
        L1 = np.linalg.cholesky(s_tilde)
        L2 = np.linalg.cholesky(z_tilde)
        U, lam, Vt = np.linalg.svd(L2.T @ L1)
        L1_inv = sla.solve_triangular(L1, np.eye(L1.shape[0]), lower=True)
        r = 1.0 / np.sqrt(lam)
        R = ((self.R @ L1) @ Vt.T) * r
        Rinv = (np.sqrt(lam)[:, None] * Vt) @ (L1_inv @ self.Rinv)
        return _Scaling(R, Rinv, lam)

    @property
    def S(self):
        return (self.R * self.lam) @ self.R.T

    @property
    def Z(self):
        return (self.Rinv.T * self.lam) @ self.Rinv

    @property
    def P(self):
        """Inverse NT matrix: maps U to P U P as (W^T W)^{-1}."""
        return self.Rinv.T @ self.Rinv


def _sym(M):
    return 0.5 * (M + M.T)


def _lam_solve(lam, D):
    """Solve (lam o U) = D for U, with o the symmetrised product."""
    return 2.0 * D / (lam[:, None] + lam[None, :])


def _max_step(lam, D):
    """Largest a with diag(lam) + a D PSD (inf when unrestricted)."""
    r = 1.0 / np.sqrt(lam)
    w = np.linalg.eigvalsh(_sym(r[:, None] * D * r[None, :]))
    return np.inf if w[0] >= 0 else -1.0 / w[0]


class _Ipm:
    def __init__(self, pre: _Presolved, dims, settings, check):
        self.A, self.Af, self.b, self.C, self.cf = pre.A, pre.Af, pre.b, pre.C, pre.cf
        self.dims = dims
        self.m = len(self.b)
        self.nf = self.Af.shape[1]
        self.settings = settings
        self.check = check
        # per block: list of (row, ks, ls, vs) for rows touching the block
        self.row_data = []
        for Ab, n in zip(self.A, dims):
            Ab = Ab.tocsr()
            entries = []
            for r in range(self.m):
                lo, hi = Ab.indptr[r], Ab.indptr[r + 1]
                if hi > lo:
                    idx = Ab.indices[lo:hi]
                    entries.append((r, idx // n, idx % n, Ab.data[lo:hi]))
            self.row_data.append(entries)
        self.bnorm = max(1.0, np.linalg.norm(self.b))
        self.cnorm = max(1.0, np.sqrt(sum(np.sum(c * c) for c in self.C)) + np.linalg.norm(self.cf))

    # linear algebra -------------------------------------------------------------
    def Aop(self, Z):
        out = np.zeros(self.m)
        for Ab, Zb in zip(self.A, Z):
            out += Ab @ Zb.ravel()
        return out

    def ATop(self, x):
        return [(Ab.T @ x).reshape(n, n) for Ab, n in zip(self.A, self.dims)]

    def factor(self, scalings):
        m = self.m
        M = np.zeros((m, m))
        for Ab, entries, sc, n in zip(self.A, self.row_data, scalings, self.dims):
            if not entries:
                continue
            P = sc.P
            T = np.empty((n * n, len(entries)))
            rows = np.empty(len(entries), dtype=int)
            for c, (r, ks, ls, vs) in enumerate(entries):
                T[:, c] = ((P[:, ks] * vs) @ P[ls, :]).ravel()
                rows[c] = r
            M[:, rows] += Ab @ T
        M = _sym(M)
        self.Ps = [sc.P for sc in scalings]
        self.Wnts = [sc.R @ sc.R.T for sc in scalings]
        if self.nf:
            K = np.zeros((m + self.nf, m + self.nf))
            K[:m, :m] = M
            K[:m, m:] = self.Af
            K[m:, :m] = self.Af.T
        else:
            K = M
        self.K = K
        self.lu = sla.lu_factor(K, check_finite=True)

    def _ksolve_once(self, bx, by, bz):
        Hbz = [P @ z @ P for P, z in zip(self.Ps, bz)]
        r1 = bx + self.Aop(Hbz)
        rhs = np.concatenate([r1, by]) if self.nf else r1
        sol = sla.lu_solve(self.lu, rhs)
        sol = sol + sla.lu_solve(self.lu, rhs - self.K @ sol)
        ux = sol[: self.m]
        uy = sol[self.m:] if self.nf else np.zeros(0)
        Gx = self.ATop(ux)
        uz = [_sym(P @ (g - z) @ P) for P, g, z in zip(self.Ps, Gx, bz)]
        return ux, uy, uz

    def ksolve(self, bx, by, bz, refine=2):
        """Solve [[0, A^T, G^T], [A, 0, 0], [G, 0, -W^T W]] u = (bx, by, bz)."""
        ux, uy, uz = self._ksolve_once(bx, by, bz)
        for _ in range(refine):
            # residual of the unreduced system
            ex = bx - self.Af @ uy - self.Aop(uz)
            ey = by - self.Af.T @ ux
            Gx = self.ATop(ux)
            ez = [z - (g - Wi @ u @ Wi) for z, g, u, Wi in zip(bz, Gx, uz, self.Wnts)]
            dx, dy, dz = self._ksolve_once(ex, ey, ez)
            ux, uy = ux + dx, uy + dy
            uz = [u + d for u, d in zip(uz, dz)]
        return ux, uy, uz

    # main loop ------------------------------------------------------------------
    def initial_point(self):
        ident = [
            _Scaling(np.eye(n), np.eye(n), np.ones(n)) for n in self.dims
        ]
        self.factor(ident)
        zeros_z = [np.zeros((n, n)) for n in self.dims]
        # primal (of the conic form): min ||G x - h|| s.t. A x = b_cv
        x, _, zz = self.ksolve(np.zeros(self.m), -self.cf, [-c for c in self.C])
        s = [-z for z in zz]
        # dual: min ||z|| s.t. G^T z + A^T y + c = 0
        _, y, z = self.ksolve(self.b.copy(), np.zeros(self.nf), zeros_z)

        def shift(blocks):
            out = []
            worst = min(np.linalg.eigvalsh(B)[0] for B in blocks) if blocks else 1.0
            for B in blocks:
                if worst < 1e-8 * max(1.0, max(np.linalg.norm(X) for X in blocks)):
                    B = B + (1.0 - worst) * np.eye(B.shape[0])
                out.append(_sym(B))
            return out

        return x, y, shift(s), shift(z)

    def run(self):
        st = self.settings
        x, y, S, Z = self.initial_point()
        tau, kappa = 1.0, 1.0
        scal = [_Scaling.from_matrices(Sb, Zb) for Sb, Zb in zip(S, Z)]
        degree = sum(self.dims) + 1
        status = Status.MAX_ITERATIONS
        last = None
        for it in range(st.max_iter + 1):
            S = [sc.S for sc in scal]
            Z = [sc.Z for sc in scal]
            last = (x, y, Z, tau)
            verdict = self.check(x, y, Z, tau, it)
            if verdict is not None:
                return verdict, last, it
            Gx = self.ATop(x)
            rx = self.Af @ y + self.Aop(Z) - self.b * tau
            ry = -self.cf * tau - self.Af.T @ x
            rz = [Sb + g + Cb * tau for Sb, g, Cb in zip(S, Gx, self.C)]
            cz = sum(float(np.sum(Cb * Zb)) for Cb, Zb in zip(self.C, Z))
            rt = kappa - self.b @ x - self.cf @ y - cz

            # infeasibility rays
            bx = float(self.b @ x)
            if bx > 0:
                res = max(
                    np.linalg.norm(self.Af.T @ x) / max(1.0, np.linalg.norm(self.cf)),
                    np.sqrt(sum(np.sum((g + Sb) ** 2) for g, Sb in zip(Gx, S)))
                    / max(1.0, np.sqrt(sum(np.sum(c * c) for c in self.C))),
                )
                log.debug("ray residual %.3e", res / bx)
                if res / bx <= st.infeas_tol:
                    return Status.INFEASIBLE, (x / bx,), it
            pz = cz + float(self.cf @ y)
            if pz > 0:
                res = np.linalg.norm(self.Af @ y + self.Aop(Z)) / self.bnorm
                if res / pz <= st.infeas_tol:
                    return Status.UNBOUNDED, ([Zb / pz for Zb in Z], y / pz), it
            if it == st.max_iter:
                break

            mu = (sum(float(np.sum(sc.lam ** 2)) for sc in scal) + tau * kappa) / degree
            try:
                self.factor(scal)
                x1, y1, z1 = self.ksolve(self.b.copy(), -self.cf, [-c for c in self.C])
            except (np.linalg.LinAlgError, ValueError) as exc:
                log.debug("factorisation failed: %s", exc)
                return Status.NUMERICAL_FAILURE, last, it
            den = -self.b @ x1 - self.cf @ y1 - sum(float(np.sum(Cb * zb)) for Cb, zb in zip(self.C, z1)) - kappa / tau

            def direction(dr, ds, dtau_rhs):
                lds = [_lam_solve(sc.lam, d) for sc, d in zip(scal, ds)]
                bz = [-dr * r - sc.R @ l @ sc.R.T for r, sc, l in zip(rz, scal, lds)]
                x2, y2, z2 = self.ksolve(-dr * rx, dr * ry, bz)
                num = -dr * rt - dtau_rhs / tau - (
                    -self.b @ x2 - self.cf @ y2 - sum(float(np.sum(Cb * zb)) for Cb, zb in zip(self.C, z2))
                )
                dtau = num / den
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = [a + dtau * c for a, c in zip(z2, z1)]
                dz_t = [_sym(sc.R.T @ d @ sc.R) for sc, d in zip(scal, dz)]
                ds_t = [l - d for l, d in zip(lds, dz_t)]
                dkappa = (dtau_rhs - kappa * dtau) / tau
                return dx, dy, dz, ds_t, dz_t, dtau, dkappa

            def step_length(ds_t, dz_t, dtau, dkappa):
                a = np.inf
                for sc, d1, d2 in zip(scal, ds_t, dz_t):
                    a = min(a, _max_step(sc.lam, d1), _max_step(sc.lam, d2))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            try:
                # predictor
                ds_aff = [-np.diag(sc.lam ** 2) for sc in scal]
                aff = direction(1.0, ds_aff, -tau * kappa)
                a_aff = min(1.0, step_length(*aff[3:]))
                sigma = (1.0 - a_aff) ** 3
                # corrector; when the step collapses, drop the second-order term,
                # then fall back to pure centering
                for sig, use_corr in ((sigma, True), (sigma, False), (1.0, False)):
                    ds = []
                    for sc, d1, d2 in zip(scal, aff[3], aff[4]):
                        corr = _sym(d1 @ d2) if use_corr else 0.0
                        ds.append(sig * mu * np.eye(len(sc.lam)) - np.diag(sc.lam ** 2) - corr)
                    dtau_rhs = sig * mu - tau * kappa - (aff[5] * aff[6] if use_corr else 0.0)
                    dx, dy, dz, ds_t, dz_t, dtau, dkappa = direction(1.0 - sig, ds, dtau_rhs)
                    a = min(1.0, st.step * step_length(ds_t, dz_t, dtau, dkappa))
                    if np.isfinite(a) and a >= MIN_STEP:
                        break
                    log.debug("step length %.3e (sigma %.2e, corrector %s)", a, sig, use_corr)
                else:
                    return Status.NUMERICAL_FAILURE, last, it
                new_scal = []
                for sc, d1, d2 in zip(scal, ds_t, dz_t):
                    L = np.diag(sc.lam)
                    new_scal.append(sc.updated(_sym(L + a * d1), _sym(L + a * d2)))
            except np.linalg.LinAlgError as exc:
                log.debug("step failed: %s", exc)
                return Status.NUMERICAL_FAILURE, last, it
            scal = new_scal
            x = x + a * dx
            y = y + a * dy
            tau = tau + a * dtau
            kappa = kappa + a * dkappa
            if not (np.all(np.isfinite(x)) and np.isfinite(tau)) or tau <= 0:
                return Status.NUMERICAL_FAILURE, last, it
            log.debug("it %d  mu %.2e  step %.3f  tau %.3e  kappa %.3e", it, mu, a, tau, kappa)
        return status, last, st.max_iter


def _empty_solution(problem, status, res=(np.inf, np.inf, np.inf)):
    return SdpSolution(
        status=status,
        block_values=[np.zeros((n, n)) for n in problem.block_dims],
        free_values=np.zeros(problem.n_free),
        dual_values=np.zeros(problem.n_equalities),
        residuals=res,
    )


def solve(problem: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve ``problem``; never raises for infeasible or unbounded data."""
    settings = settings or SolverSettings()
    problem.validate(settings)
    A, Af, b, C, cf = problem.matrices()
    dims = list(problem.block_dims)
    m = len(b)

    # dependent free columns: drop when the objective agrees, else unbounded
    keep_free = _independent_columns(Af, settings.pivot_tol) if problem.n_free else np.zeros(0, dtype=int)
    dropped = np.setdiff1d(np.arange(problem.n_free), keep_free)
    if dropped.size:
        if keep_free.size:
            w = np.linalg.lstsq(Af[:, keep_free], Af[:, dropped], rcond=None)[0]
            mismatch = cf[dropped] - cf[keep_free] @ w
        else:
            mismatch = cf[dropped]
        if np.any(np.abs(mismatch) > settings.pivot_tol * (1.0 + np.abs(cf).max())):
            feas = SdpProblem(dims, problem.n_free, problem.rhs, problem.block_entries, problem.free_entries)
            sol = solve(feas, settings)
            if sol.ok:
                sol.status = Status.UNBOUNDED
            return sol

    # dependent rows
    B = _svec_rows(problem, keep_free)
    rows = _independent_columns(B.T, settings.pivot_tol) if m else np.zeros(0, dtype=int)
    removed = np.setdiff1d(np.arange(m), rows)
    if removed.size:
        if rows.size:
            w = np.linalg.lstsq(B[rows].T, B[removed].T, rcond=None)[0]
            incons = b[removed] - w.T @ b[rows]
        else:
            w = np.zeros((0, removed.size))
            incons = b[removed]
        scale = 1.0 + np.abs(b).max()
        bad = np.flatnonzero(np.abs(incons) > 1e-9 * scale)
        if bad.size:
            j = bad[np.argmax(np.abs(incons[bad]))]
            u = np.zeros(m)
            u[removed[j]] = 1.0
            u[rows] = -w[:, j]
            u = -u / float(b @ u)
            sol = _empty_solution(problem, Status.INFEASIBLE)
            sol.ray = u
            sol.removed_rows = tuple(int(r) for r in removed)
            return sol
    if rows.size == 0:
        return _solve_unconstrained(problem, A, Af, b, C, cf)

    d = np.linalg.norm(B[rows], axis=1)
    d[d == 0] = 1.0
    pre = _Presolved(
        rows=rows,
        free=keep_free,
        A=[sp.diags(1.0 / d) @ Ab[rows] for Ab in A],
        Af=Af[np.ix_(rows, keep_free)] / d[:, None],
        b=b[rows] / d,
        C=C,
        cf=cf[keep_free],
        scale=d,
    )

    def lift(x, y, Z, tau):
        X = [_sym(Zb / tau) for Zb in Z]
        f = np.zeros(problem.n_free)
        f[keep_free] = y / tau
        u = np.zeros(m)
        u[rows] = -x / tau / d
        return X, f, u

    def check(x, y, Z, tau, it):
        X, f, u = lift(x, y, Z, tau)
        res = _residuals(A, Af, b, C, cf, dims, X, f, u)
        log.debug("check %d: %s", it, res)
        if max(res) <= settings.tol:
            return Status.OPTIMAL
        return None

    ipm = _Ipm(pre, dims, settings, check)
    status, payload, iters = ipm.run()
    if status is Status.INFEASIBLE:
        sol = _empty_solution(problem, status)
        u = np.zeros(m)
        u[rows] = -payload[0] / d
        u = -u / float(b @ u)
        sol.ray = u
    elif status is Status.UNBOUNDED:
        sol = _empty_solution(problem, status)
        Zr, yr = payload
        f = np.zeros(problem.n_free)
        f[keep_free] = yr
        sol.ray = ([_sym(z) for z in Zr], f)
    else:
        X, f, u = lift(*payload)
        res = _residuals(A, Af, b, C, cf, dims, X, f, u)
        sol = SdpSolution(status=status, block_values=X, free_values=f, dual_values=u, residuals=res)
        sol.primal_objective = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(C, X)) + float(cf @ f)
        sol.dual_objective = float(b @ u)
    sol.iterations = iters
    sol.removed_rows = tuple(int(r) for r in removed)
    return sol


def _solve_unconstrained(problem, A, Af, b, C, cf):
    # no equality constraints survive: X = 0, f = 0 is feasible
    grows = np.any(np.abs(cf) > 0) or any(np.linalg.eigvalsh(Cb)[-1] > 0 for Cb in C)
    if grows:
        return _empty_solution(problem, Status.UNBOUNDED)
    X = [np.zeros((n, n)) for n in problem.block_dims]
    f = np.zeros(problem.n_free)
    u = np.zeros(len(b))
    res = _residuals(A, Af, b, C, cf, problem.block_dims, X, f, u)
    sol = SdpSolution(Status.OPTIMAL if max(res) < np.inf else Status.NUMERICAL_FAILURE, X, f, u, res)
    sol.primal_objective = sol.dual_objective = 0.0
    return sol


# plain-text dump ------------------------------------------------------------------

def dump_text(problem: SdpProblem) -> str:
    """Plain-text listing: dimensions, objective, then one line per coefficient.

    Coefficient lines read ``row blk i j value`` (1-based; blk 0 denotes the
    free variables, with i = j = variable index). ``row 0`` is the objective.
    """
    out = io.StringIO()
    out.write(f"{problem.n_equalities}\n")
    out.write(f"{len(problem.block_dims)} {problem.n_free}\n")
    out.write(" ".join(str(n) for n in problem.block_dims) + "\n")
    out.write(" ".join(repr(v) for v in problem.rhs) + "\n")
    for blk, i, j, v in problem.obj_block_entries:
        out.write(f"0 {blk + 1} {i + 1} {j + 1} {v!r}\n")
    for k, v in sorted(problem.obj_free.items()):
        out.write(f"0 0 {k + 1} {k + 1} {v!r}\n")
    for r, blk, i, j, v in problem.block_entries:
        out.write(f"{r + 1} {blk + 1} {i + 1} {j + 1} {v!r}\n")
    for r, k, v in problem.free_entries:
        out.write(f"{r + 1} 0 {k + 1} {k + 1} {v!r}\n")
    return out.getvalue()
