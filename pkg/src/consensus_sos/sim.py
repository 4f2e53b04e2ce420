"""Closed-loop simulation of the leader-tracking protocols under switching.

Second-order runs integrate the error system exactly in the form
``d omega_i = h1(nu_i)``, ``d nu_i = <coupling terms>``; absolute positions
are only reconstructed for output.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numba
import numpy as np

from .graph import SwitchingSchedule, TopologyGraph
from .poly import DimensionError, Polynomial, PolyEvaluator, PolyVector

DIVERGENCE_NORM = 1e12
ALIGN_RTOL = 1e-9


class AlignmentError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"state norm exceeded {DIVERGENCE_NORM:g} at t = {t:.6g}")
        self.t = t


@dataclass
class FirstOrderState:
    z: np.ndarray  # (N, n)
    z_gamma: np.ndarray  # (n,)
    t: float = 0.0


@dataclass
class SecondOrderErrorState:
    omega: np.ndarray  # (N, n) position errors
    nu: np.ndarray  # (N, n) velocity errors
    v_gamma: np.ndarray  # (n,)
    t: float = 0.0
    z_gamma0: np.ndarray | None = None  # leader position at t = 0, for output only

    @classmethod
    def from_absolute(cls, z, v, z_gamma, v_gamma) -> "SecondOrderErrorState":
        z, v = np.asarray(z, float), np.asarray(v, float)
        zg, vg = np.asarray(z_gamma, float), np.asarray(v_gamma, float)
        return cls(z - zg, v - vg, vg, 0.0, zg)


# polynomial tables -------------------------------------------------------------------

def _tables(vec: PolyVector):
    """Exponent matrix (M, n) and coefficient matrix (len(vec), M)."""
    monos = sorted({m for p in vec for m, _ in p.items()})
    n = vec.nvars
    exps = np.array(monos, dtype=np.int64).reshape(len(monos), n)
    coefs = np.zeros((len(vec), len(monos)))
    index = {m: k for k, m in enumerate(monos)}
    for i, p in enumerate(vec):
        for m, c in p.items():
            coefs[i, index[m]] = c
    return exps, coefs


@numba.njit(cache=True)
def _eval(x, exps, coefs, out):
    out[:] = 0.0
    for k in range(exps.shape[0]):
        v = 1.0
        for j in range(exps.shape[1]):
            e = exps[k, j]
            if e:
                v *= x[j] ** e
        for i in range(coefs.shape[0]):
            out[i] += coefs[i, k] * v


@numba.njit(cache=True)
def _first_rhs(z, zg, A, d, he, hc, out):
    N, n = z.shape
    hz = np.empty((N, n))
    for i in range(N):
        _eval(z[i], he, hc, hz[i])
    hg = np.empty(n)
    _eval(zg, he, hc, hg)
    for i in range(N):
        for k in range(n):
            acc = d[i] * (hg[k] - hz[i, k])
            for j in range(N):
                if A[i, j] != 0.0:
                    acc += A[i, j] * (hz[j, k] - hz[i, k])
            out[i, k] = acc


@numba.njit(cache=True)
def _second_rhs(om, nu, vg, A, d, e1, c1, e2, c2, dom, dnu):
    N, n = om.shape
    tmp = np.empty(n)
    diff = np.empty(n)
    h2v = np.empty((N, n))
    v = np.empty(n)
    for i in range(N):
        for k in range(n):
            v[k] = nu[i, k] + vg[k]
        _eval(v, e2, c2, h2v[i])
    h2g = np.empty(n)
    _eval(vg, e2, c2, h2g)
    for i in range(N):
        _eval(nu[i], e1, c1, dom[i])
        for k in range(n):
            dnu[i, k] = d[i] * (h2g[k] - h2v[i, k])
        if d[i] != 0.0:
            for k in range(n):
                diff[k] = -om[i, k]
            _eval(diff, e1, c1, tmp)
            for k in range(n):
                dnu[i, k] += d[i] * tmp[k]
        for j in range(N):
            a = A[i, j]
            if a == 0.0:
                continue
            for k in range(n):
                diff[k] = om[j, k] - om[i, k]
            _eval(diff, e1, c1, tmp)
            for k in range(n):
                dnu[i, k] += a * (tmp[k] + h2v[j, k] - h2v[i, k])


@numba.njit(cache=True)
def _run_first(z0, zg, As, ds, gidx, dt, he, hc, limit):
    steps = gidx.shape[0]
    N, n = z0.shape
    traj = np.empty((steps + 1, N, n))
    traj[0] = z0
    z = z0.copy()
    k1 = np.empty((N, n))
    k2 = np.empty((N, n))
    k3 = np.empty((N, n))
    k4 = np.empty((N, n))
    for s in range(steps):
        A = As[gidx[s]]
        d = ds[gidx[s]]
        _first_rhs(z, zg, A, d, he, hc, k1)
        _first_rhs(z + 0.5 * dt * k1, zg, A, d, he, hc, k2)
        _first_rhs(z + 0.5 * dt * k2, zg, A, d, he, hc, k3)
        _first_rhs(z + dt * k3, zg, A, d, he, hc, k4)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[s + 1] = z
        if not np.all(np.isfinite(z)) or np.sqrt(np.sum(z * z)) > limit:
            return traj, s + 1
    return traj, -1


@numba.njit(cache=True)
def _run_second(om0, nu0, vg, As, ds, gidx, dt, e1, c1, e2, c2, limit):
    steps = gidx.shape[0]
    N, n = om0.shape
    T_om = np.empty((steps + 1, N, n))
    T_nu = np.empty((steps + 1, N, n))
    T_om[0] = om0
    T_nu[0] = nu0
    om = om0.copy()
    nu = nu0.copy()
    ka = np.empty((4, N, n))
    kb = np.empty((4, N, n))
    for s in range(steps):
        A = As[gidx[s]]
        d = ds[gidx[s]]
        _second_rhs(om, nu, vg, A, d, e1, c1, e2, c2, ka[0], kb[0])
        _second_rhs(om + 0.5 * dt * ka[0], nu + 0.5 * dt * kb[0], vg, A, d, e1, c1, e2, c2, ka[1], kb[1])
        _second_rhs(om + 0.5 * dt * ka[1], nu + 0.5 * dt * kb[1], vg, A, d, e1, c1, e2, c2, ka[2], kb[2])
        _second_rhs(om + dt * ka[2], nu + dt * kb[2], vg, A, d, e1, c1, e2, c2, ka[3], kb[3])
        om = om + (dt / 6.0) * (ka[0] + 2.0 * ka[1] + 2.0 * ka[2] + ka[3])
        nu = nu + (dt / 6.0) * (kb[0] + 2.0 * kb[1] + 2.0 * kb[2] + kb[3])
        T_om[s + 1] = om
        T_nu[s + 1] = nu
        norm = np.sqrt(np.sum(om * om) + np.sum(nu * nu))
        if not np.isfinite(norm) or norm > limit:
            return T_om, T_nu, s + 1
    return T_om, T_nu, -1


# public API ----------------------------------------------------------------------------

def _check_coupling(vec: PolyVector | None, n: int, name: str):
    if vec is None:
        raise ValueError(f"coupling {name} is required for this state type")
    if len(vec) != n or vec.nvars != n:
        raise DimensionError(f"{name} must map R^{n} to R^{n}")


def first_order_rhs(state: FirstOrderState, g: TopologyGraph, h: PolyVector) -> np.ndarray:
    z = np.asarray(state.z, float)
    N, n = z.shape
    if g.size != N:
        raise DimensionError("graph size does not match the agent count")
    _check_coupling(h, n, "h")
    out = np.empty((N, n))
    _first_rhs(z, np.asarray(state.z_gamma, float), g.adjacency, g.leader_gains, *_tables(h), out)
    return out


def second_order_error_rhs(state: SecondOrderErrorState, g: TopologyGraph, h1: PolyVector, h2: PolyVector):
    om = np.asarray(state.omega, float)
    nu = np.asarray(state.nu, float)
    N, n = om.shape
    if g.size != N or nu.shape != om.shape:
        raise DimensionError("state shapes do not match the graph")
    _check_coupling(h1, n, "h1")
    _check_coupling(h2, n, "h2")
    dom, dnu = np.empty((N, n)), np.empty((N, n))
    _second_rhs(om, nu, np.asarray(state.v_gamma, float), g.adjacency, g.leader_gains, *_tables(h1), *_tables(h2), dom, dnu)
    return dom, dnu


@dataclass
class SimulationResult:
    order: int
    t: np.ndarray  # (K+1,)
    omega: np.ndarray  # (K+1, N, n) position errors
    nu: np.ndarray | None  # (K+1, N, n) velocity errors (order 2)
    step_graph: np.ndarray  # (K,) graph index used by each step
    switches: list = field(default_factory=list)  # (t, from, to)
    v_gamma: np.ndarray | None = None
    z_gamma0: np.ndarray | None = None

    @property
    def pos_err(self) -> np.ndarray:
        return np.linalg.norm(self.omega, axis=2)

    @property
    def vel_err(self) -> np.ndarray | None:
        return None if self.nu is None else np.linalg.norm(self.nu, axis=2)

    @property
    def grid_graph(self) -> np.ndarray:
        """Active graph at each grid point (right-continuous)."""
        return np.concatenate([self.step_graph, self.step_graph[-1:]]) if len(self.step_graph) else np.zeros(1, int)

    def max_error(self) -> np.ndarray:
        err = self.pos_err.max(axis=1)
        if self.nu is not None:
            err = np.maximum(err, self.vel_err.max(axis=1))
        return err

    def positions(self) -> np.ndarray:
        """Absolute follower positions (order 2 needs the leader's initial position)."""
        if self.order == 1:
            return self.omega + self.z_gamma0
        zg = self.z_gamma0 + self.t[:, None] * self.v_gamma
        return self.omega + zg[:, None, :]


def step_schedule(schedule: SwitchingSchedule, dt: float, T: float) -> np.ndarray:
    """Graph index for each RK4 step; raises when dt does not tile the subintervals."""
    if not (dt > 0 and T > 0):
        raise ValueError("dt and T must be positive")
    counts = []
    for _, dur in schedule.subintervals:
        k = round(dur / dt)
        if k < 1 or abs(k * dt - dur) > ALIGN_RTOL * dur:
            raise AlignmentError(f"dt = {dt} does not divide the subinterval {dur}")
        counts.append(k)
    total = round(T / dt)
    if abs(total * dt - T) > ALIGN_RTOL * T:
        raise AlignmentError(f"dt = {dt} does not divide T = {T}")
    cycle = np.concatenate([np.full(k, gi) for (gi, _), k in zip(schedule.subintervals, counts)])
    reps = -(-total // len(cycle))
    return np.tile(cycle, reps)[:total].astype(np.int64)


def integrate(
    schedule: SwitchingSchedule,
    state,
    dt: float = 1e-4,
    T: float = 10.0,
    *,
    h: PolyVector | None = None,
    h1: PolyVector | None = None,
    h2: PolyVector | None = None,
) -> SimulationResult:
    """Fixed-step RK4; the graph is frozen over each step."""
    gidx = step_schedule(schedule, dt, T)
    As = np.array([g.adjacency for g in schedule.graphs])
    ds = np.array([g.leader_gains for g in schedule.graphs])
    K = len(gidx)
    t = np.arange(K + 1) * dt
    N = schedule.follower_count
    if isinstance(state, FirstOrderState):
        z0 = np.asarray(state.z, float)
        zg = np.asarray(state.z_gamma, float)
        if z0.shape[0] != N or zg.shape != (z0.shape[1],):
            raise DimensionError("initial state does not match the schedule")
        _check_coupling(h, z0.shape[1], "h")
        traj, bad = _run_first(z0, zg, As, ds, gidx, dt, *_tables(h), DIVERGENCE_NORM)
        if bad >= 0:
            raise DivergenceError(t[bad])
        res = SimulationResult(1, t, traj - zg, None, gidx, z_gamma0=zg)
    elif isinstance(state, SecondOrderErrorState):
        om0 = np.asarray(state.omega, float)
        nu0 = np.asarray(state.nu, float)
        vg = np.asarray(state.v_gamma, float)
        n = om0.shape[1]
        if om0.shape[0] != N or nu0.shape != om0.shape or vg.shape != (n,):
            raise DimensionError("initial state does not match the schedule")
        _check_coupling(h1, n, "h1")
        _check_coupling(h2, n, "h2")
        T_om, T_nu, bad = _run_second(om0, nu0, vg, As, ds, gidx, dt, *_tables(h1), *_tables(h2), DIVERGENCE_NORM)
        if bad >= 0:
            raise DivergenceError(t[bad])
        zg0 = np.zeros(n) if state.z_gamma0 is None else np.asarray(state.z_gamma0, float)
        res = SimulationResult(2, t, T_om, T_nu, gidx, v_gamma=vg, z_gamma0=zg0)
    else:
        raise TypeError("state must be a FirstOrderState or SecondOrderErrorState")
    change = np.flatnonzero(np.diff(gidx)) + 1
    res.switches = [(float(t[k]), int(gidx[k - 1]), int(gidx[k])) for k in change]
    return res


# Lyapunov monitor ---------------------------------------------------------------------

def _v_values(V: Polynomial, pts: np.ndarray) -> np.ndarray:
    """V(x) - V(0) for points of shape (..., n)."""
    ev = PolyEvaluator(PolyVector([V]))
    shape = pts.shape[:-1]
    vals = ev(pts.reshape(-1, pts.shape[-1]))[:, 0]
    return vals.reshape(shape) - V(np.zeros(V.nvars))


def _second_order_value(V, om, nu, A, d):
    """Stacked-graph value for one graph; om, nu of shape (K, N, n)."""
    N = om.shape[1]
    total = _v_values(V, nu).sum(axis=1) + (_v_values(V, om) * d).sum(axis=1)
    for i in range(N):
        for j in range(N):
            if A[i, j] != 0.0:
                total = total + 0.5 * A[i, j] * _v_values(V, om[:, j] - om[:, i])
    return total


def lyapunov_trace(result: SimulationResult, V: Polynomial, schedule: SwitchingSchedule) -> np.ndarray:
    """Monitor function on the grid, using the graph active at each instant."""
    if V.nvars != result.omega.shape[2]:
        raise DimensionError("V must have one variable per state coordinate")
    if result.order == 1:
        return _v_values(V, result.omega).sum(axis=1)
    gg = result.grid_graph
    out = np.empty(len(result.t))
    for gi, g in enumerate(schedule.graphs):
        sel = gg == gi
        if sel.any():
            out[sel] = _second_order_value(V, result.omega[sel], result.nu[sel], g.adjacency, g.leader_gains)
    return out


@dataclass
class MonitorReport:
    ok: bool
    worst_increase: float  # largest relative per-step increase within subintervals
    violations: int
    jumps: list  # (t, left value, right value) at switch instants

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "worst_increase": self.worst_increase,
            "violations": self.violations,
            "jumps": [list(j) for j in self.jumps],
        }


def lyapunov_monitor(result: SimulationResult, V: Polynomial, schedule: SwitchingSchedule, rtol: float = 1e-8) -> MonitorReport:
    """Check per-step decrease; graph-dependent traces are compared on one graph per step.

    For order 2 each step ``k -> k+1`` is evaluated with the graph of step k
    at both ends (the left limit at a switch instant), and the change of value
    across each switch is reported separately as a jump.
    """
    trace = lyapunov_trace(result, V, schedule)
    if result.order == 1:
        left_end = trace[1:]
    else:
        left_end = np.empty(len(result.t) - 1)
        for gi, g in enumerate(schedule.graphs):
            sel = np.flatnonzero(result.step_graph == gi)
            if sel.size:
                left_end[sel] = _second_order_value(V, result.omega[sel + 1], result.nu[sel + 1], g.adjacency, g.leader_gains)
    start = trace[:-1]
    rel = (left_end - start) / (1.0 + np.abs(start))
    bad = rel > rtol
    jumps = []
    if result.order == 2:
        idx = {round(s[0] / (result.t[1] - result.t[0])) for s in result.switches}
        for k in sorted(idx):
            jumps.append((float(result.t[k]), float(left_end[k - 1]), float(trace[k])))
    worst = float(rel.max()) if rel.size else 0.0
    return MonitorReport(not bad.any(), worst, int(bad.sum()), jumps)


def consensus_time(result: SimulationResult, epsilon: float) -> float | None:
    """Earliest grid time after which every recorded error stays within ``epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    above = np.flatnonzero(result.max_error() > epsilon)
    if above.size == 0:
        return float(result.t[0])
    last = above[-1]
    return None if last + 1 >= len(result.t) else float(result.t[last + 1])


def to_csv(result: SimulationResult, lyap: np.ndarray | None = None) -> str:
    """Trajectory table; one row per grid point, deterministic formatting."""
    N = result.omega.shape[1]
    cols = [result.t[:, None], result.pos_err]
    vel = result.vel_err if result.nu is not None else np.full((len(result.t), N), np.nan)
    cols.append(vel)
    cols.append((lyap if lyap is not None else np.full(len(result.t), np.nan))[:, None])
    cols.append(result.grid_graph[:, None].astype(float))
    table = np.hstack(cols)
    header = ",".join(["t"] + [f"pos_err_{i + 1}" for i in range(N)] + [f"vel_err_{i + 1}" for i in range(N)] + ["lyap", "graph_index"])
    buf = io.StringIO()
    fmt = ["%.6f"] + ["%.12e"] * (2 * N + 1) + ["%d"]
    np.savetxt(buf, table, fmt=fmt, delimiter=",", header=header, comments="")
    return buf.getvalue()
