import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from consensus_sos.graph import SwitchingSchedule, TopologyGraph, graph_at, reference_schedule
from consensus_sos.poly import PolyVector
from consensus_sos.sim import (
    AlignmentError,
    DivergenceError,
    FirstOrderState,
    SecondOrderErrorState,
    consensus_time,
    first_order_rhs,
    integrate,
    lyapunov_monitor,
    lyapunov_trace,
    second_order_error_rhs,
    to_csv,
)
from conftest import poly

X = PolyVector([poly(1, {(1,): 1.0})])
LEADER_ONLY = TopologyGraph.from_edges(1, [], {0: 1.0})


def single_graph_schedule(g, duration=0.1):
    return SwitchingSchedule([g], [(0, duration)], [0], duration)


def scalar_decay(dt, T=1.0):
    """z' = -z, z(0) = 1, via one follower tracking a leader at 0."""
    state = FirstOrderState(np.array([[1.0]]), np.zeros(1))
    return integrate(single_graph_schedule(LEADER_ONLY), state, dt=dt, T=T, h=X)


# right-hand sides -------------------------------------------------------------------------

def test_first_order_rhs_examples():
    lead = FirstOrderState(np.array([[2.0]]), np.zeros(1))
    assert first_order_rhs(lead, LEADER_ONLY, X).ravel() == pytest.approx([-2.0])
    pair = TopologyGraph.from_edges(2, [(0, 1)])
    out = first_order_rhs(FirstOrderState(np.array([[1.0], [0.0]]), np.zeros(1)), pair, X)
    assert out.ravel() == pytest.approx([-1.0, 1.0])


def test_consensus_is_equilibrium_of_rhs(example):
    g = example.schedule.graphs[0]
    zg = np.array([0.3, -0.2])
    h = example.h1
    out = first_order_rhs(FirstOrderState(np.tile(zg, (4, 1)), zg), g, h)
    assert np.abs(out).max() == 0.0
    dom, dnu = second_order_error_rhs(SecondOrderErrorState(np.zeros((4, 2)), np.zeros((4, 2)), zg), g, example.h1, example.h2)
    assert np.abs(dom).max() == 0.0 and np.abs(dnu).max() == 0.0


def test_second_order_damped_oscillator():
    s = SecondOrderErrorState(np.array([[0.7]]), np.array([[-0.4]]), np.zeros(1))
    dom, dnu = second_order_error_rhs(s, LEADER_ONLY, X, X)
    assert dom.ravel() == pytest.approx([-0.4])
    assert dnu.ravel() == pytest.approx([-0.7 + 0.4])


def test_leader_term_uses_oddness():
    cubic = PolyVector([poly(1, {(3,): 2.0, (1,): 0.5})])
    s = SecondOrderErrorState(np.array([[1.3]]), np.zeros((1, 1)), np.zeros(1))
    _, dnu = second_order_error_rhs(s, LEADER_ONLY, cubic, X)
    assert dnu[0, 0] == pytest.approx(-(2.0 * 1.3**3 + 0.5 * 1.3))


def test_rhs_dimension_checks():
    from consensus_sos.poly import DimensionError

    with pytest.raises(DimensionError):
        first_order_rhs(FirstOrderState(np.zeros((2, 1)), np.zeros(1)), LEADER_ONLY, X)


# integration ------------------------------------------------------------------------------

def test_exponential_oracle():
    res = scalar_decay(1e-3)
    assert res.omega[-1, 0, 0] == pytest.approx(np.exp(-1.0), abs=1e-9)
    assert res.t[-1] == pytest.approx(1.0)
    assert np.all(np.diff(res.t) > 0)


def test_rk4_order():
    e1 = abs(scalar_decay(0.1).omega[-1, 0, 0] - np.exp(-1.0))
    e2 = abs(scalar_decay(0.05).omega[-1, 0, 0] - np.exp(-1.0))
    assert 12 <= e1 / e2 <= 20


def test_first_order_lyapunov_closed_form():
    res = scalar_decay(1e-3)
    trace = lyapunov_trace(res, poly(1, {(2,): 1.0}), single_graph_schedule(LEADER_ONLY))
    assert np.abs(trace - np.exp(-2 * res.t)).max() <= 1e-8
    report = lyapunov_monitor(res, poly(1, {(2,): 1.0, (0,): 5.0}), single_graph_schedule(LEADER_ONLY))
    assert report.ok and not report.jumps


def test_consensus_time_examples():
    res = scalar_decay(1e-3, T=2.0)
    assert abs(consensus_time(res, np.exp(-1.0)) - 1.0) <= 1e-3 + 1e-12  # one step
    still = integrate(
        single_graph_schedule(LEADER_ONLY), FirstOrderState(np.array([[0.5]]), np.array([0.5])), dt=1e-3, T=0.5, h=X
    )
    assert consensus_time(still, 1e-6) == 0.0
    assert consensus_time(res, 1e-12) is None
    with pytest.raises(ValueError):
        consensus_time(res, 0.0)


def test_second_order_equilibrium_over_many_steps(example):
    zg, vg = np.array([1.0, 1.5]), np.array([0.0, 0.5])
    state = SecondOrderErrorState.from_absolute(np.tile(zg, (4, 1)), np.tile(vg, (4, 1)), zg, vg)
    res = integrate(example.schedule, state, dt=1e-4, T=1.0, h1=example.h1, h2=example.h2)
    assert len(res.t) == 10_001
    assert res.max_error().max() <= 1e-12
    # absolute positions follow the leader
    assert np.allclose(res.positions()[-1], zg + vg * 1.0, atol=1e-12)


@settings(max_examples=10)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_first_order_equilibrium(a, b):
    zg = np.array([a, b])
    sched = reference_schedule()
    h = PolyVector([poly(2, {(1, 0): 1.0, (3, 0): 0.2}), poly(2, {(0, 1): 1.0})])
    res = integrate(sched, FirstOrderState(np.tile(zg, (4, 1)), zg), dt=1e-4, T=0.03, h=h)
    assert res.pos_err.max() <= 1e-12


def test_alignment_error():
    with pytest.raises(AlignmentError):
        integrate(reference_schedule(), FirstOrderState(np.zeros((4, 1)), np.zeros(1)), dt=3e-4, T=0.03, h=X)
    with pytest.raises(AlignmentError):
        integrate(reference_schedule(), FirstOrderState(np.zeros((4, 1)), np.zeros(1)), dt=1e-4, T=0.00015, h=X)


def test_divergence_error():
    # z' = z^3 from z = 2 blows up at t = 1/8
    h = PolyVector([poly(1, {(3,): -1.0})])
    with pytest.raises(DivergenceError) as err:
        integrate(single_graph_schedule(LEADER_ONLY), FirstOrderState(np.array([[2.0]]), np.zeros(1)), dt=1e-3, T=1.0, h=h)
    assert 0.1 < err.value.t <= 0.2


def test_switch_log_matches_schedule(example):
    sched = example.schedule
    res = integrate(sched, SecondOrderErrorState(np.ones((4, 2)), np.zeros((4, 2)), np.zeros(2)), dt=1e-4, T=0.05,
                    h1=example.h1, h2=example.h2)
    expected = [graph_at(sched, float(t)) for t in res.t[:-1]]
    assert res.step_graph.tolist() == expected
    for t, a, b in res.switches:
        k = round(t / 1e-4)
        assert res.step_graph[k - 1] == a and res.step_graph[k] == b
        assert abs(t / 1e-3 - round(t / 1e-3)) < 1e-9


def test_csv_is_deterministic(example):
    def run():
        state = SecondOrderErrorState.from_absolute(example.z, example.v, example.z_gamma, example.v_gamma)
        res = integrate(example.schedule, state, dt=1e-4, T=0.01, h1=example.h1, h2=example.h2)
        return to_csv(res, lyapunov_trace(res, example.V, example.schedule))

    a, b = run(), run()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "t,pos_err_1,pos_err_2,pos_err_3,pos_err_4,vel_err_1,vel_err_2,vel_err_3,vel_err_4,lyap,graph_index"
    assert len(lines) == 1 + 101


def test_first_order_csv_has_empty_velocity():
    text = to_csv(scalar_decay(0.1))
    row = text.splitlines()[1].split(",")
    assert row[2] == "nan"
