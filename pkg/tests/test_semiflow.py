import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morselab.errors import ConfigError, NonFiniteState, StepLimitExceeded
from morselab.model import make_system
from morselab.semiflow import (
    ERR,
    IN,
    OUT,
    ActionBelow,
    FlowConfig,
    FunctionPredicate,
    PredicateIntersection,
    Trajectory,
    flow_state,
    flow_states,
    integrate,
    settle,
)


def test_zero_time_is_identity(dw):
    rng = np.random.default_rng(0)
    Z = rng.uniform(-1.0, 1.0, (8, 2))
    out, status, steps = flow_states(dw, Z, 0.0)
    assert np.array_equal(out, Z)
    assert not status.any() and not steps.any()


def test_negative_time_rejected(dw):
    with pytest.raises(ConfigError):
        flow_states(dw, np.zeros((1, 2)), -1.0)


def test_step_budget_enforced(dw):
    with pytest.raises(StepLimitExceeded):
        flow_states(dw, np.zeros((1, 2)), 10.0, FlowConfig(h=0.01, max_steps=5))


def test_batch_matches_single(dw):
    rng = np.random.default_rng(1)
    Z = rng.uniform(-1.2, 1.2, (6, 2))
    out, status, _ = flow_states(dw, Z, 1.3)
    assert not status.any()
    for i in range(Z.shape[0]):
        assert np.array_equal(out[i], flow_state(dw, Z[i], 1.3))


def test_worker_split_is_exact(dw):
    # chunked threading must be bitwise identical to the serial run
    rng = np.random.default_rng(2)
    Z = rng.uniform(-1.2, 1.2, (600, 2))
    ref, st1, sp1 = flow_states(dw, Z, 0.5, FlowConfig(workers=1))
    par, st4, sp4 = flow_states(dw, Z, 0.5, FlowConfig(workers=4))
    assert np.array_equal(ref, par)
    assert np.array_equal(st1, st4)
    assert np.array_equal(sp1, sp4)


def test_semigroup_property(dw):
    z = np.array([0.4, -0.7])
    a = flow_state(dw, flow_state(dw, z, 0.75), 0.5)
    b = flow_state(dw, z, 1.25)
    assert np.max(np.abs(a - b)) < 1e-12


def test_action_never_increases(dw):
    rng = np.random.default_rng(3)
    for z in rng.uniform(-1.3, 1.3, (5, 2)):
        traj = integrate(dw, z, 4.0, n_records=65)
        assert traj.max_action_increase() <= traj.action_increase_budget()


def test_trajectory_shape_and_times(dw):
    traj = integrate(dw, np.array([0.3, 0.5]), 2.0, n_records=33)
    assert isinstance(traj, Trajectory)
    assert traj.states.shape == (traj.times.size, 2)
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(2.0)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.actions == pytest.approx(dw.action_many(traj.states))


def test_escape_raises_for_single_state(dw):
    with pytest.raises(NonFiniteState):
        flow_state(dw, np.array([80.0, 0.0]), 5.0)


def test_settle_reaches_minimum(dw):
    Z, settled, escaped = settle(dw, np.array([[0.9, 0.4], [-0.3, 0.1]]))
    assert settled.all() and not escaped.any()
    assert np.allclose(Z[0], [1.0, 0.0], atol=1e-6)
    assert np.allclose(Z[1], [-1.0, 0.0], atol=1e-6)


def test_loop_flow_decreases_action(pend):
    rng = np.random.default_rng(4)
    z = rng.normal(0.45, 0.15, pend.n_state)
    traj = integrate(pend, z, 0.5, n_records=33)
    assert traj.max_action_increase() <= traj.action_increase_budget()
    # long flow lands on one of the two constant loops
    zz = flow_state(pend, z, 40.0)
    assert min(
        float(np.max(np.abs(zz - 0.0))), float(np.max(np.abs(zz - 0.5)))
    ) < 1e-3


def test_loop_schemes_agree(pend):
    # first-order splitting at a small step against fourth-order reference
    z = np.full(pend.n_state, 0.27)
    a = flow_state(pend, z, 0.25, FlowConfig(scheme="semi_implicit", h=0.0002))
    b = flow_state(pend, z, 0.25, FlowConfig(scheme="rk4"))
    assert np.max(np.abs(a - b)) < 1e-4


def test_semi_implicit_is_loop_only(dw):
    with pytest.raises(ConfigError):
        flow_states(dw, np.zeros((1, 2)), 1.0, FlowConfig(scheme="semi_implicit"))
    with pytest.raises(ConfigError):
        flow_states(dw, np.zeros((1, 2)), 1.0, FlowConfig(scheme="verlet"))


def test_action_below_tri_state(dw):
    pred = ActionBelow(dw, 1.0)
    Z = np.array([[1.0, 0.0], [0.0, 2.0], [np.nan, 0.0]])
    assert pred.many(Z).tolist() == [IN, OUT, ERR]
    assert pred(np.array([1.0, 0.0]))
    assert pred.classify(np.array([0.0, 2.0])) == "out"


def test_predicate_combinators(dw):
    left = FunctionPredicate(lambda Z: np.where(Z[:, 0] > 0, IN, OUT).astype(np.int8))
    both = PredicateIntersection(left, ActionBelow(dw, 1.0))
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert both.many(Z).tolist() == [IN, OUT]


@settings(max_examples=20, deadline=None)
@given(
    t1=st.floats(0.05, 1.0),
    t2=st.floats(0.05, 1.0),
    x=st.floats(-1.2, 1.2),
    y=st.floats(-1.2, 1.2),
)
def test_semigroup_property_random(t1, t2, x, y):
    sys_ = make_system("double_well")
    z = np.array([x, y])
    a = flow_state(sys_, flow_state(sys_, z, t1), t2)
    b = flow_state(sys_, z, t1 + t2)
    assert np.max(np.abs(a - b)) < 1e-9
