import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morselab.errors import ConfigError, InvalidState
from morselab.model import LoopSystem, make_system

ALL_KINDS = [
    ("double_well", {}),
    ("saddle3d", {}),
    ("quadratic_well", {"dim": 3}),
    ("linear_diag", {"spectrum": [-1.0, 2.0, 0.5]}),
    ("cubic_saddle", {}),
    ("coupled_saddle", {"beta": 0.2}),
    ("pendulum_circle", {}),
    ("locked_circle", {}),
    ("torus_wells", {}),
]


def fd_grad(sys, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (sys.action(z + e) - sys.action(z - e)) / (2 * h)
    return g


def probe_states(sys, n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.9, 0.9, size=(n, sys.n_state))


@pytest.mark.parametrize("kind,params", ALL_KINDS)
def test_grad_matches_fd(kind, params):
    # the metric gradient times the quadrature weight is the raw partial
    sys = make_system(kind, **params)
    for z in probe_states(sys, 5, seed=1):
        g = sys.metric_weight() * sys.grad(z)
        ref = fd_grad(sys, z)
        scale = max(1.0, float(np.max(np.abs(ref))))
        assert np.max(np.abs(g - ref)) / scale < 1e-5


@pytest.mark.parametrize("kind,params", ALL_KINDS)
def test_hessian_matches_grad_jacobian(kind, params):
    sys = make_system(kind, **params)
    h = 1e-6
    for z in probe_states(sys, 3, seed=2):
        H = sys.hessian_raw(z)
        assert np.allclose(H, H.T, atol=1e-9)
        for i in range(sys.n_state):
            e = np.zeros(sys.n_state)
            e[i] = h
            col = (sys.grad(z + e) - sys.grad(z - e)) / (2 * h)
            scale = max(1.0, float(np.max(np.abs(col))))
            assert np.max(np.abs(H[:, i] - col)) / scale < 1e-5


@pytest.mark.parametrize("kind,params", ALL_KINDS)
def test_batched_forms_match_scalar(kind, params):
    sys = make_system(kind, **params)
    Z = probe_states(sys, 7, seed=3)
    a = sys.action_many(Z)
    g = sys.grad_many(Z)
    for i in range(Z.shape[0]):
        assert a[i] == pytest.approx(sys.action(Z[i]), abs=1e-14)
        assert np.array_equal(g[i], sys.grad(Z[i]))


def test_double_well_known_values(dw):
    # quartic wells at x = +-1, barrier of height 1 at the origin
    assert dw.action(np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
    assert dw.action(np.array([-1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
    assert dw.action(np.array([0.0, 0.0])) == pytest.approx(1.0)
    g = dw.grad(np.array([0.5, 0.3]))
    assert g == pytest.approx([4 * 0.125 - 4 * 0.5, 0.6])
    H = dw.hessian_raw(np.array([0.0, 0.0]))
    assert np.allclose(H, np.diag([-4.0, 2.0]))


def test_saddle3d_known_values(s3d):
    assert s3d.action(np.zeros(3)) == pytest.approx(2.0)
    assert s3d.action(np.array([1.0, -1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
    H = s3d.hessian_raw(np.zeros(3))
    assert np.allclose(H, np.diag([-4.0, -4.0, 2.0]))


def test_constant_loop_actions(pend):
    n = pend.n_loop
    flat = np.zeros(n)
    top = np.full(n, 0.5)
    # kinetic term vanishes, leaving minus the potential
    assert pend.action(flat) == pytest.approx(-0.5, abs=1e-12)
    assert pend.action(top) == pytest.approx(0.5, abs=1e-12)
    assert np.max(np.abs(pend.grad(flat))) < 1e-12
    assert np.max(np.abs(pend.grad(top))) < 1e-12


def test_torus_constant_loop_actions():
    tor = make_system("torus_wells")
    n = tor.n_loop

    def const(u, v):
        X = np.tile([u, v], (n, 1))
        return tor.flatten(X)

    assert tor.action(const(0.0, 0.0)) == pytest.approx(-0.7, abs=1e-12)
    assert tor.action(const(0.5, 0.0)) == pytest.approx(0.1, abs=1e-12)
    assert tor.action(const(0.0, 0.5)) == pytest.approx(-0.1, abs=1e-12)
    assert tor.action(const(0.5, 0.5)) == pytest.approx(0.7, abs=1e-12)


def test_loop_translation_invariance(pend):
    rng = np.random.default_rng(4)
    z = rng.normal(0.3, 0.2, pend.n_state)
    shifted = pend.translate(z, [1])
    assert np.allclose(shifted, z + 1.0)
    assert pend.action(shifted) == pytest.approx(pend.action(z), abs=1e-12)
    assert np.allclose(pend.grad(shifted), pend.grad(z), atol=1e-12)


def test_loop_canonicalize_roundtrip(pend):
    z = np.linspace(2.2, 2.9, pend.n_state)
    zc, shift = pend.canonicalize(z)
    assert np.allclose(pend.translate(zc, shift.astype(int)), z)
    assert 0.0 <= float(np.mean(zc)) < 1.0


def test_state_distance_mod_deck(pend):
    rng = np.random.default_rng(5)
    z = rng.normal(0.0, 0.1, pend.n_state)
    assert pend.state_distance(z, z + 3.0) == pytest.approx(0.0, abs=1e-12)
    assert pend.state_distance(z, z + 0.5) > 0.0


def test_euclidean_loops_reject_winding():
    with pytest.raises(ConfigError):
        LoopSystem(
            "euclidean",
            make_system("pendulum_circle").potential,
            16,
            [1],
        )


def test_metric_weight_is_segment_length(pend):
    # loop inner product carries the 1/N quadrature weight
    assert pend.metric_weight() == pytest.approx(1.0 / pend.n_loop)
    u = np.ones(pend.n_state)
    assert pend.norm(u) == pytest.approx(1.0)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        make_system("no_such_system")
    with pytest.raises(ConfigError):
        make_system("linear_diag", spectrum=[0.0, 1.0])


def test_validate_state_shape(dw):
    with pytest.raises(InvalidState):
        dw.validate_state(np.zeros(3))
    with pytest.raises(InvalidState):
        dw.validate_state(np.array([np.nan, 0.0]))


@settings(max_examples=25, deadline=None)
@given(
    x=st.floats(-1.5, 1.5),
    y=st.floats(-1.5, 1.5),
)
def test_double_well_gradient_is_action_derivative(x, y):
    sys = make_system("double_well")
    z = np.array([x, y])
    ref = fd_grad(sys, z, h=1e-6)
    scale = max(1.0, float(np.max(np.abs(ref))))
    assert np.max(np.abs(sys.grad(z) - ref)) / scale < 1e-6
