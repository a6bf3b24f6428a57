import math

import numpy as np
import pytest

from morselab.critical import (
    MultistartSpec,
    find_critical_points,
    newton_polish,
)
from morselab.errors import ConfigError
from morselab.model import make_system


def test_double_well_critical_set(dw, dw_crit):
    assert len(dw_crit.points) == 3
    by_idx = {k: len(v) for k, v in dw_crit.by_index().items()}
    assert by_idx == {0: 2, 1: 1}
    mins = dw_crit.at_index(0)
    assert sorted(round(float(p.state[0]), 9) for p in mins) == [-1.0, 1.0]
    for p in mins:
        assert p.action == pytest.approx(0.0, abs=1e-12)
        assert abs(p.state[1]) < 1e-9
    saddle = dw_crit.at_index(1)[0]
    assert np.allclose(saddle.state, 0.0, atol=1e-9)
    assert saddle.action == pytest.approx(1.0)
    assert sorted(saddle.eigenvalues.tolist()) == pytest.approx([-4.0, 2.0])
    assert saddle.spectral_gap == pytest.approx(2.0)
    assert saddle.grad_norm < 1e-9


def test_labels_sorted_by_action(dw_crit):
    actions = [p.action for p in dw_crit.points]
    assert actions == sorted(actions)
    assert [p.label for p in dw_crit.points] == ["cp0", "cp1", "cp2"]
    assert dw_crit.by_label("cp2").morse_index == 1
    with pytest.raises(ConfigError):
        dw_crit.by_label("nope")


def test_saddle3d_critical_set(s3d_crit):
    by_idx = {k: len(v) for k, v in s3d_crit.by_index().items()}
    assert by_idx == {0: 4, 1: 4, 2: 1}
    top = s3d_crit.at_index(2)[0]
    assert np.allclose(top.state, 0.0, atol=1e-8)
    assert top.action == pytest.approx(2.0)
    assert s3d_crit.max_index() == 2
    assert s3d_crit.min_value_gap() == pytest.approx(1.0)


def test_level_cuts_the_set(dw):
    low = find_critical_points(dw, 0.5, seed=11)
    assert {p.morse_index for p in low.points} == {0}
    assert len(low.points) == 2


def test_pendulum_two_constant_loops(pend, pend_crit):
    assert len(pend_crit.points) == 2
    lo, hi = pend_crit.points
    assert lo.action == pytest.approx(-0.5, abs=1e-6)
    assert hi.action == pytest.approx(0.5, abs=1e-6)
    assert (lo.morse_index, hi.morse_index) == (0, 1)
    # constant loops, canonicalized into the fundamental cell
    assert np.allclose(lo.state, 0.0, atol=1e-8)
    assert np.allclose(hi.state, 0.5, atol=1e-8)


def test_pendulum_gap_matches_circulant_formula(pend_crit):
    # discrete spectrum of the index-1 loop: 4 N^2 sin^2(pi m / N) - kappa (2 pi)^2
    kappa, N = 0.5, 16
    pot = kappa * (2 * math.pi) ** 2
    kin1 = 4.0 * N * N * math.sin(math.pi / N) ** 2
    hi = pend_crit.points[1]
    assert hi.spectral_gap == pytest.approx(min(pot, kin1 - pot), rel=1e-9)
    assert float(np.min(np.abs(hi.eigenvalues - (-pot)))) < 1e-9


def test_duplicate_starts_merge(dw):
    starts = np.array([[0.9, 0.1]] * 40 + [[-0.9, -0.1]] * 40)
    crit = find_critical_points(
        dw, 2.0, multistart=MultistartSpec(count=2), seed=0, extra_starts=starts
    )
    assert len(crit.points) <= 3


def test_newton_polish_converges(dw):
    z = newton_polish(dw, np.array([0.2, 0.3]))
    assert z is not None
    assert np.allclose(z, 0.0, atol=1e-10)
    assert float(np.linalg.norm(dw.grad(z))) < 1e-9
    # hopeless start: a plateau past the box edge gives up cleanly
    assert newton_polish(dw, np.array([np.inf, 0.0])) is None


def test_multistart_box_shape_checked(dw):
    bad = MultistartSpec(count=8, box=np.array([(-1.0, 1.0)]))
    with pytest.raises(ConfigError):
        find_critical_points(dw, 2.0, multistart=bad, seed=0)


def test_find_near(dw_crit):
    p = dw_crit.find_near(np.array([0.99999, 1e-6]))
    assert p is not None and p.morse_index == 0
    assert dw_crit.find_near(np.array([0.5, 0.5])) is None


def test_neg_frame_shape_and_orthonormality(dw, dw_crit):
    saddle = dw_crit.at_index(1)[0]
    F = saddle.neg_frame
    assert F.shape == (2, 1)
    w = dw.metric_weight()
    assert w * float(F[:, 0] @ F[:, 0]) == pytest.approx(1.0)
    # the frame spans the descending direction of the Hessian
    H = dw.hessian(saddle.state)
    v = F[:, 0]
    assert float(v @ H @ v) < 0
