import os
import subprocess
import sys

import numpy as np
import pytest

from morselab import _kernels
from morselab.model import make_system
from morselab.semiflow import FlowConfig, flow_states


def test_python_backend_always_available():
    backends = _kernels.available_backends()
    assert "python" in backends
    assert _kernels.backend_name in backends


def test_status_codes_are_distinct():
    assert len({_kernels.STATUS_RAN, _kernels.STATUS_SETTLED, _kernels.STATUS_ESCAPED}) == 3


@pytest.mark.skipif(
    "compiled" not in _kernels.available_backends(),
    reason="compiled extension not built",
)
def test_backends_agree_analytic():
    backends = _kernels.available_backends()
    sys_ = make_system("double_well")
    spec = sys_.kernel_spec()
    rng = np.random.default_rng(0)
    Z = rng.uniform(-1.2, 1.2, size=(64, 2))
    results = {}
    for name, mod in backends.items():
        out, status, steps = mod.flow_batch(spec, Z.copy(), 200, 0.01, 0, None, 0.0, 16)
        results[name] = (out, status, steps)
    a, b = results["python"], results["compiled"]
    assert np.max(np.abs(a[0] - b[0])) < 1e-12
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[2], b[2])


@pytest.mark.skipif(
    "compiled" not in _kernels.available_backends(),
    reason="compiled extension not built",
)
def test_backends_agree_loop():
    backends = _kernels.available_backends()
    sys_ = make_system("pendulum_circle")
    spec = sys_.kernel_spec()
    rng = np.random.default_rng(1)
    Z = rng.normal(0.3, 0.2, size=(16, sys_.n_state))
    h = 0.002
    stiff = sys_.stiff_solver(h)
    results = {}
    for name, mod in backends.items():
        out, status, steps = mod.flow_batch(spec, Z.copy(), 150, h, 1, stiff, 0.0, 16)
        results[name] = out
    assert np.max(np.abs(results["python"] - results["compiled"])) < 1e-11


@pytest.mark.skipif(
    "compiled" not in _kernels.available_backends(),
    reason="compiled extension not built",
)
def test_backends_agree_grad_batch():
    backends = _kernels.available_backends()
    sys_ = make_system("saddle3d")
    spec = sys_.kernel_spec()
    rng = np.random.default_rng(2)
    Z = rng.uniform(-1.0, 1.0, size=(32, 3))
    g_py = backends["python"].grad_batch(spec, Z)
    g_c = backends["compiled"].grad_batch(spec, Z)
    assert np.max(np.abs(g_py - g_c)) < 1e-14
    assert np.max(np.abs(g_py - sys_.grad_many(Z))) < 1e-12


def test_env_override_forces_python_backend():
    code = (
        "from morselab import _kernels; print(_kernels.backend_name)"
    )
    env = dict(os.environ, MORSELAB_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "python"


def test_settle_and_escape_status():
    sys_ = make_system("double_well")
    near_min = np.array([[1.0 + 1e-8, 0.0]])
    out, status, _ = flow_states(sys_, near_min, 5.0, FlowConfig(), settle_tol=1e-7)
    assert status[0] == _kernels.STATUS_SETTLED
    assert np.allclose(out[0], [1.0, 0.0], atol=1e-6)

    # far outside the wells the explicit step overshoots and diverges;
    # the row must report escape and keep its last finite checkpoint
    far = np.array([[80.0, 0.0]])
    out, status, _ = flow_states(sys_, far, 10.0, FlowConfig())
    assert status[0] == _kernels.STATUS_ESCAPED
    assert np.all(np.isfinite(out[0]))
