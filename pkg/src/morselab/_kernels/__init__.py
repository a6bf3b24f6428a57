"""Stepping-kernel backend selection.

The compiled extension `flowcore` is preferred when it was built; the
numpy implementation `flowpy` is the fallback.  Both export the same
contract (`flow_batch`, `grad_batch`, status codes), so callers never
branch on the backend.  Set MORSELAB_BACKEND=python or =compiled to
force one side (the benchmark and the agreement tests do).
"""

from __future__ import annotations

import os

from . import flowpy as _flowpy

STATUS_RAN = _flowpy.STATUS_RAN
STATUS_SETTLED = _flowpy.STATUS_SETTLED
STATUS_ESCAPED = _flowpy.STATUS_ESCAPED

_force = os.environ.get("MORSELAB_BACKEND", "").strip().lower()

_impl = None
if _force in ("", "auto", "compiled"):
    try:
        from . import flowcore as _flowcore  # type: ignore[attr-defined]

        _impl = _flowcore
    except ImportError:
        _impl = None
if _impl is None:
    if _force == "compiled":
        raise ImportError("MORSELAB_BACKEND=compiled but the extension is not built")
    _impl = _flowpy

backend_name: str = _impl.BACKEND
flow_batch = _impl.flow_batch
grad_batch = _impl.grad_batch


def available_backends() -> dict[str, object]:
    """Importable backend modules keyed by name."""
    out: dict[str, object] = {"python": _flowpy}
    try:
        from . import flowcore as _fc  # type: ignore[attr-defined]

        out["compiled"] = _fc
    except ImportError:
        pass
    return out
