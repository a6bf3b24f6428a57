"""Time integration of the downward gradient semi-flow dz/ds = -grad S(z).

Fixed-step schemes only, so runs are bit-reproducible: classical RK4, and
a semi-implicit Euler for loop systems that treats the stiff discrete
Laplacian implicitly (the explicit remainder is the smooth potential
force, so step sizes are limited by the potential, not by N^2).

Escape past the system bounding box or a non-finite state is reported,
never clamped: batch APIs return a per-row status, single-state APIs
raise NonFiniteState.

The module also owns the tri-state membership machinery built on the
flow: a `Predicate` answers in / out / error on batches of states, and
`TimeTPreimage` composes any predicate with the time-T flow map.  These
are the building blocks for attractor-neighborhood sets and filtration
levels.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, InvalidState, NonFiniteState, StepLimitExceeded
from .model import LoopSystem, ModelSystem

__all__ = [
    "FlowConfig",
    "Trajectory",
    "flow_states",
    "flow_state",
    "integrate",
    "settle",
    "Predicate",
    "FunctionPredicate",
    "ActionBelow",
    "ActionAbove",
    "PredicateIntersection",
    "PredicateUnion",
    "TimeTPreimage",
    "IN",
    "OUT",
    "ERR",
]

SCHEME_RK4 = 0
SCHEME_IMEX = 1

IN, OUT, ERR = np.int8(1), np.int8(0), np.int8(-1)

_PARALLEL_MIN_ROWS = 512


@dataclasses.dataclass
class FlowConfig:
    """Integration parameters; `auto` resolves per system family."""

    scheme: str = "auto"
    h: Optional[float] = None
    max_steps: int = 2_000_000
    check_every: int = 16
    workers: int = 1

    def resolved(self, sys: ModelSystem) -> tuple[int, float]:
        name = self.scheme
        if name == "auto":
            name = "semi_implicit" if sys.is_loop else "rk4"
        if name == "rk4":
            scheme = SCHEME_RK4
        elif name == "semi_implicit":
            scheme = SCHEME_IMEX
            if not isinstance(sys, LoopSystem):
                raise ConfigError("semi_implicit scheme is loop-only")
        else:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        h = self.h
        if h is None:
            if not sys.is_loop:
                h = 0.01
            elif scheme == SCHEME_IMEX:
                h = 0.002
            else:
                # RK4 stability limit for the discrete Laplacian is ~0.7/N^2
                h = 0.25 / float(sys.n_loop) ** 2
        if h <= 0.0:
            raise ConfigError("step size must be positive")
        return scheme, float(h)


def _split_steps(T: float, h: float, max_steps: int) -> tuple[int, float]:
    """Whole steps plus one optional trailing partial step covering T."""
    if T < 0.0:
        raise ConfigError("flow time must be non-negative")
    n = int(math.floor(T / h + 1e-9))
    rem = T - n * h
    if rem <= 1e-10 * max(1.0, abs(T)):
        rem = 0.0
    total = n + (1 if rem > 0.0 else 0)
    if total > max_steps:
        raise StepLimitExceeded(
            f"flow to T={T} at h={h} needs {total} steps, budget is {max_steps}"
        )
    return n, rem


def _stiff_matrix(sys: ModelSystem, scheme: int, h: float):
    if scheme != SCHEME_IMEX:
        return None
    assert isinstance(sys, LoopSystem)
    return sys.stiff_solver(h)


def _kernel_call(sys, spec, Z, n_steps, h, scheme, settle_tol, check_every):
    return _kernels.flow_batch(
        spec, Z, n_steps, h, scheme, _stiff_matrix(sys, scheme, h), settle_tol, check_every
    )


def flow_states(
    sys: ModelSystem,
    Z: np.ndarray,
    T: float,
    cfg: Optional[FlowConfig] = None,
    settle_tol: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flow a (B, n) stack of states for time T.

    Returns (states, status, steps) with per-row status 0 = ran, 1 =
    settled early, 2 = escaped (row holds the last finite checkpoint).
    """
    cfg = cfg or FlowConfig()
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != sys.n_state:
        raise InvalidState(f"batch shape {Z.shape}, expected (B, {sys.n_state})")
    B = Z.shape[0]
    scheme, h = cfg.resolved(sys)
    n, rem = _split_steps(T, h, cfg.max_steps)
    spec = sys.kernel_spec()
    if spec is None:
        raise ConfigError(f"system {sys.name} has no kernel form")

    status = np.zeros(B, dtype=np.int8)
    steps = np.zeros(B, dtype=np.int64)
    out = Z.copy()
    if B == 0 or (n == 0 and rem == 0.0):
        return out, status, steps

    def run(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        Zr = out[rows]
        st = np.zeros(rows.size, dtype=np.int8)
        sp = np.zeros(rows.size, dtype=np.int64)
        if n > 0:
            Zr, st, sp = _kernel_call(sys, spec, Zr, n, h, scheme, settle_tol, cfg.check_every)
        if rem > 0.0:
            live = st == _kernels.STATUS_RAN
            if np.any(live):
                Z2, st2, sp2 = _kernel_call(
                    sys, spec, Zr[live], 1, rem, scheme, settle_tol, cfg.check_every
                )
                Zr[live] = Z2
                st[live] = st2
                sp_live = sp[live]
                sp_live += sp2
                sp[live] = sp_live
        return Zr, st, sp

    workers = max(1, int(cfg.workers))
    if workers == 1 or B < _PARALLEL_MIN_ROWS:
        out, status, steps = run(np.arange(B))
    else:
        chunks = np.array_split(np.arange(B), workers)
        chunks = [c for c in chunks if c.size]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rows, (Zr, st, sp) in zip(chunks, pool.map(run, chunks)):
                out[rows] = Zr
                status[rows] = st
                steps[rows] = sp
    return out, status, steps


def flow_state(
    sys: ModelSystem,
    z: np.ndarray,
    T: float,
    cfg: Optional[FlowConfig] = None,
    settle_tol: float = 0.0,
) -> np.ndarray:
    """Flow one state for time T; raises NonFiniteState on escape."""
    z = sys.validate_state(z)
    Z, status, steps = flow_states(sys, z[None, :], T, cfg, settle_tol)
    if status[0] == _kernels.STATUS_ESCAPED:
        raise NonFiniteState(
            f"flow from {np.array2string(z, precision=4)} escaped after "
            f"{int(steps[0])} steps (T={T})"
        )
    return Z[0]


@dataclasses.dataclass
class Trajectory:
    """Recorded orbit samples of a single state under the semi-flow."""

    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    record_steps: np.ndarray
    settled: bool

    def max_action_increase(self) -> float:
        """Largest rise of the action between consecutive records."""
        if self.actions.size < 2:
            return 0.0
        return float(np.max(np.diff(self.actions)))

    def action_increase_budget(self, per_step: float = 1e-8) -> float:
        """Integrator tolerance: allowed rise scales with steps per record."""
        if self.record_steps.size < 2:
            return 0.0
        return per_step * float(np.max(np.diff(self.record_steps)))


def integrate(
    sys: ModelSystem,
    z0: np.ndarray,
    T: float,
    cfg: Optional[FlowConfig] = None,
    n_records: int = 129,
    settle_tol: float = 0.0,
) -> Trajectory:
    """Flow one state for time T, recording ~n_records samples."""
    cfg = cfg or FlowConfig()
    z = sys.validate_state(z0)
    scheme, h = cfg.resolved(sys)
    n, rem = _split_steps(T, h, cfg.max_steps)
    spec = sys.kernel_spec()
    if spec is None:
        raise ConfigError(f"system {sys.name} has no kernel form")

    n_records = max(2, int(n_records))
    bounds = np.unique(np.linspace(0, n, n_records).round().astype(np.int64))
    states = [z.copy()]
    times = [0.0]
    rec_steps = [0]
    cur = z[None, :].copy()
    settled = False
    for i in range(1, bounds.size):
        k = int(bounds[i] - bounds[i - 1])
        if k == 0:
            continue
        cur, st, sp = _kernel_call(sys, spec, cur, k, h, scheme, settle_tol, cfg.check_every)
        if st[0] == _kernels.STATUS_ESCAPED:
            raise NonFiniteState(
                f"trajectory escaped near t={times[-1] + float(sp[0]) * h:.6g}"
            )
        states.append(cur[0].copy())
        times.append(float(bounds[i]) * h)
        rec_steps.append(int(bounds[i]))
        if st[0] == _kernels.STATUS_SETTLED:
            settled = True
            break
    if rem > 0.0 and not settled:
        cur, st, sp = _kernel_call(sys, spec, cur, 1, rem, scheme, settle_tol, cfg.check_every)
        if st[0] == _kernels.STATUS_ESCAPED:
            raise NonFiniteState(f"trajectory escaped in the final partial step (T={T})")
        states.append(cur[0].copy())
        times.append(T)
        rec_steps.append(rec_steps[-1] + 1)
        settled = st[0] == _kernels.STATUS_SETTLED
    S = np.stack(states)
    return Trajectory(
        times=np.asarray(times),
        states=S,
        actions=sys.action_many(S),
        record_steps=np.asarray(rec_steps, dtype=np.int64),
        settled=settled,
    )


def settle(
    sys: ModelSystem,
    Z: np.ndarray,
    cfg: Optional[FlowConfig] = None,
    settle_tol: float = 1e-9,
    t_max: float = 200.0,
    t_chunk: float = 5.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flow each row until its gradient norm drops below settle_tol.

    Returns (states, settled mask, escaped mask).  Rows that neither
    settle nor escape within t_max are returned as-is with both flags
    False.
    """
    cfg = cfg or FlowConfig()
    Z = np.array(Z, dtype=np.float64, copy=True)
    B = Z.shape[0]
    settled = np.zeros(B, dtype=bool)
    escaped = np.zeros(B, dtype=bool)
    active = np.arange(B)
    t = 0.0
    while active.size and t < t_max:
        dt = min(t_chunk, t_max - t)
        Za, st, _ = flow_states(sys, Z[active], dt, cfg, settle_tol=settle_tol)
        Z[active] = Za
        settled[active] |= st == _kernels.STATUS_SETTLED
        escaped[active] |= st == _kernels.STATUS_ESCAPED
        active = active[st == _kernels.STATUS_RAN]
        t += dt
    return Z, settled, escaped


# ---------------------------------------------------------------------------
# tri-state membership predicates
# ---------------------------------------------------------------------------


class Predicate:
    """Membership test with explicit error reporting.

    `many` maps a (B, n) stack to int8 codes 1 (in), 0 (out), -1 (could
    not classify).  Errors propagate through compositions instead of
    masquerading as misses.
    """

    def many(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z: np.ndarray) -> bool:
        code = int(self.many(np.asarray(z, dtype=np.float64)[None, :])[0])
        if code == ERR:
            raise NonFiniteState("predicate could not classify the state")
        return code == IN

    def classify(self, z: np.ndarray) -> str:
        code = int(self.many(np.asarray(z, dtype=np.float64)[None, :])[0])
        return {1: "in", 0: "out", -1: "error"}[code]


class FunctionPredicate(Predicate):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def many(self, Z):
        return np.asarray(self.fn(Z), dtype=np.int8)


class ActionBelow(Predicate):
    """Strict sublevel test S(z) < cutoff."""

    def __init__(self, sys: ModelSystem, cutoff: float):
        self.sys = sys
        self.cutoff = float(cutoff)

    def many(self, Z):
        S = self.sys.action_many(np.asarray(Z, dtype=np.float64))
        out = np.where(S < self.cutoff, IN, OUT).astype(np.int8)
        out[~np.isfinite(S)] = ERR
        return out


class ActionAbove(Predicate):
    """Strict superlevel test S(z) > cutoff."""

    def __init__(self, sys: ModelSystem, cutoff: float):
        self.sys = sys
        self.cutoff = float(cutoff)

    def many(self, Z):
        S = self.sys.action_many(np.asarray(Z, dtype=np.float64))
        out = np.where(S > self.cutoff, IN, OUT).astype(np.int8)
        out[~np.isfinite(S)] = ERR
        return out


class PredicateIntersection(Predicate):
    def __init__(self, *parts: Predicate):
        self.parts = parts

    def many(self, Z):
        out = np.full(Z.shape[0], IN, dtype=np.int8)
        for p in self.parts:
            code = p.many(Z)
            out = np.where((out == ERR) | (code == ERR), ERR, np.minimum(out, code))
        return out.astype(np.int8)


class PredicateUnion(Predicate):
    def __init__(self, *parts: Predicate):
        self.parts = parts

    def many(self, Z):
        out = np.full(Z.shape[0], OUT, dtype=np.int8)
        err = np.zeros(Z.shape[0], dtype=bool)
        for p in self.parts:
            code = p.many(Z)
            err |= code == ERR
            out = np.maximum(out, np.where(code == ERR, OUT, code))
        # an error only matters if no part certified membership
        out = np.where((out == IN) | ~err, out, ERR)
        return out.astype(np.int8)


class TimeTPreimage(Predicate):
    """Membership of the time-T flow image in an inner predicate.

    T = 0 short-circuits to the inner predicate.  Escaped rows classify
    as errors.
    """

    def __init__(
        self,
        sys: ModelSystem,
        T: float,
        inner: Predicate,
        cfg: Optional[FlowConfig] = None,
    ):
        if T < 0.0:
            raise ConfigError("preimage time must be >= 0")
        self.sys = sys
        self.T = float(T)
        self.inner = inner
        self.cfg = cfg or FlowConfig()

    def many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        if self.T == 0.0:
            return self.inner.many(Z)
        ZT, status, _ = flow_states(self.sys, Z, self.T, self.cfg)
        out = np.full(Z.shape[0], ERR, dtype=np.int8)
        ok = status != _kernels.STATUS_ESCAPED
        if np.any(ok):
            out[ok] = self.inner.many(ZT[ok])
        return out


def time_T_preimage_oracle(
    sys: ModelSystem,
    T: float,
    pred: Predicate,
    cfg: Optional[FlowConfig] = None,
) -> TimeTPreimage:
    """Oracle for {z : pred(flow_T(z))}; the workhorse behind every set."""
    return TimeTPreimage(sys, T, pred, cfg)
