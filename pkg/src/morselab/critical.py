"""Critical point location and Morse data.

Damped Newton on the gradient from a Sobol multistart, dedup up to deck
translations, spectra from the symmetrized metric Hessian, and oriented
negative-eigenspace frames.  Loop systems are seeded through a truncated
Fourier chart so starts are smooth loops rather than white noise.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import (
    ConfigError,
    DegenerateCritical,
    NonConvergent,
    NonRegularLevel,
)
from .model import LoopSystem, ModelSystem
from .semiflow import FlowConfig, flow_state, flow_states, integrate

__all__ = [
    "CriticalPoint",
    "CritSet",
    "MultistartSpec",
    "descending_sphere_mesh",
    "find_critical_points",
    "newton_polish",
    "unstable_sphere_seed",
]


@dataclasses.dataclass
class CriticalPoint:
    """A nondegenerate zero of the gradient with its Morse data."""

    state: np.ndarray
    action: float
    morse_index: int
    spectral_gap: float
    eigenvalues: np.ndarray
    neg_frame: np.ndarray  # (n, k), metric-orthonormal columns, sign-fixed
    grad_norm: float
    label: str = ""

    def summary(self) -> dict:
        return {
            "label": self.label,
            "action": self.action,
            "morse_index": self.morse_index,
            "spectral_gap": self.spectral_gap,
            "grad_norm": self.grad_norm,
            "state": [float(v) for v in self.state],
        }


@dataclasses.dataclass
class CritSet:
    """All critical points below one action cutoff, sorted and labeled."""

    sys: ModelSystem
    level: float
    points: list[CriticalPoint]

    def by_index(self) -> dict[int, list[CriticalPoint]]:
        out: dict[int, list[CriticalPoint]] = {}
        for p in self.points:
            out.setdefault(p.morse_index, []).append(p)
        return out

    def at_index(self, k: int) -> list[CriticalPoint]:
        return [p for p in self.points if p.morse_index == k]

    def by_label(self, label: str) -> CriticalPoint:
        for p in self.points:
            if p.label == label:
                return p
        raise ConfigError(f"no critical point labeled {label!r}")

    def max_index(self) -> int:
        return max((p.morse_index for p in self.points), default=-1)

    def distinct_values(self, tol: float = 1e-8) -> list[float]:
        vals: list[float] = []
        for p in sorted(self.points, key=lambda q: q.action):
            if not vals or p.action - vals[-1] > tol:
                vals.append(p.action)
        return vals

    def min_value_gap(self) -> float:
        vals = self.distinct_values()
        if len(vals) < 2:
            return math.inf
        return float(min(b - a for a, b in zip(vals, vals[1:])))

    def find_near(self, z: np.ndarray, tol: float = 1e-4) -> Optional[CriticalPoint]:
        """Closest registered point within tol of z, up to deck shifts."""
        best, best_d = None, tol
        for p in self.points:
            d = self.sys.state_distance(z, p.state)
            if d <= best_d:
                best, best_d = p, d
        return best


@dataclasses.dataclass
class MultistartSpec:
    """Sobol start generation.

    Analytic systems sample the box directly.  Loop systems sample a
    truncated Fourier chart: the mean of each component plus `modes`
    cosine/sine pairs with amplitude window shrinking like 1/frequency.
    """

    count: int = 64
    box: Optional[np.ndarray] = None  # (d, 2); analytic systems only
    modes: int = 2
    mean_range: tuple[float, float] = (0.0, 1.0)
    amplitude: float = 0.4

    def dimension(self, sys: ModelSystem) -> int:
        if not sys.is_loop:
            return sys.n_state
        assert isinstance(sys, LoopSystem)
        return sys.m_dim * (1 + 2 * self.modes)

    def starts(self, sys: ModelSystem, seed: int) -> np.ndarray:
        d = self.dimension(sys)
        sampler = qmc.Sobol(d, scramble=True, seed=seed)
        m = max(1, math.ceil(math.log2(max(self.count, 2))))
        U = sampler.random_base2(m)[: self.count]
        if not sys.is_loop:
            box = self.box
            if box is None:
                box = np.tile(np.array([-2.0, 2.0]), (sys.n_state, 1))
            box = np.asarray(box, dtype=np.float64)
            if box.shape != (sys.n_state, 2):
                raise ConfigError(f"multistart box shape {box.shape}")
            return box[:, 0] + U * (box[:, 1] - box[:, 0])
        assert isinstance(sys, LoopSystem)
        mcomp, F, N = sys.m_dim, self.modes, sys.n_loop
        t = np.arange(N) / N
        Z = np.zeros((self.count, N, mcomp))
        lo, hi = self.mean_range
        for a in range(mcomp):
            base = a * (1 + 2 * F)
            mean = lo + U[:, base] * (hi - lo)
            Z[:, :, a] = mean[:, None]
            for f in range(1, F + 1):
                amp = self.amplitude / f
                ac = (2.0 * U[:, base + 2 * f - 1] - 1.0) * amp
                bs = (2.0 * U[:, base + 2 * f] - 1.0) * amp
                Z[:, :, a] += ac[:, None] * np.cos(2 * np.pi * f * t)[None, :]
                Z[:, :, a] += bs[:, None] * np.sin(2 * np.pi * f * t)[None, :]
        # superpose the straight representative of the winding sector
        Z += t[None, :, None] * sys.winding[None, None, :]
        return Z.reshape(self.count, sys.n_state)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def _newton_step(sys: ModelSystem, z: np.ndarray, g: np.ndarray) -> np.ndarray:
    A = sys.hessian(z)
    try:
        p = np.linalg.solve(A, -g)
        if not np.all(np.isfinite(p)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        p = np.linalg.lstsq(A, -g, rcond=None)[0]
    return p


def newton_polish(
    sys: ModelSystem,
    z0: np.ndarray,
    tol: float = 1e-9,
    refine_tol: float = 1e-12,
    max_iter: int = 60,
) -> Optional[np.ndarray]:
    """Damped Newton for grad S = 0; None when it fails to converge.

    Damping is Armijo backtracking on the squared metric gradient norm,
    with a gradient-descent fallback when the Newton direction is not a
    descent direction for that merit.
    """
    z = np.asarray(z0, dtype=np.float64).copy()
    for _ in range(max_iter):
        g = sys.grad(z)
        if not np.all(np.isfinite(g)):
            return None
        gn = sys.norm(g)
        if gn <= tol:
            break
        p = _newton_step(sys, z, g)
        merit = gn * gn
        # directional derivative of |grad|^2 along p is 2 <A g, p>
        slope = 2.0 * sys.inner(sys.hessian(z) @ p, g)
        if not np.isfinite(slope) or slope >= 0.0:
            p = -g
            slope = -2.0 * merit
        t = 1.0
        accepted = False
        while t >= 1e-6:
            zt = z + t * p
            gt = sys.grad(zt)
            if np.all(np.isfinite(gt)):
                mt = sys.norm(gt) ** 2
                if mt <= merit + 1e-4 * t * slope or mt < tol * tol:
                    z = zt
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return None
    else:
        return None
    # full Newton refinement toward the tighter tolerance
    best, best_gn = z.copy(), sys.norm(sys.grad(z))
    for _ in range(5):
        if best_gn <= refine_tol:
            break
        g = sys.grad(z)
        z = z + _newton_step(sys, z, g)
        gn = sys.norm(sys.grad(z))
        if not math.isfinite(gn) or gn >= best_gn:
            break
        best, best_gn = z.copy(), gn
    return best if best_gn <= tol else None


def _morse_data(sys: ModelSystem, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = sys.hessian(z)
    evals, evecs = np.linalg.eigh(A)
    return evals, evecs


def _signed_frame(sys: ModelSystem, evecs: np.ndarray, k: int) -> np.ndarray:
    """First k eigenvectors, metric-normalized, largest entry positive."""
    scale = 1.0 / math.sqrt(sys.metric_weight())
    frame = np.empty((evecs.shape[0], k))
    for j in range(k):
        v = evecs[:, j].copy()
        i = int(np.argmax(np.abs(np.round(v, 12))))  # lowest index wins ties
        if v[i] < 0.0:
            v = -v
        frame[:, j] = scale * v
    return frame


def find_critical_points(
    sys: ModelSystem,
    level: float,
    multistart: Optional[MultistartSpec] = None,
    seed: int = 0,
    merge_tol: float = 1e-5,
    newton_tol: float = 1e-9,
    degenerate_band: float = 1e-6,
    level_guard: float = 1e-3,
    extra_starts: Optional[np.ndarray] = None,
) -> CritSet:
    """Locate every critical point with action below `level`.

    Raises NonRegularLevel when a found critical value sits within
    `level_guard` of the cutoff, and DegenerateCritical when a kept point
    has an eigenvalue inside the degeneracy band.
    """
    ms = multistart or MultistartSpec()
    starts = ms.starts(sys, seed)
    if extra_starts is not None and len(extra_starts):
        starts = np.vstack([starts, np.asarray(extra_starts, dtype=np.float64)])

    found: list[np.ndarray] = []
    for z0 in starts:
        z = newton_polish(sys, z0, tol=newton_tol)
        if z is None:
            continue
        zc, _ = sys.canonicalize(z)
        if any(sys.state_distance(zc, p) <= merge_tol for p in found):
            continue
        found.append(zc)

    # regularity of the cutoff comes first: it poisons the sublevel choice
    for z in found:
        c = sys.action(z)
        if abs(c - level) < level_guard:
            raise NonRegularLevel(
                f"critical value {c:.9f} within {level_guard} of cutoff {level}"
            )

    points: list[CriticalPoint] = []
    for z in found:
        c = sys.action(z)
        if c >= level:
            continue
        evals, evecs = _morse_data(sys, z)
        gap = float(np.min(np.abs(evals)))
        if gap <= degenerate_band:
            raise DegenerateCritical(
                f"critical point at action {c:.9f} has spectral gap {gap:.3e}"
            )
        k = int(np.sum(evals < 0.0))
        points.append(
            CriticalPoint(
                state=z,
                action=float(c),
                morse_index=k,
                spectral_gap=gap,
                eigenvalues=evals,
                neg_frame=_signed_frame(sys, evecs, k),
                grad_norm=float(sys.norm(sys.grad(z))),
            )
        )

    points.sort(key=lambda p: (p.morse_index, p.action, tuple(np.round(p.state, 8))))
    for i, p in enumerate(points):
        p.label = f"cp{i}"
    return CritSet(sys=sys, level=level, points=points)


# ---------------------------------------------------------------------------
# descending sphere seeds
# ---------------------------------------------------------------------------


def unstable_sphere_seed(
    sys: ModelSystem,
    cp: CriticalPoint,
    eps_u: float,
    direction: int = 0,
    sign: float = 1.0,
    offset: float = 1e-4,
    cfg: Optional[FlowConfig] = None,
    t_cap: float = 200.0,
) -> np.ndarray:
    """Point on the descending sphere at action cp.action - eps_u.

    Starts at cp + offset * v along the chosen negative-frame column and
    follows the flow until the action crosses the target level, then
    bisects in time.  The transverse error is O(offset).
    """
    if cp.morse_index == 0:
        raise ConfigError("minima have no descending sphere")
    if not 0 <= direction < cp.morse_index:
        raise ConfigError(f"direction {direction} out of range")
    if eps_u <= 0.0:
        raise ConfigError("eps_u must be positive")
    cfg = cfg or FlowConfig()
    target = cp.action - eps_u
    v = cp.neg_frame[:, direction]
    z = cp.state + float(sign) * offset * v

    # bracket the crossing time in geometrically growing chunks
    t_lo, t_hi = 0.0, None
    z_lo = z.copy()
    dt = 0.05
    t = 0.0
    while t < t_cap:
        z_next = flow_state(sys, z_lo, dt, cfg)
        t_next = t + dt
        if sys.action(z_next) <= target:
            t_hi = t_next
            z_hi = z_next
            break
        z_lo, t = z_next, t_next
        dt = min(dt * 1.5, 2.0)
    if t_hi is None:
        raise NonConvergent(
            f"flow from {cp.label} never reached action {target:.6f} within t={t_cap}"
        )
    # bisect the crossing segment; re-flow from the bracket start each time
    lo, hi = 0.0, t_hi - t
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        zm = flow_state(sys, z_lo, mid, cfg)
        if sys.action(zm) <= target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13 * max(1.0, t_hi):
            break
    out = flow_state(sys, z_lo, hi, cfg)
    if abs(sys.action(out) - target) > 1e-6 * max(1.0, abs(target)):
        raise NonConvergent("bisection failed to pin the action level")
    return out


def descending_sphere_mesh(
    sys: ModelSystem,
    cp: CriticalPoint,
    eps_u: float,
    weights: np.ndarray,
    offset: float = 1e-4,
    cfg: Optional[FlowConfig] = None,
    t_cap: float = 200.0,
) -> np.ndarray:
    """Batched descending-sphere points, one per row of direction weights.

    ``weights`` has shape (B, k) with metric-unit rows; each row picks the
    ray cp + offset * (neg_frame @ w).  All rays are flowed together down
    to action cp.action - eps_u, then the crossing is bisected per row.
    """
    if cp.morse_index == 0:
        raise ConfigError("minima have no descending sphere")
    if eps_u <= 0.0:
        raise ConfigError("eps_u must be positive")
    W = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if W.shape[1] != cp.morse_index:
        raise ConfigError("one weight per negative direction required")
    cfg = cfg or FlowConfig()
    target = cp.action - eps_u

    Z = cp.state[None, :] + offset * (W @ cp.neg_frame.T)
    B = Z.shape[0]
    out = np.empty_like(Z)
    done = np.zeros(B, dtype=bool)
    dts = np.full(B, 0.05)
    t_used = np.zeros(B)

    # chunked bracketing on the still-live rows, all at once per dt value
    while not done.all():
        live = np.flatnonzero(~done)
        if np.any(t_used[live] >= t_cap):
            raise NonConvergent(
                f"descending sphere of {cp.label}: some rays never reached "
                f"action {target:.6f} within t={t_cap}"
            )
        dt = float(dts[live].min())
        Zn, status, _ = flow_states(sys, Z[live], dt, cfg)
        if np.any(status == 2):
            raise NonConvergent("a descending-sphere ray escaped the box")
        crossed = sys.action_many(Zn) <= target
        for pos, row in enumerate(live):
            if crossed[pos]:
                out[row] = _bisect_level(sys, Z[row], dt, target, cfg)
                done[row] = True
            else:
                Z[row] = Zn[pos]
                t_used[row] += dt
                dts[row] = min(dts[row] * 1.5, 2.0)
    return out


def _bisect_level(sys, z_lo, dt, target, cfg):
    """Refine one action-level crossing inside [0, dt] from z_lo."""
    lo, hi = 0.0, dt
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        zm = flow_state(sys, z_lo, mid, cfg)
        if sys.action(zm) <= target:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13 * max(1.0, dt):
            break
    out = flow_state(sys, z_lo, hi, cfg)
    if abs(sys.action(out) - target) > 1e-6 * max(1.0, abs(target)):
        raise NonConvergent("bisection failed to pin the action level")
    return out
