"""Backward-time graph maps near a hyperbolic rest point.

Forward integration of a gradient semi-flow is well posed while
backward integration is not, yet the time-T preimage of a fiber
transverse to the unstable directions is still computable: it is the
graph of a map from the contracting subspace to the expanding one, and
finding one graph value is a boundary-value problem whose only unknown
is the expanding component of the initial state.  Shooting therefore
happens in index-many dimensions, where the forward flow amplifies the
mismatch and Newton converges from a linear predictor.

Everything else here is bookkeeping around those solves: sampled graph
maps and their exponential convergence to the stable-manifold graph,
foliation leaves cut to an action window, the leafwise induced flow
composed from graph maps, and verification of the decrease rate of the
action along that flow.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import solve_bvp
from scipy.spatial.distance import cdist

from . import _kernels
from .conley import ConleyPair, build_conley_pair, default_epsilon
from .critical import CriticalPoint, CritSet, descending_sphere_mesh
from .errors import (
    AlphaDegenerate,
    ConfigError,
    EmptyLeaf,
    NonFiniteState,
    ShootingDivergence,
    TTooSmall,
)
from .homology import Grid
from .model import LoopSystem, ModelSystem
from .semiflow import FlowConfig, Trajectory, flow_state, flow_states, integrate

__all__ = [
    "ActionDecreaseReport",
    "DiscreteNorms",
    "GraphMapSample",
    "LeafCompatReport",
    "LeafConvergenceReport",
    "LeafSample",
    "LocalChart",
    "MixedCauchyResult",
    "RateReport",
    "ShrinkReport",
    "StableGraphSample",
    "build_chart",
    "descending_gammas",
    "induced_semiflow_step",
    "sample_graph_map",
    "sample_leaf",
    "sample_stable_graph",
    "shrink_into_ball",
    "solve_mixed_cauchy",
    "verify_action_decrease",
    "verify_lambda_estimates",
    "verify_leaf_compatibility",
    "verify_leaf_convergence",
]


# ---------------------------------------------------------------------------
# discrete norms
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class DiscreteNorms:
    """Sobolev-style norms on displacement vectors.

    Loop systems use forward differences and 1/N weights; for analytic
    systems all three collapse to the Euclidean norm, which keeps the
    norm distinctions of the estimates structurally present even where
    they are equivalent.
    """

    l2: Callable[[np.ndarray], float]
    w12: Callable[[np.ndarray], float]
    w14: Callable[[np.ndarray], float]

    @staticmethod
    def for_system(sys: ModelSystem) -> "DiscreteNorms":
        if not sys.is_loop:
            e = lambda v: float(np.linalg.norm(np.ravel(v)))
            return DiscreteNorms(l2=e, w12=e, w14=e)
        assert isinstance(sys, LoopSystem)
        N, m = sys.n_loop, sys.m_dim

        def parts(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            V = np.asarray(v, dtype=np.float64).reshape(N, m)
            D = (np.roll(V, -1, axis=0) - V) * N
            return V, D

        def l2(v):
            V, _ = parts(v)
            return math.sqrt(float(np.sum(V * V)) / N)

        def w12(v):
            V, D = parts(v)
            return math.sqrt(float(np.sum(V * V) + np.sum(D * D)) / N)

        def w14(v):
            V, D = parts(v)
            return (float(np.sum(V**4) + np.sum(D**4)) / N) ** 0.25

        return DiscreteNorms(l2=l2, w12=w12, w14=w14)


# ---------------------------------------------------------------------------
# local chart
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class LocalChart:
    """Eigenframe coordinates around one hyperbolic rest point.

    Splits displacements into the expanding span (dimension = the
    point's index) and the contracting span, with metric-orthonormal
    frames, and carries the radii and rate constants every graph-map
    computation needs.
    """

    sys: ModelSystem
    cp: CriticalPoint
    rho0: float
    mu: float
    b_plus: float
    a_tube: float
    T0: float
    frame_neg: np.ndarray  # (n, k)
    frame_pos: np.ndarray  # (n, n - k)
    rates_neg: np.ndarray  # (k,)  expansion rates, positive
    rates_pos: np.ndarray  # (n - k,)  contraction rates, positive

    @property
    def index(self) -> int:
        return self.frame_neg.shape[1]

    @property
    def dim_plus(self) -> int:
        return self.frame_pos.shape[1]

    @property
    def gap(self) -> float:
        return float(min(self.rates_neg.min(initial=np.inf), self.rates_pos.min(initial=np.inf)))

    def t_stable(self, tail: float = 1e-10) -> float:
        """Time after which the finite-T graph is the stable graph to `tail`."""
        return math.log(1.0 / tail) / self.gap

    # -- coordinates --------------------------------------------------------

    def coords_minus(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        w = self.sys.metric_weight()
        return w * (Z - self.cp.state[None, :]) @ self.frame_neg

    def coords_plus(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        w = self.sys.metric_weight()
        return w * (Z - self.cp.state[None, :]) @ self.frame_pos

    def from_coords(self, y_minus: np.ndarray, y_plus: np.ndarray) -> np.ndarray:
        y_minus = np.asarray(y_minus, dtype=np.float64).reshape(-1)
        y_plus = np.asarray(y_plus, dtype=np.float64).reshape(-1)
        return self.cp.state + self.frame_neg @ y_minus + self.frame_pos @ y_plus

    def from_coords_many(self, Ym: np.ndarray, Yp: np.ndarray) -> np.ndarray:
        return self.cp.state[None, :] + Ym @ self.frame_neg.T + Yp @ self.frame_pos.T

    def ball_contains(self, z: np.ndarray) -> bool:
        return self.sys.norm(np.asarray(z, dtype=np.float64) - self.cp.state) <= self.rho0


def _eigenframe(sys: ModelSystem, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full metric-orthonormal Hessian eigenframe, signs fixed."""
    evals, evecs = np.linalg.eigh(sys.hessian(z))
    scale = 1.0 / math.sqrt(sys.metric_weight())
    for j in range(evecs.shape[1]):
        i = int(np.argmax(np.abs(np.round(evecs[:, j], 12))))
        if evecs[i, j] < 0.0:
            evecs[:, j] = -evecs[:, j]
    return evals, scale * evecs


def build_chart(
    sys: ModelSystem,
    cp: CriticalPoint,
    crit: Optional[CritSet] = None,
    rho0: Optional[float] = None,
    mu: Optional[float] = None,
    b_plus: Optional[float] = None,
    a_tube: Optional[float] = None,
    T0: Optional[float] = None,
) -> LocalChart:
    """Chart around `cp` with defaults tied to the spectral gap.

    The ball radius defaults to 0.6 of the distance to the nearest
    other critical point; with a critical set supplied, the ball is
    checked to isolate `cp`.
    """
    evals, frame = _eigenframe(sys, cp.state)
    k = int(np.sum(evals < 0.0))
    if k != cp.morse_index:
        raise ConfigError(
            f"eigenframe index {k} disagrees with the stored index {cp.morse_index}"
        )
    d = float(np.min(np.abs(evals)))
    if rho0 is None:
        rho0 = 1.0
        if crit is not None:
            others = [
                sys.norm(p.state - cp.state)
                for p in crit.points
                if sys.norm(p.state - cp.state) > 1e-8
            ]
            if others:
                rho0 = 0.6 * min(others)
    if crit is not None:
        for p in crit.points:
            dist = sys.norm(p.state - cp.state)
            if 1e-8 < dist < rho0:
                raise ConfigError(
                    f"chart ball of {cp.label or 'cp'} (rho0={rho0:g}) contains "
                    f"critical point {p.label!r} at distance {dist:.4g}"
                )
    mu = 0.5 * d if mu is None else float(mu)
    if not 0.0 < mu < d:
        raise ConfigError(f"rate parameter mu={mu:g} must lie in (0, {d:g})")
    return LocalChart(
        sys=sys,
        cp=cp,
        rho0=float(rho0),
        mu=mu,
        b_plus=0.9 * rho0 if b_plus is None else float(b_plus),
        a_tube=0.9 * rho0 if a_tube is None else float(a_tube),
        T0=1.0 / d if T0 is None else float(T0),
        frame_neg=frame[:, :k].copy(),
        frame_pos=frame[:, k:].copy(),
        rates_neg=np.abs(evals[:k]).copy(),
        rates_pos=evals[k:].copy(),
    )


# ---------------------------------------------------------------------------
# mixed Cauchy problem
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class MixedCauchyResult:
    """One graph value with its certifying trajectory."""

    w: np.ndarray  # expanding coordinates of the initial state
    z_plus: np.ndarray
    state0: np.ndarray
    trajectory: Trajectory
    residual: float
    newton_iters: int
    cond: float
    used_collocation: bool


def _endpoint_batch(
    chart: LocalChart, W: np.ndarray, z_plus: np.ndarray, T: float, cfg: FlowConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Flow a batch of unknowns to time T; escaped rows marked bad."""
    Zp = np.tile(z_plus[None, :], (W.shape[0], 1))
    Z0 = chart.from_coords_many(W, Zp)
    ZT, status, _ = flow_states(chart.sys, Z0, T, cfg)
    M = chart.coords_minus(ZT)
    bad = status == _kernels.STATUS_ESCAPED
    return M, bad


# largest lam*T a finite-difference shooting Jacobian can resolve: beyond
# this the solution basin is narrower than the rounding of the chart origin
_SHOOT_HORIZON = 30.0


def _linearized_guess(
    chart: LocalChart, T: float, gamma: np.ndarray, z_plus: np.ndarray, n_nodes: int = 41
) -> tuple[np.ndarray, np.ndarray]:
    """Dichotomy-respecting profile: each coordinate block decays at its rate."""
    tt = np.linspace(0.0, T, n_nodes)
    wn = np.exp(-chart.rates_neg[None, :] * (T - tt)[:, None]) * gamma[None, :]
    wp = np.exp(-chart.rates_pos[None, :] * tt[:, None]) * z_plus[None, :]
    return tt, chart.from_coords_many(wn, wp)


def _collocation_solve(chart: LocalChart, T: float, gamma: np.ndarray, z_plus: np.ndarray):
    """Collocation solve of the two-point problem; None when it fails.

    The guess is the linearized decay profile, never an integrated orbit:
    past the shooting horizon a forward orbit saturates into the wrong
    basin and strands the solver there.
    """
    sys = chart.sys

    def rhs(t, Y):
        return -sys.grad_many(Y.T).T

    def bc(ya, yb):
        return np.concatenate(
            [
                chart.coords_plus(ya[None, :])[0] - z_plus,
                chart.coords_minus(yb[None, :])[0] - gamma,
            ]
        )

    tt, guess = _linearized_guess(chart, T, gamma, z_plus)
    try:
        sol = solve_bvp(rhs, bc, tt, guess.T, tol=1e-10, max_nodes=20000)
    except Exception:
        return None
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        return None
    return sol


def _finish_collocation(
    chart: LocalChart,
    T: float,
    gamma: np.ndarray,
    z_plus: np.ndarray,
    cfg: FlowConfig,
    tol_bvp: float,
    n_records: int,
) -> MixedCauchyResult:
    """Certify a past-horizon collocation solution without full re-integration.

    Re-integrating the whole interval is as ill-posed as the shooting it
    replaces, so the certificate is the discrete boundary residual plus a
    segment-wise orbit check short enough that error amplification stays
    near 1e3.
    """
    sol = _collocation_solve(chart, T, gamma, z_plus)
    if sol is None:
        raise ShootingDivergence(f"collocation failed for the mixed problem at T={T:g}")
    ya, yb = sol.y[:, 0], sol.y[:, -1]
    res = max(
        float(np.linalg.norm(chart.coords_minus(yb[None, :])[0] - gamma)),
        float(np.linalg.norm(chart.coords_plus(ya[None, :])[0] - z_plus)),
    )
    if res > 10.0 * tol_bvp:
        raise ShootingDivergence(f"collocation boundary residual {res:.3e} too large")
    lam_max = float(np.max(chart.rates_neg))
    n_seg = max(1, int(math.ceil(T * lam_max / math.log(1e3))))
    knots = np.linspace(0.0, T, n_seg + 1)
    Zk = sol.sol(knots).T
    Z_end, status, _ = flow_states(chart.sys, Zk[:-1], float(knots[1] - knots[0]), cfg)
    miss = float(np.max(np.linalg.norm(Z_end - Zk[1:], axis=1)))
    scale = 1.0 + float(np.max(np.abs(sol.y)))
    if np.any(status == _kernels.STATUS_ESCAPED) or miss > 1e-5 * scale:
        raise ShootingDivergence(f"collocation orbit fails the segment check ({miss:.3e})")
    times = np.linspace(0.0, T, n_records)
    states = sol.sol(times).T
    traj = Trajectory(
        times=times,
        states=states,
        actions=chart.sys.action_many(states),
        record_steps=np.arange(n_records),
        settled=False,
    )
    return MixedCauchyResult(
        w=chart.coords_minus(states[:1])[0],
        z_plus=z_plus.copy(),
        state0=states[0],
        trajectory=traj,
        residual=res,
        newton_iters=0,
        cond=float(np.exp(min(lam_max * T, 700.0))),
        used_collocation=True,
    )


def solve_mixed_cauchy(
    chart: LocalChart,
    T: float,
    gamma: np.ndarray,
    z_plus: np.ndarray,
    cfg: Optional[FlowConfig] = None,
    tol_bvp: float = 1e-8,
    max_newton: int = 25,
    n_records: int = 65,
) -> MixedCauchyResult:
    """Flow line with prescribed contracting start and expanding end.

    Finds the trajectory whose contracting coordinates start at
    `z_plus` and whose expanding coordinates reach `gamma` at time T.
    The returned `w` is the graph value: the expanding coordinates the
    initial state must have.  Newton runs on the mismatch at time T
    with a linearized-decay predictor; a collocation rescue handles the
    rare divergent case before giving up.
    """
    if T <= chart.T0:
        raise TTooSmall(f"graph-map time {T:g} is not above the chart minimum {chart.T0:g}")
    cfg = cfg or FlowConfig()
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    z_plus = np.atleast_1d(np.asarray(z_plus, dtype=np.float64))
    k, p = chart.index, chart.dim_plus
    if gamma.shape != (k,):
        raise ConfigError(f"gamma must have {k} expanding coordinates, got {gamma.shape}")
    if z_plus.shape != (p,):
        raise ConfigError(f"z_plus must have {p} contracting coordinates, got {z_plus.shape}")
    if float(np.linalg.norm(gamma)) > chart.rho0:
        raise ConfigError("gamma lies outside the chart ball")
    if float(np.linalg.norm(z_plus)) > chart.b_plus * (1.0 + 1e-9):
        raise ConfigError("z_plus lies outside the contracting ball")

    def finish(w: np.ndarray, iters: int, cond: float, rescued: bool) -> MixedCauchyResult:
        state0 = chart.from_coords(w, z_plus)
        traj = integrate(chart.sys, state0, T, cfg, n_records=n_records)
        res = float(np.linalg.norm(chart.coords_minus(traj.states[-1:])[0] - gamma))
        if res > 10.0 * tol_bvp:
            raise ShootingDivergence(
                f"certified residual {res:.3e} exceeds tolerance (cond~{cond:.2e})"
            )
        return MixedCauchyResult(
            w=w,
            z_plus=z_plus.copy(),
            state0=state0,
            trajectory=traj,
            residual=res,
            newton_iters=iters,
            cond=cond,
            used_collocation=rescued,
        )

    w = np.exp(-chart.rates_neg * T) * gamma  # linearized backward decay
    if k == 0:
        return finish(w, 0, 1.0, False)

    lam_max = float(np.max(chart.rates_neg))
    if lam_max * T > _SHOOT_HORIZON:
        # accept the predictor orbit outright when it already certifies
        # (exact invariant axes do); otherwise hand the two-point problem
        # straight to collocation
        try:
            return finish(w, 0, float(np.exp(min(lam_max * T, 700.0))), False)
        except (ShootingDivergence, NonFiniteState):
            pass
        return _finish_collocation(chart, T, gamma, z_plus, cfg, tol_bvp, n_records)

    cond = 1.0
    gscale = max(1.0, float(np.linalg.norm(gamma)))
    for it in range(max_newton):
        # one batch: base point plus central-difference stencil; the step
        # must track the decayed scale of w or the forward amplification
        # saturates the perturbed orbits and wrecks the Jacobian
        steps = 1e-6 * np.maximum(np.abs(w), np.exp(-chart.rates_neg * T) * gscale)
        steps = np.maximum(steps, 1e-30)
        W = np.vstack([w] + [w + s * e for s, e in zip(steps, np.eye(k))]
                      + [w - s * e for s, e in zip(steps, np.eye(k))])
        M, bad = _endpoint_batch(chart, W, z_plus, T, cfg)
        if bad[0]:
            break
        m = M[0] - gamma
        if float(np.linalg.norm(m)) <= tol_bvp:
            return finish(w, it, cond, False)
        if np.any(bad[1:]):
            break
        J = (M[1 : k + 1] - M[k + 1 :]).T / (2.0 * steps)[None, :]
        cond = float(np.linalg.cond(J))
        try:
            delta = np.linalg.solve(J, -m)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -m, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            break
        # backtracking on the mismatch norm
        base = float(np.linalg.norm(m))
        t, accepted = 1.0, False
        while t >= 1e-8:
            Mt, badt = _endpoint_batch(chart, (w + t * delta)[None, :], z_plus, T, cfg)
            if not badt[0]:
                if float(np.linalg.norm(Mt[0] - gamma)) < (1.0 - 1e-4 * t) * base:
                    w = w + t * delta
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
    else:
        pass

    sol = _collocation_solve(chart, T, gamma, z_plus)
    if sol is not None:
        w_alt = chart.coords_minus(sol.y[:, 0][None, :])[0]
        try:
            return finish(w_alt, max_newton, cond, True)
        except (ShootingDivergence, NonFiniteState):
            pass
    raise ShootingDivergence(
        f"mixed solve at T={T:g} diverged (condition estimate {cond:.2e})"
    )


# ---------------------------------------------------------------------------
# graph maps
# ---------------------------------------------------------------------------


def _plus_axes(chart: LocalChart, per_axis: int, radius: Optional[float]) -> list[np.ndarray]:
    p = chart.dim_plus
    r = radius if radius is not None else chart.b_plus / math.sqrt(max(p, 1))
    return [np.linspace(-r, r, per_axis) for _ in range(p)]


@dataclasses.dataclass
class GraphMapSample:
    """Graph values over a mesh of contracting coordinates."""

    T: float
    gamma: np.ndarray
    axes: list[np.ndarray]
    shape: tuple[int, ...]
    points: np.ndarray  # (m, p)
    values: np.ndarray  # (m, k)
    residuals: np.ndarray  # (m,)
    diff: np.ndarray  # (m, k, p) central differences on the mesh
    anchor_w: np.ndarray  # graph value at z_plus = 0
    anchor_state: np.ndarray
    fiber_ok: np.ndarray  # (m,) endpoint landed in the transverse fiber
    failures: list[tuple[int, str]]
    chart: LocalChart

    def states(self) -> np.ndarray:
        return self.chart.from_coords_many(self.values, self.points)

    def lipschitz_factors(self) -> np.ndarray:
        """Per-point operator norm of the full graph differential."""
        out = np.empty(self.points.shape[0])
        for i in range(self.points.shape[0]):
            s = np.linalg.svd(self.diff[i], compute_uv=False)
            top = float(s[0]) if s.size else 0.0
            out[i] = math.sqrt(1.0 + top * top)
        return out


def sample_graph_map(
    chart: LocalChart,
    T: float,
    gamma: np.ndarray,
    axes: Optional[Sequence[np.ndarray]] = None,
    per_axis: int = 5,
    radius: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    tol_bvp: float = 1e-8,
    max_fail_share: float = 0.05,
) -> GraphMapSample:
    """Solve the mixed problem over a mesh of contracting coordinates.

    The differential is estimated by central differences along the mesh
    axes; more than `max_fail_share` failed solves reject the sample.
    """
    cfg = cfg or FlowConfig()
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    if gamma.shape != (chart.index,):
        raise ConfigError(f"gamma must have {chart.index} expanding coordinates")
    if float(np.linalg.norm(gamma)) > chart.rho0:
        raise ConfigError("gamma lies outside the chart ball")
    axes = [np.asarray(a, dtype=np.float64) for a in axes] if axes is not None else _plus_axes(
        chart, per_axis, radius
    )
    if len(axes) != chart.dim_plus:
        raise ConfigError(f"need {chart.dim_plus} mesh axes, got {len(axes)}")
    shape = tuple(a.size for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    points = (
        np.stack([g.ravel() for g in mesh], axis=1)
        if mesh
        else np.zeros((1, 0))
    )
    m = points.shape[0]
    k = chart.index
    values = np.full((m, k), np.nan)
    residuals = np.full(m, np.nan)
    fiber_ok = np.zeros(m, dtype=bool)
    failures: list[tuple[int, str]] = []
    for i in range(m):
        try:
            r = solve_mixed_cauchy(chart, T, gamma, points[i], cfg, tol_bvp=tol_bvp)
        except (ShootingDivergence, ConfigError) as exc:
            failures.append((i, str(exc)))
            continue
        values[i] = r.w
        residuals[i] = r.residual
        end_plus = chart.coords_plus(r.trajectory.states[-1:])[0]
        fiber_ok[i] = float(np.linalg.norm(end_plus)) <= chart.a_tube
    if m and len(failures) > max_fail_share * m:
        raise ShootingDivergence(
            f"{len(failures)} of {m} graph solves failed at T={T:g}; "
            f"first: {failures[0][1]}"
        )
    anchor = solve_mixed_cauchy(chart, T, gamma, np.zeros(chart.dim_plus), cfg, tol_bvp=tol_bvp)

    if chart.dim_plus and all(s >= 2 for s in shape):
        field = values.reshape(*shape, k)
        grads = np.gradient(field, *axes, axis=tuple(range(len(shape))))
        if len(shape) == 1:
            grads = [grads]
        diff = np.stack([g.reshape(m, k) for g in grads], axis=2)
    else:
        diff = np.zeros((m, k, chart.dim_plus))
    return GraphMapSample(
        T=T,
        gamma=gamma,
        axes=list(axes),
        shape=shape,
        points=points,
        values=values,
        residuals=residuals,
        diff=diff,
        anchor_w=anchor.w,
        anchor_state=anchor.state0,
        fiber_ok=fiber_ok,
        failures=failures,
        chart=chart,
    )


@dataclasses.dataclass
class StableGraphSample:
    """Long-time graph surrogate for the stable-manifold graph."""

    sample: GraphMapSample
    t_used: float
    settle_ok: np.ndarray  # (m,) forward flow settled near the rest point

    @property
    def points(self) -> np.ndarray:
        return self.sample.points

    @property
    def values(self) -> np.ndarray:
        return self.sample.values


def sample_stable_graph(
    chart: LocalChart,
    gamma: Optional[np.ndarray] = None,
    axes: Optional[Sequence[np.ndarray]] = None,
    per_axis: int = 5,
    radius: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    tail: float = 1e-10,
    check_settle: bool = True,
) -> StableGraphSample:
    """Stable graph as the finite-T graph past the tail-bound time.

    Cross-checked by flowing each sampled state forward for half the
    tail time and confirming it hugs the rest point: the surrogate's
    expanding-direction tail is O(tail) and grows back under forward
    flow, so T/2 is where both components sit near sqrt(tail) and
    membership is sharpest.
    """
    cfg = cfg or FlowConfig()
    T = chart.t_stable(tail)
    g = np.zeros(chart.index) if gamma is None else np.atleast_1d(np.asarray(gamma, float))
    sample = sample_graph_map(chart, T, g, axes=axes, per_axis=per_axis, radius=radius, cfg=cfg)
    ok = np.ones(sample.points.shape[0], dtype=bool)
    if check_settle:
        Z = sample.states()
        good = np.all(np.isfinite(Z), axis=1)
        ZT, status, _ = flow_states(chart.sys, Z[good], 0.5 * T, cfg)
        near = np.array(
            [chart.sys.norm(z - chart.cp.state) <= 1e-3 * max(1.0, chart.b_plus) for z in ZT]
        )
        ok[good] = (status != _kernels.STATUS_ESCAPED) & near
        ok[~good] = False
    return StableGraphSample(sample=sample, t_used=T, settle_ok=ok)


# ---------------------------------------------------------------------------
# rate estimates
# ---------------------------------------------------------------------------


def _fit_decay_rate(T: np.ndarray, dev: np.ndarray) -> float:
    """Slope of -log(deviation); inf when the deviations are all noise."""
    if np.all(dev < 1e-13):
        return math.inf
    y = np.log(np.maximum(dev, 1e-300))
    return float(-np.polyfit(T, y, 1)[0])


@dataclasses.dataclass
class RateReport:
    """Measured convergence of the finite-time graphs to the stable graph."""

    T_list: np.ndarray
    deviations: np.ndarray
    diff_deviations: np.ndarray
    lipschitz_max: float
    rate: float
    rate_diff: float
    mu: float
    monotone: bool
    passed: bool

    def summary(self) -> dict:
        return {
            "T_list": [float(t) for t in self.T_list],
            "deviations": [float(v) for v in self.deviations],
            "diff_deviations": [float(v) for v in self.diff_deviations],
            "lipschitz_max": self.lipschitz_max,
            "rate": self.rate,
            "rate_diff": self.rate_diff,
            "mu_over_16": self.mu / 16.0,
            "monotone": self.monotone,
            "passed": self.passed,
        }


def verify_lambda_estimates(
    chart: LocalChart,
    gamma: np.ndarray,
    T_list: Sequence[float],
    axes: Optional[Sequence[np.ndarray]] = None,
    per_axis: int = 5,
    radius: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
) -> RateReport:
    """Measure the three graph-map estimates over a time ladder.

    Passes iff the fitted decay rate of the sup deviation is at least
    mu/16 and the graph differential has operator norm at most 2 on
    every sample.  The deviation norm follows the system family: the
    discrete Sobolev norm on loops, the Euclidean norm otherwise.
    """
    T_arr = np.asarray(list(T_list), dtype=np.float64)
    if T_arr.size < 4 or np.any(np.diff(T_arr) <= 0.0):
        raise ConfigError("need at least 4 ascending graph-map times")
    if np.any(T_arr <= chart.T0):
        raise TTooSmall("every time in the ladder must exceed the chart minimum")
    cfg = cfg or FlowConfig()
    norms = DiscreteNorms.for_system(chart.sys)
    axes = [np.asarray(a, float) for a in axes] if axes is not None else _plus_axes(
        chart, per_axis, radius
    )
    stable = sample_graph_map(chart, chart.t_stable(), gamma, axes=axes, cfg=cfg)

    deviations, diff_devs, lips = [], [], []
    for T in T_arr:
        s = sample_graph_map(chart, float(T), gamma, axes=axes, cfg=cfg)
        good = np.all(np.isfinite(s.values), axis=1) & np.all(
            np.isfinite(stable.values), axis=1
        )
        dev = max(
            norms.w14(chart.frame_neg @ (s.values[i] - stable.values[i]))
            for i in np.flatnonzero(good)
        )
        ddev = max(
            (np.linalg.svd(s.diff[i] - stable.diff[i], compute_uv=False)[0]
             if s.diff[i].size else 0.0)
            for i in np.flatnonzero(good)
        )
        deviations.append(float(dev))
        diff_devs.append(float(ddev))
        lips.append(float(np.max(s.lipschitz_factors()[good])))
    dev_arr = np.asarray(deviations)
    ddev_arr = np.asarray(diff_devs)
    rate = _fit_decay_rate(T_arr, dev_arr)
    rate_diff = _fit_decay_rate(T_arr, ddev_arr)
    lip_max = float(np.max(lips))
    monotone = bool(np.all(dev_arr[1:] <= dev_arr[:-1] * (1.0 + 1e-6) + 1e-14))
    passed = rate >= chart.mu / 16.0 and lip_max <= 2.0 + 1e-9
    return RateReport(
        T_list=T_arr,
        deviations=dev_arr,
        diff_deviations=ddev_arr,
        lipschitz_max=lip_max,
        rate=rate,
        rate_diff=rate_diff,
        mu=chart.mu,
        monotone=monotone,
        passed=passed,
    )


# ---------------------------------------------------------------------------
# leaves
# ---------------------------------------------------------------------------


def descending_gammas(
    chart: LocalChart,
    eps: float,
    n: int = 8,
    seed: int = 0,
    cfg: Optional[FlowConfig] = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Expanding-frame coordinates of points on the descending sphere.

    Returns (gammas (B, k), sphere states (B, n_state), flattening
    residual): the residual is the largest contracting component of a
    sphere state, i.e. how far the unstable manifold bends away from
    its linear span at this radius.
    """
    k = chart.index
    if k == 1:
        W = np.array([[1.0], [-1.0]])[: max(2, min(n, 2))]
    else:
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(n, k))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
    states = descending_sphere_mesh(chart.sys, chart.cp, eps, W, cfg=cfg)
    gammas = chart.coords_minus(states)
    residual = float(np.max(np.abs(chart.coords_plus(states)))) if states.size else 0.0
    return gammas, states, residual


@dataclasses.dataclass
class LeafSample:
    """One foliation leaf: graph samples cut to the action window."""

    chart: LocalChart
    pair: ConleyPair
    T: float
    gamma: Optional[np.ndarray]  # None marks the central leaf
    sample: GraphMapSample
    keep: np.ndarray  # (m,) action cutoff plus mesh-component selection
    states: np.ndarray  # (m, n)
    actions: np.ndarray  # (m,)

    def points(self) -> np.ndarray:
        return self.sample.points[self.keep]

    def kept_states(self) -> np.ndarray:
        return self.states[self.keep]

    def cutoff(self) -> float:
        return self.pair.cp.action + self.pair.eps


def _mesh_component(keep: np.ndarray, shape: tuple[int, ...], center: int) -> np.ndarray:
    """Flood fill on the mesh restricted to kept entries, from `center`."""
    if not shape or not keep[center]:
        return keep.copy()
    grid = keep.reshape(shape)
    comp = np.zeros_like(grid)
    idx = np.unravel_index(center, shape)
    stack = [idx]
    comp[idx] = True
    while stack:
        cur = stack.pop()
        for ax in range(len(shape)):
            for dlt in (-1, 1):
                nxt = list(cur)
                nxt[ax] += dlt
                if 0 <= nxt[ax] < shape[ax]:
                    nxt_t = tuple(nxt)
                    if grid[nxt_t] and not comp[nxt_t]:
                        comp[nxt_t] = True
                        stack.append(nxt_t)
    return comp.ravel()


def sample_leaf(
    chart: LocalChart,
    pair: ConleyPair,
    gamma: Optional[np.ndarray],
    T: Optional[float] = None,
    axes: Optional[Sequence[np.ndarray]] = None,
    per_axis: int = 9,
    radius: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
) -> LeafSample:
    """Sample one leaf of the foliated Conley set.

    `gamma=None` gives the central leaf (the local stable manifold cut
    to the action window); otherwise the leaf through the backward
    T-image of the sphere point with expanding coordinates `gamma`.
    """
    cfg = cfg or FlowConfig()
    if gamma is None:
        T = chart.t_stable() if T is None else float(T)
    else:
        if T is None:
            raise ConfigError("a leaf away from the center needs an explicit time")
        if T <= pair.tau:
            raise ConfigError(f"leaf time {T:g} must exceed the pair window time {pair.tau:g}")
    g = np.zeros(chart.index) if gamma is None else np.atleast_1d(np.asarray(gamma, float))
    s = sample_graph_map(chart, float(T), g, axes=axes, per_axis=per_axis, radius=radius, cfg=cfg)
    states = s.states()
    finite = np.all(np.isfinite(states), axis=1)
    actions = np.full(states.shape[0], np.inf)
    actions[finite] = chart.sys.action_many(states[finite])
    keep = finite & (actions < pair.cp.action + pair.eps)
    if s.shape:
        center = int(np.ravel_multi_index(tuple(n // 2 for n in s.shape), s.shape))
        keep = keep & _mesh_component(keep, s.shape, center)
    if not np.any(keep):
        raise EmptyLeaf(
            f"action cutoff {pair.cp.action + pair.eps:g} removed every sampled leaf point"
        )
    return LeafSample(
        chart=chart,
        pair=pair,
        T=float(T),
        gamma=None if gamma is None else g,
        sample=s,
        keep=keep,
        states=states,
        actions=actions,
    )


# ---------------------------------------------------------------------------
# leaf verification
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class LeafCompatReport:
    """Forward-flow and induced-flow leaf compatibility residuals."""

    T: float
    sigmas: np.ndarray
    flow_residuals: np.ndarray  # (n_sigma, n_check) dist of flowed point to shifted leaf
    induced_residuals: np.ndarray  # (n_check,) graph residual of one induced step
    tol: float
    passed: bool

    def summary(self) -> dict:
        return {
            "T": self.T,
            "sigmas": [float(s) for s in self.sigmas],
            "max_flow_residual": float(np.max(self.flow_residuals)),
            "max_induced_residual": float(np.max(self.induced_residuals)),
            "tol": self.tol,
            "passed": self.passed,
        }


def verify_leaf_compatibility(
    chart: LocalChart,
    pair: ConleyPair,
    gamma: np.ndarray,
    T: float,
    sigmas: Sequence[float] = (0.25, 0.5, 1.0),
    n_check: int = 5,
    s_induced: float = 0.3,
    cfg: Optional[FlowConfig] = None,
    tol: float = 1e-6,
) -> LeafCompatReport:
    """Two separate compatibility statements, checked on sampled points.

    Forward flow: flowing a leaf point by sigma lands on the leaf with
    the same sphere base and time T - sigma (re-solved fresh).  Induced
    flow: one induced step stays on the original leaf's graph.
    """
    cfg = cfg or FlowConfig()
    sig = np.asarray(list(sigmas), dtype=np.float64)
    if np.any(sig <= 0.0) or np.any(sig >= T - pair.tau):
        raise ConfigError("shift times must lie in (0, T - tau)")
    leaf = sample_leaf(chart, pair, gamma, T, cfg=cfg)
    pts = leaf.kept_states()
    pick = np.linspace(0, pts.shape[0] - 1, min(n_check, pts.shape[0])).astype(int)
    Z = pts[np.unique(pick)]
    norms = DiscreteNorms.for_system(chart.sys)

    flow_res = np.empty((sig.size, Z.shape[0]))
    for i, s in enumerate(sig):
        Zs, status, _ = flow_states(chart.sys, Z, float(s), cfg)
        for j in range(Z.shape[0]):
            if status[j] == _kernels.STATUS_ESCAPED:
                flow_res[i, j] = np.inf
                continue
            zp = chart.coords_plus(Zs[j : j + 1])[0]
            r = solve_mixed_cauchy(chart, T - float(s), leaf.gamma, zp, cfg)
            gap = chart.coords_minus(Zs[j : j + 1])[0] - r.w
            flow_res[i, j] = norms.w12(chart.frame_neg @ gap)

    ind_res = np.empty(Z.shape[0])
    for j in range(Z.shape[0]):
        th = induced_semiflow_step(chart, leaf, Z[j], s_induced, cfg=cfg)
        zp = chart.coords_plus(th[None, :])[0]
        r = solve_mixed_cauchy(chart, T, leaf.gamma, zp, cfg)
        gap = chart.coords_minus(th[None, :])[0] - r.w
        ind_res[j] = norms.w12(chart.frame_neg @ gap)

    passed = bool(np.max(flow_res) <= tol and np.max(ind_res) <= tol)
    return LeafCompatReport(
        T=float(T),
        sigmas=sig,
        flow_residuals=flow_res,
        induced_residuals=ind_res,
        tol=tol,
        passed=passed,
    )


@dataclasses.dataclass
class LeafConvergenceReport:
    """Hausdorff-style distance of leaves to the central leaf, per time."""

    T_list: np.ndarray
    distances: np.ndarray
    rate: float
    mu: float
    passed: bool

    def summary(self) -> dict:
        return {
            "T_list": [float(t) for t in self.T_list],
            "distances": [float(v) for v in self.distances],
            "rate": self.rate,
            "mu_over_16": self.mu / 16.0,
            "passed": self.passed,
        }


def verify_leaf_convergence(
    chart: LocalChart,
    pair: ConleyPair,
    gamma: np.ndarray,
    T_list: Sequence[float],
    per_axis: int = 9,
    cfg: Optional[FlowConfig] = None,
) -> LeafConvergenceReport:
    """Leaves approach the ascending disk exponentially in the leaf time."""
    T_arr = np.asarray(list(T_list), dtype=np.float64)
    if T_arr.size < 4 or np.any(np.diff(T_arr) <= 0.0):
        raise ConfigError("need at least 4 ascending leaf times")
    cfg = cfg or FlowConfig()
    central = sample_leaf(chart, pair, None, per_axis=per_axis, cfg=cfg)
    disk = central.kept_states()
    dists = []
    for T in T_arr:
        leaf = sample_leaf(chart, pair, gamma, float(T), per_axis=per_axis, cfg=cfg)
        D = cdist(leaf.kept_states(), disk)
        scale = math.sqrt(chart.sys.metric_weight())
        dists.append(float(np.max(np.min(D, axis=1))) * scale)
    dist_arr = np.asarray(dists)
    rate = _fit_decay_rate(T_arr, dist_arr)
    passed = rate >= chart.mu / 16.0
    return LeafConvergenceReport(
        T_list=T_arr, distances=dist_arr, rate=rate, mu=chart.mu, passed=passed
    )


# ---------------------------------------------------------------------------
# induced flow
# ---------------------------------------------------------------------------


def induced_semiflow_step(
    chart: LocalChart,
    leaf: LeafSample,
    z: np.ndarray,
    s: float,
    cfg: Optional[FlowConfig] = None,
) -> np.ndarray:
    """Leafwise flow: contract along the stable graph, re-lift to the leaf.

    Project to the contracting coordinates, lift to the stable graph,
    flow forward for s, project again, and lift through the leaf's
    graph map.  At s = 0 this is the identity on leaf points.
    """
    if leaf.gamma is not None and not 0.0 <= s < leaf.T - leaf.pair.tau:
        raise ConfigError(f"step {s:g} outside [0, {leaf.T - leaf.pair.tau:g})")
    if s < 0.0:
        raise ConfigError("step must be non-negative")
    cfg = cfg or FlowConfig()
    z = np.asarray(z, dtype=np.float64)
    zp = chart.coords_plus(z[None, :])[0]
    lift = solve_mixed_cauchy(chart, chart.t_stable(), np.zeros(chart.index), zp, cfg)
    q = flow_state(chart.sys, lift.state0, s, cfg) if s > 0.0 else lift.state0
    zp_s = chart.coords_plus(q[None, :])[0]
    g = np.zeros(chart.index) if leaf.gamma is None else leaf.gamma
    T = leaf.T if leaf.gamma is not None else chart.t_stable()
    out = solve_mixed_cauchy(chart, T, g, zp_s, cfg)
    return chart.from_coords(out.w, zp_s)


# ---------------------------------------------------------------------------
# action decrease along the induced flow
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ActionDecreaseReport:
    """Derivative of the action along induced steps at leaf boundaries."""

    alpha: float
    threshold: float
    derivatives: np.ndarray
    boundary_actions: np.ndarray
    n_samples: int
    passed: bool

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "threshold": self.threshold,
            "worst": float(np.max(self.derivatives)),
            "n_samples": self.n_samples,
            "passed": self.passed,
        }


def _gradient_floor(
    chart: LocalChart, cutoff: float, grid_n: int, sobol_n: int = 8192
) -> float:
    """Min gradient norm on the chart ball above the action cutoff."""
    sys = chart.sys
    n = sys.n_state
    if n <= 4:
        axes = [
            np.linspace(c - chart.rho0, c + chart.rho0, grid_n) for c in chart.cp.state
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        Z = np.stack([g.ravel() for g in mesh], axis=1)
    else:
        # dense mesh is infeasible; low-discrepancy ball sample instead
        from scipy.stats import qmc

        U = qmc.Sobol(n, scramble=True, seed=0).random(sobol_n)
        Z = chart.cp.state[None, :] + (2.0 * U - 1.0) * chart.rho0
    inside = sys.norm_many(Z - chart.cp.state[None, :]) <= chart.rho0
    above = sys.action_many(Z) > cutoff
    mask = inside & above
    if not np.any(mask):
        raise AlphaDegenerate(
            "no chart-ball grid point lies above the window midpoint; "
            "shrink the action window or grow the chart"
        )
    g = sys.norm_many(sys.grad_many(Z[mask]))
    alpha = float(np.min(g))

    # the infimum usually sits on the cutoff surface between mesh points,
    # so the raw grid value carries a one-sided bias; polish it away with
    # a constrained descent from the best mesh point
    wgt = sys.metric_weight()
    z_best = Z[mask][int(np.argmin(g))]
    cons = [
        {
            "type": "ineq",
            "fun": lambda z: float(sys.action(z)) - cutoff,
            "jac": lambda z: wgt * sys.grad(z),
        },
        {
            "type": "ineq",
            "fun": lambda z: chart.rho0**2
            - wgt * float(np.sum((z - chart.cp.state) ** 2)),
            "jac": lambda z: -2.0 * wgt * (z - chart.cp.state),
        },
    ]
    try:
        res = optimize.minimize(
            lambda z: wgt * float(np.dot(sys.grad(z), sys.grad(z))),
            z_best,
            jac=lambda z: 2.0 * wgt * (sys.hessian(z) @ sys.grad(z)),
            method="SLSQP",
            constraints=cons,
            options={"maxiter": 80, "ftol": 1e-14},
        )
        zp = np.asarray(res.x, float)
        ok = (
            np.all(np.isfinite(zp))
            and float(sys.action(zp)) >= cutoff - 1e-9 * max(1.0, abs(cutoff))
            and float(sys.norm_many((zp - chart.cp.state)[None, :])[0])
            <= chart.rho0 * (1.0 + 1e-9)
        )
        if ok:
            alpha = min(alpha, float(sys.norm_many(sys.grad(zp)[None, :])[0]))
    except Exception:
        pass

    if alpha < 1e-6:
        raise AlphaDegenerate(
            f"gradient floor {alpha:.2e} is numerically zero; shrink the chart ball"
        )
    return alpha


def _boundary_samples(
    chart: LocalChart,
    pair: ConleyPair,
    leaf: LeafSample,
    n_samples: int,
    seed: int,
    cfg: FlowConfig,
) -> np.ndarray:
    """States on the leaf just under the action cutoff, by bisection.

    Walks rays in the contracting coordinates and bisects the action
    crossing; each probe is one mixed solve on the leaf's data.
    """
    rng = np.random.default_rng(seed)
    p = chart.dim_plus
    cut = leaf.cutoff()
    g = np.zeros(chart.index) if leaf.gamma is None else leaf.gamma

    def leaf_state(zp: np.ndarray) -> np.ndarray:
        r = solve_mixed_cauchy(chart, leaf.T, g, zp, cfg)
        return chart.from_coords(r.w, zp)

    out = []
    attempts = 0
    while len(out) < n_samples and attempts < 4 * n_samples:
        attempts += 1
        d = rng.normal(size=p)
        d /= np.linalg.norm(d)
        target = cut - pair.eps * rng.uniform(0.02, 0.12)
        lo, hi = 0.0, chart.b_plus
        if chart.sys.action(leaf_state(hi * d)) < target:
            continue  # this ray never reaches the boundary inside the ball
        for _ in range(28):
            mid = 0.5 * (lo + hi)
            if chart.sys.action(leaf_state(mid * d)) < target:
                lo = mid
            else:
                hi = mid
        z = leaf_state(lo * d)
        if chart.sys.action(z) < cut:
            out.append(z)
    if len(out) < n_samples:
        raise EmptyLeaf(
            f"only {len(out)} of {n_samples} boundary samples reachable inside the ball"
        )
    return np.stack(out)


def verify_action_decrease(
    chart: LocalChart,
    pair: ConleyPair,
    T: Optional[float] = None,
    n_samples: int = 50,
    s0: float = 1e-3,
    grid_n: int = 41,
    seed: int = 0,
    cfg: Optional[FlowConfig] = None,
    slack: float = 0.1,
) -> ActionDecreaseReport:
    """Action decreases at a definite rate along induced boundary steps.

    The floor `alpha` is the minimum gradient norm on the chart ball
    above the half-window level; the pass threshold is a quarter of its
    square, relaxed by `slack` for differentiation noise.
    """
    cfg = cfg or FlowConfig()
    c = pair.cp.action
    alpha = _gradient_floor(chart, c + 0.5 * pair.eps, grid_n)
    bound = 0.25 * alpha * alpha
    threshold = -bound + slack * bound

    if T is None:
        T = max(4.0, 2.0 * pair.tau + 1.0)
    gammas, _, _ = descending_gammas(chart, pair.eps, n=4, seed=seed, cfg=cfg)
    per_leaf = -(-n_samples // gammas.shape[0])  # ceil split across leaves
    derivs, acts = [], []
    for row, gam in enumerate(gammas):
        if len(derivs) >= n_samples:
            break
        leaf = sample_leaf(chart, pair, gam, T, per_axis=5, cfg=cfg)
        Z = _boundary_samples(chart, pair, leaf, per_leaf, seed + row, cfg)
        for z in Z:
            if len(derivs) >= n_samples:
                break
            th = induced_semiflow_step(chart, leaf, z, s0, cfg=cfg)
            dS = (chart.sys.action(th) - chart.sys.action(z)) / s0
            derivs.append(dS)
            acts.append(chart.sys.action(z))
    d_arr = np.asarray(derivs)
    passed = bool(np.all(d_arr <= threshold))
    return ActionDecreaseReport(
        alpha=alpha,
        threshold=threshold,
        derivatives=d_arr,
        boundary_actions=np.asarray(acts),
        n_samples=int(d_arr.size),
        passed=passed,
    )


# ---------------------------------------------------------------------------
# shrinking the Conley set into a prescribed ball
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ShrinkReport:
    """Window-shrinking run driving the Conley set into a target ball."""

    delta: float
    rounds: list[dict]
    eps: float
    tau: float
    radius: float
    passed: bool

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "rounds": self.rounds,
            "eps": self.eps,
            "tau": self.tau,
            "radius": self.radius,
            "passed": self.passed,
        }


def shrink_into_ball(
    sys: ModelSystem,
    cp: CriticalPoint,
    crit: CritSet,
    delta: float,
    start_eps: Optional[float] = None,
    cells: int = 48,
    max_rounds: int = 10,
    cfg: Optional[FlowConfig] = None,
) -> ShrinkReport:
    """Halve the action window until the Conley set fits a delta-ball.

    Each round rebuilds the pair, rasterizes it on a locally scaled
    grid, and measures the farthest cell of the isolating set from the
    rest point; the window time is re-chosen per round so the raster
    keeps resolving the exit set.
    """
    cfg = cfg or FlowConfig()
    eps = default_epsilon(crit) if start_eps is None else float(start_eps)
    lam_min = float(np.min(np.abs(cp.eigenvalues)))
    lam_u = (
        float(-np.min(cp.eigenvalues)) if cp.morse_index > 0 else lam_min
    )
    rounds: list[dict] = []
    for _ in range(max_rounds):
        r_box = max(2.0 * math.sqrt(2.0 * eps / lam_min), 1.5 * delta)
        h = 2.0 * r_box / cells
        # keep the exit reach a few cells wide: exp(-2 tau lam) sqrt(2 eps/lam) >= 2.5 h
        reach = math.sqrt(2.0 * eps / lam_u)
        tau = 0.05
        if reach > 2.5 * h:
            tau = max(0.05, math.log(reach / (2.5 * h)) / (2.0 * lam_u))
        pair = build_conley_pair(sys, cp, eps=eps, tau=tau, cfg=cfg, crit=crit)
        grid = Grid(
            tuple((float(c - r_box), float(c + r_box)) for c in cp.state),
            (cells,) * sys.n_state,
        )
        mask_n, _ = pair.rasterize(grid)
        centers = grid.centers()[mask_n.cells.ravel()]
        radius = float(
            np.max(np.linalg.norm(centers - cp.state[None, :], axis=1))
        ) + 0.5 * float(np.max(grid.steps()))
        rounds.append({"eps": eps, "tau": tau, "radius": radius})
        if radius <= delta:
            return ShrinkReport(
                delta=delta, rounds=rounds, eps=eps, tau=tau, radius=radius, passed=True
            )
        eps *= 0.5
    last = rounds[-1]
    return ShrinkReport(
        delta=delta,
        rounds=rounds,
        eps=float(last["eps"]),
        tau=float(last["tau"]),
        radius=float(last["radius"]),
        passed=False,
    )
