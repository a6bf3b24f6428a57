"""Index pairs around critical points, and the stacked filtration.

A pair for a critical point at action value c is carved out of the
window (c - eps, c + eps) by two flow tests: states still above
c - eps after time tau form the isolating neighborhood N, and the
members of N that have dropped below c - eps by time 2*tau form the
exit set L.  Path components are resolved on a raster grid by flood
fill from the critical point, so all component certificates hold at
grid resolution only.

The filtration stacks these neighborhoods up the index grading: stage k
is the time-T_k flow preimage of (previous stage union all index-k
neighborhoods), intersected with the ambient sublevel set.  T_k is
grown by doubling until the exit sets one level up land inside the
stage, which is what makes consecutive stages a long exact sequence of
one critical level each.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from .critical import CriticalPoint, CritSet
from .errors import (
    ConfigError,
    DisjointnessFailure,
    EpsilonTooLarge,
    NestingViolation,
    OracleError,
    TLimitExceeded,
)
from . import _kernels
from .homology import Grid, Mask, RasterReport, rasterize, relative_homology
from .model import ModelSystem
from .semiflow import (
    ERR,
    IN,
    OUT,
    ActionAbove,
    ActionBelow,
    FlowConfig,
    Predicate,
    PredicateIntersection,
    TimeTPreimage,
    flow_states,
    integrate,
)

__all__ = [
    "ConleyPair",
    "ExitSetReport",
    "DisjointnessReport",
    "Filtration",
    "FiltrationStage",
    "build_conley_pair",
    "build_filtration",
    "choose_T_k",
    "default_epsilon",
    "estimate_tau",
    "verify_disjointness",
    "verify_exit_set",
]


def default_epsilon(crit: CritSet) -> float:
    """A quarter of the smallest gap between distinct critical values."""
    gap = crit.min_value_gap()
    return 0.25 if math.isinf(gap) else 0.25 * gap


def estimate_tau(
    sys: ModelSystem,
    cp: CriticalPoint,
    eps: float,
    cfg: Optional[FlowConfig] = None,
    offset: float = 0.05,
    t_cap: float = 50.0,
    seed: int = 0,
) -> float:
    """Time for the action to drop by eps from the slowest probed orbit.

    Probes start on a small sphere around the critical point: both signs
    of every unstable direction plus a few random directions.  Probes
    that never achieve the drop within the cap ride the stable manifold
    and are ignored; if all of them do, the point is attracting and any
    positive time works.
    """
    n = cp.state.size
    rng = np.random.default_rng(seed)
    dirs = [v for v in cp.neg_frame.T for v in (v, -v)]
    extra = rng.standard_normal((max(4, 2 * n), n))
    dirs.extend(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    target = cp.action - eps
    slowest = 0.0
    for v in dirs:
        z = cp.state + offset * np.asarray(v, dtype=np.float64)
        traj = integrate(sys, z, t_cap, cfg, n_records=257)
        below = np.flatnonzero(traj.actions <= target)
        if below.size:
            slowest = max(slowest, float(traj.times[below[0]]))
    return slowest if slowest > 0.0 else 1.0


@dataclasses.dataclass
class ConleyPair:
    """Isolating neighborhood and exit set for one critical point.

    `window` and `exit_window` are the raw action-test oracles without
    the component restriction; rasterize() resolves the component on a
    grid and caches the masks.
    """

    sys: ModelSystem
    cp: CriticalPoint
    eps: float
    tau: float
    window: Predicate
    exit_window: Predicate
    flow_cfg: FlowConfig
    guard: float = 0.0
    _masks: dict = dataclasses.field(default_factory=dict, repr=False)

    @property
    def value(self) -> float:
        return self.cp.action

    def rasterize(self, grid: Grid, batch: int = 8192) -> tuple[Mask, Mask]:
        """(N mask, L mask) on the grid, component-resolved and cached."""
        key = (grid.box, grid.shape)
        hit = self._masks.get(key)
        if hit is not None:
            return hit
        rep_n = rasterize(grid, self.window.many, batch=batch)
        comp = rep_n.mask.component_containing(self.cp.state)
        rep_l = rasterize(grid, self.exit_window.many, batch=batch)
        mask_l = rep_l.mask.intersect(comp)
        idx = grid.locate(self.cp.state)
        if not comp.cells[idx] or mask_l.cells[idx]:
            raise OracleError(
                f"critical cell of {self.cp.label} must sit in N minus L"
            )
        self._masks[key] = (comp, mask_l)
        return comp, mask_l

    def member_many(self, Z: np.ndarray, grid: Grid) -> np.ndarray:
        """Tri-state N membership with the component resolved on `grid`."""
        mask_n, _ = self.rasterize(grid)
        code = self.window.many(Z)
        lin = grid.locate_many(Z)
        inside = (lin >= 0) & mask_n.cells.ravel()[np.clip(lin, 0, None)]
        out = np.where(code == IN, np.where(inside, IN, OUT), code)
        return out.astype(np.int8)

    def exit_member_many(self, Z: np.ndarray, grid: Grid) -> np.ndarray:
        _, mask_l = self.rasterize(grid)
        code = self.exit_window.many(Z)
        lin = grid.locate_many(Z)
        inside = (lin >= 0) & mask_l.cells.ravel()[np.clip(lin, 0, None)]
        out = np.where(code == IN, np.where(inside, IN, OUT), code)
        return out.astype(np.int8)

    def pair_homology(self, grid: Grid, max_core: int = 2500):
        mask_n, mask_l = self.rasterize(grid)
        return relative_homology(mask_n, mask_l, max_core=max_core)

    def summary(self) -> dict:
        return {
            "label": self.cp.label,
            "value": self.value,
            "eps": self.eps,
            "tau": self.tau,
            "index": self.cp.morse_index,
        }


def build_conley_pair(
    sys: ModelSystem,
    cp: CriticalPoint,
    eps: Optional[float] = None,
    tau: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    crit: Optional[CritSet] = None,
    guard: Optional[float] = None,
) -> ConleyPair:
    """Assemble the two action-window oracles for one critical point.

    N keeps the states of the open sublevel at c + eps whose time-tau
    image still has action above c - eps; L keeps the members of N
    whose time-2*tau image has dropped below c - eps.  With eps under
    half the smallest critical-value gap, the window contains no other
    critical point, which is what makes N isolating.

    The exit set approaches the critical point exponentially in tau
    along the unstable directions (offset a exits once a e^{2 tau l}
    passes the drop radius sqrt(2 eps / l) at the fastest unstable rate
    l), so the default guard radius, inside which no exit-set member
    may appear, is set to half that linearized reach.
    """
    cfg = cfg or FlowConfig()
    if eps is None:
        if crit is None:
            raise ConfigError("need a critical set to pick a default eps")
        eps = default_epsilon(crit)
    eps = float(eps)
    if eps <= 0.0:
        raise ConfigError("eps must be positive")
    if crit is not None:
        gap = crit.min_value_gap()
        if eps >= 0.5 * gap:
            raise EpsilonTooLarge(
                f"eps={eps:g} reaches the neighboring critical value "
                f"(smallest gap {gap:g})"
            )
    if tau is None:
        tau = estimate_tau(sys, cp, eps, cfg)
    tau = float(tau)
    if tau <= 0.0:
        raise ConfigError("tau must be positive")

    c = cp.action
    window = PredicateIntersection(
        ActionBelow(sys, c + eps),
        TimeTPreimage(sys, tau, ActionAbove(sys, c - eps), cfg),
    )
    exit_window = PredicateIntersection(
        window,
        TimeTPreimage(sys, 2.0 * tau, ActionBelow(sys, c - eps), cfg),
    )
    pair = ConleyPair(
        sys=sys,
        cp=cp,
        eps=eps,
        tau=tau,
        window=window,
        exit_window=exit_window,
        flow_cfg=cfg,
    )
    if not window(cp.state) or exit_window(cp.state):
        raise OracleError(
            f"critical point {cp.label} must lie in N and outside L"
        )
    # the exit set must stay away from the critical point itself
    if guard is None:
        lam_top = float(np.max(np.abs(cp.eigenvalues)))
        r_eps = math.sqrt(2.0 * eps / lam_top)
        if cp.morse_index > 0:
            lam_u = float(-np.min(cp.eigenvalues))
            guard = 0.5 * math.sqrt(2.0 * eps / lam_u) * math.exp(-2.0 * tau * lam_u)
        else:
            guard = 0.25 * r_eps
        guard = max(guard, 1e-10)
    n = cp.state.size
    ring = np.random.default_rng(1).standard_normal((4 * n + 8, n))
    ring /= np.linalg.norm(ring, axis=1, keepdims=True)
    probes = cp.state + guard * ring
    if np.any(pair.exit_window.many(probes) == IN):
        raise OracleError(
            f"exit set of {cp.label} meets the {guard:g}-sphere around it; "
            f"raise tau or shrink the guard"
        )
    pair.guard = guard
    return pair


# ---------------------------------------------------------------------------
# structural verification of a pair
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ExitSetReport:
    """Sampled certificate that L really is the way out of N."""

    n_samples: int
    n_exited: int
    n_errors: int
    exit_violations: list
    invariance_violations: list

    @property
    def ok(self) -> bool:
        return not self.exit_violations and not self.invariance_violations

    def summary(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_exited": self.n_exited,
            "n_errors": self.n_errors,
            "exit_violations": len(self.exit_violations),
            "invariance_violations": len(self.invariance_violations),
            "ok": self.ok,
        }


def verify_exit_set(
    pair: ConleyPair,
    grid: Grid,
    samples: int = 200,
    horizon: Optional[float] = None,
    n_records: int = 161,
    seed: int = 0,
) -> ExitSetReport:
    """Track sampled members of N and check both exit-set laws.

    Every tracked orbit that leaves N must have visited L beforehand,
    and once an orbit is in L it must stay in L for as long as it stays
    in N.  Sample states are cell centers of the rasterized N; along a
    trajectory the raw window oracles suffice, because a connected
    orbit cannot switch path components without leaving the window.
    """
    mask_n, _ = pair.rasterize(grid)
    centers = grid.centers()[mask_n.cells.ravel()]
    if centers.shape[0] == 0:
        raise OracleError("rasterized N is empty; nothing to sample")
    rng = np.random.default_rng(seed)
    pick = rng.choice(centers.shape[0], min(samples, centers.shape[0]), replace=False)
    horizon = float(horizon) if horizon is not None else 6.0 * pair.tau

    exit_violations = []
    invariance_violations = []
    n_exited = 0
    n_errors = 0
    for row in pick:
        z = centers[row]
        traj = integrate(pair.sys, z, horizon, pair.flow_cfg, n_records=n_records)
        in_n = pair.window.many(traj.states)
        in_l = pair.exit_window.many(traj.states)
        if np.any(in_n == ERR) or np.any(in_l == ERR):
            n_errors += 1
            continue
        out_idx = np.flatnonzero(in_n == OUT)
        if out_idx.size:
            n_exited += 1
            first_out = int(out_idx[0])
            if not np.any(in_l[:first_out] == IN):
                exit_violations.append(
                    {"state": z.tolist(), "t_exit": float(traj.times[first_out])}
                )
        seen_l = False
        for i in range(in_n.size):
            if in_n[i] == OUT:
                break
            if in_l[i] == IN:
                seen_l = True
            elif seen_l:
                invariance_violations.append(
                    {"state": z.tolist(), "t_return": float(traj.times[i])}
                )
                break
    return ExitSetReport(
        n_samples=int(pick.size),
        n_exited=n_exited,
        n_errors=n_errors,
        exit_violations=exit_violations,
        invariance_violations=invariance_violations,
    )


# ---------------------------------------------------------------------------
# disjointness across critical points
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class DisjointnessReport:
    pairs: list
    retries: int
    overlap_history: list

    @property
    def ok(self) -> bool:
        return not self.overlap_history or self.overlap_history[-1] == 0


def verify_disjointness(
    pairs: Sequence[ConleyPair],
    grid: Grid,
    max_retries: int = 3,
    shrink: float = 0.6,
) -> DisjointnessReport:
    """Check the rasterized neighborhoods are pairwise disjoint.

    On overlap the pairs are rebuilt with shrunken eps and doubled tau
    (shrinking the window shrinks N, growing tau shrinks it further
    since the action only ever decreases), a bounded number of times.
    """
    cur = list(pairs)
    history = []
    for attempt in range(max_retries + 1):
        masks = [p.rasterize(grid)[0] for p in cur]
        overlap = 0
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                overlap += masks[i].intersect(masks[j]).count()
        history.append(overlap)
        if overlap == 0:
            return DisjointnessReport(pairs=cur, retries=attempt, overlap_history=history)
        if attempt == max_retries:
            break
        cur = [
            build_conley_pair(
                p.sys, p.cp, eps=p.eps * shrink, tau=p.tau * 2.0, cfg=p.flow_cfg
            )
            for p in cur
        ]
    raise DisjointnessFailure(
        f"neighborhood overlap persists after {max_retries} retries "
        f"(overlap cells per attempt: {history})"
    )


# ---------------------------------------------------------------------------
# the filtration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class FiltrationStage:
    k: int
    T: float
    pairs: list
    certificate: dict


@dataclasses.dataclass
class Filtration:
    """Nested flow-preimage stages, one critical level each.

    Stage membership is an oracle: z is in stage k when the action of z
    is under the cutoff and the time-T_k image lies in stage k-1 or in
    one of the index-k neighborhoods.  Evaluation recurses down the
    stages, flowing again at each level.
    """

    sys: ModelSystem
    cutoff: float
    grid: Grid
    stages: list[FiltrationStage]
    flow_cfg: FlowConfig
    _masks: dict = dataclasses.field(default_factory=dict, repr=False)

    @property
    def top(self) -> int:
        return len(self.stages) - 1

    def n_union_many(self, k: int, Z: np.ndarray) -> np.ndarray:
        """Tri-state membership of the union of index-k neighborhoods."""
        stage = self.stages[k]
        out = np.full(Z.shape[0], OUT, dtype=np.int8)
        err = np.zeros(Z.shape[0], dtype=bool)
        for p in stage.pairs:
            code = p.member_many(Z, self.grid)
            err |= code == ERR
            out = np.maximum(out, np.where(code == ERR, OUT, code))
        return np.where((out == IN) | ~err, out, ERR).astype(np.int8)

    def member_many(self, k: int, Z: np.ndarray) -> np.ndarray:
        """Tri-state membership of stage k; k = -1 is the empty set."""
        Z = np.asarray(Z, dtype=np.float64)
        if k < 0:
            return np.full(Z.shape[0], OUT, dtype=np.int8)
        sub = ActionBelow(self.sys, self.cutoff).many(Z)
        live = sub == IN
        out = sub.copy()
        if not np.any(live):
            return out
        ZT, status, _ = flow_states(self.sys, Z[live], self.stages[k].T, self.flow_cfg)
        inner = np.full(ZT.shape[0], ERR, dtype=np.int8)
        ok = status != _kernels.STATUS_ESCAPED
        if np.any(ok):
            a = self.n_union_many(k, ZT[ok])
            b = self.member_many(k - 1, ZT[ok])
            both = np.maximum(a, b)
            both = np.where((a == ERR) | (b == ERR), np.where(both == IN, IN, ERR), both)
            inner[ok] = both
        out[live] = inner
        return out.astype(np.int8)

    def member(self, k: int, z: np.ndarray) -> bool:
        code = int(self.member_many(k, np.asarray(z, float)[None, :])[0])
        if code == ERR:
            raise OracleError("stage membership could not be classified")
        return code == IN

    def mask(self, k: int) -> Mask:
        """Rasterized stage k on the configured grid (cached)."""
        if k < 0:
            return Mask(self.grid, np.zeros(self.grid.shape, dtype=bool))
        hit = self._masks.get(k)
        if hit is None:
            rep = rasterize(self.grid, lambda Z, kk=k: self.member_many(kk, Z))
            hit = rep.mask
            self._masks[k] = hit
        return hit

    def verify_nesting(self) -> None:
        """Cellwise nesting of consecutive stage rasters."""
        for k in range(len(self.stages)):
            lo, hi = self.mask(k - 1), self.mask(k)
            bad = lo.cells & ~hi.cells
            if bad.any():
                idx = np.unravel_index(int(np.flatnonzero(bad.ravel())[0]), self.grid.shape)
                z = self.grid.cell_center(idx)
                raise NestingViolation(
                    f"stage {k - 1} cell at {z.tolist()} escapes stage {k}"
                )

    def verify_forward_invariance(
        self,
        k: int,
        n_samples: int = 100,
        times: Sequence[float] = (0.5, 1.0, 2.0),
        seed: int = 0,
    ) -> dict:
        """Flow random stage members and re-test membership."""
        mask = self.mask(k)
        centers = self.grid.centers()[mask.cells.ravel()]
        if centers.shape[0] == 0:
            return {"k": k, "n_samples": 0, "violations": []}
        rng = np.random.default_rng(seed)
        pick = rng.choice(centers.shape[0], min(n_samples, centers.shape[0]), replace=False)
        Z = centers[pick]
        violations = []
        for s in times:
            ZT, status, _ = flow_states(self.sys, Z, float(s), self.flow_cfg)
            code = self.member_many(k, ZT)
            bad = (code == OUT) & (status != _kernels.STATUS_ESCAPED)
            for row in np.flatnonzero(bad):
                violations.append({"s": float(s), "state": Z[row].tolist()})
        return {"k": k, "n_samples": int(pick.size), "violations": violations}

    def stage_homology(self, k: int, max_core: int = 2500):
        """Relative homology of (stage k, stage k-1) rasters."""
        lo = self.mask(k - 1)
        return relative_homology(self.mask(k), None if lo.is_empty() else lo, max_core=max_core)

    def summary(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "stages": [
                {
                    "k": st.k,
                    "T": st.T,
                    "pairs": [p.summary() for p in st.pairs],
                    "certificate": st.certificate,
                }
                for st in self.stages
            ],
        }


def _exit_targets(pairs: Sequence[ConleyPair], grid: Grid, seed: int) -> np.ndarray:
    """Exit-set cell centers plus a jittered in-cell guard mesh.

    No dilation: raster exit cells already overcover the true exit set
    by up to half a cell, and padding outward would demand landings
    from points the exit set never contains, inflating the stage time
    past what raster separability of the basins can tolerate.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    h = grid.steps()
    for p in pairs:
        _, mask_l = p.rasterize(grid)
        centers = grid.centers()[mask_l.cells.ravel()]
        if centers.shape[0] == 0:
            continue
        jitter = rng.uniform(-1 / 3, 1 / 3, size=(centers.shape[0], grid.dim)) * h
        chunks.append(centers)
        chunks.append(centers + jitter)
    if not chunks:
        return np.zeros((0, grid.dim))
    return np.vstack(chunks)


def choose_T_k(
    partial: Filtration,
    k: int,
    targets: np.ndarray,
    tau_ref: float,
    T_max: Optional[float] = None,
) -> tuple[float, dict]:
    """Near-minimal time whose flow lands the targets in the stage body.

    The stage body is (previous stage union index-k neighborhoods); the
    targets are exit-set samples one index up, or the whole sublevel
    raster at the top stage.  The body is forward invariant, so the
    certificate is monotone in T and a doubling ladder brackets the
    smallest working time; bisection then shrinks the bracket.  Keeping
    T near minimal matters: the stage must still exclude a raster-wide
    band around the stable manifolds one index up, and that band
    narrows exponentially with T.
    """
    if T_max is None:
        T_max = 512.0 * tau_ref
    if targets.shape[0] == 0:
        return tau_ref, {"n_targets": 0, "tried": [], "accepted": tau_ref}
    tried = []

    def misses(T: float) -> int:
        ZT, status, _ = flow_states(partial.sys, targets, T, partial.flow_cfg)
        ok = status != _kernels.STATUS_ESCAPED
        a = partial.n_union_many(k, ZT[ok])
        b = partial.member_many(k - 1, ZT[ok])
        good = np.zeros(targets.shape[0], dtype=bool)
        good[np.flatnonzero(ok)] = (a == IN) | (b == IN)
        n = int((~good).sum())
        tried.append({"T": T, "misses": n})
        return n

    lo = 0.0
    T = tau_ref / 8.0
    while True:
        if T > T_max * (1 + 1e-9):
            raise TLimitExceeded(
                f"no time up to {T_max:g} lands all {targets.shape[0]} "
                f"stage-{k} targets "
                f"(miss history {[t['misses'] for t in tried]})"
            )
        if misses(T) == 0:
            break
        lo = T
        T *= 2.0
    for _ in range(6):
        mid = 0.5 * (lo + T)
        if misses(mid) == 0:
            T = mid
        else:
            lo = mid
    T = 1.05 * T
    if misses(T) != 0:
        # raster flicker on the margin bump; fall back to the certified time
        T = T / 1.05
    return T, {"n_targets": int(targets.shape[0]), "tried": tried, "accepted": T}


def build_filtration(
    sys: ModelSystem,
    crit: CritSet,
    pairs: Sequence[ConleyPair],
    grid: Grid,
    cutoff: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    T_max: Optional[float] = None,
    seed: int = 0,
) -> Filtration:
    """Stack the neighborhoods into nested stages, choosing each T_k.

    Stages run from index 0 to the top occupied index.  For every stage
    below the top, T_k certifies that the exit sets one index up land
    inside the stage; the top T additionally swallows the whole raster
    of the ambient sublevel set, which makes the top stage everything.
    """
    cfg = cfg or FlowConfig()
    cutoff = float(cutoff) if cutoff is not None else crit.level
    top = crit.max_index()
    if top < 0:
        raise ConfigError("cannot build a filtration without critical points")
    by_index: dict[int, list[ConleyPair]] = {}
    for p in pairs:
        by_index.setdefault(p.cp.morse_index, []).append(p)

    filt = Filtration(sys=sys, cutoff=cutoff, grid=grid, stages=[], flow_cfg=cfg)
    for k in range(top + 1):
        stage_pairs = by_index.get(k, [])
        tau_ref = min((p.tau for p in stage_pairs), default=1.0)
        # provisional stage so the body oracle at index k exists
        filt.stages.append(FiltrationStage(k=k, T=tau_ref, pairs=stage_pairs, certificate={}))
        if k < top:
            targets = _exit_targets(by_index.get(k + 1, []), grid, seed + k)
        else:
            sub = rasterize(grid, ActionBelow(sys, cutoff).many)
            targets = grid.centers()[sub.mask.cells.ravel()]
        T, cert = choose_T_k(filt, k, targets, tau_ref, T_max)
        filt.stages[k] = FiltrationStage(k=k, T=T, pairs=stage_pairs, certificate=cert)
        filt._masks.clear()
    filt.verify_nesting()
    return filt
