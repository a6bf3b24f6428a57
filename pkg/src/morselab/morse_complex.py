"""Connecting orbits and the integer boundary operator they generate.

Orbit counting is done in the universal-cover chart: a flow limit is
recorded as a critical point *plus* the deck shift of the copy actually
reached, so loops that descend to a translated copy of the same minimum
still cancel (or not) with the correct signs.

Signs follow a fixed orientation convention:

* index 1 -> 0: the two descending rays inherit the sign of the frame
  column, +1 along +v and -1 along -v;
* index 2 -> 1: the descending circle is swept by angle; each basin wall
  crossed contributes +1 when the minima on its two sides appear in the
  same order as the wall saddle's own descending rays, -1 when swapped.

With that convention each wall crossing contributes (after - before) to
the composite boundary in chart labels, so d(d(x)) telescopes to zero
around the sweep circle; the check in build_morse_complex is exact
integer arithmetic, not a tolerance test.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from .critical import (
    CriticalPoint,
    CritSet,
    descending_sphere_mesh,
    unstable_sphere_seed,
)
from .errors import (
    BoundarySquareNonzero,
    ConfigError,
    MorseSmaleViolation,
    NonConvergent,
    UnsupportedIndex,
)
from .model import ModelSystem
from .semiflow import FlowConfig, integrate, settle
from .snf import ChainComplexZ, HomologyGroup

__all__ = [
    "LimitLabel",
    "ConnectingOrbit",
    "MorseComplex",
    "classify_limit",
    "count_connecting_orbits",
    "build_morse_complex",
]

# a settled state should sit this close to the critical point it found
MATCH_TOL = 1e-4
# trajectory passes closer than this to a saddle => the orbit runs through it
STALL_TOL = 5e-3


@dataclasses.dataclass(frozen=True)
class LimitLabel:
    """Flow limit in the chart: which point, which deck copy, how close."""

    label: str
    shift: tuple[int, ...]
    dist: float

    @property
    def key(self) -> tuple:
        return (self.label, self.shift)


@dataclasses.dataclass
class ConnectingOrbit:
    """One signed flow line between critical points of adjacent index."""

    source: str
    target: str
    sign: int
    target_shift: tuple[int, ...]
    direction: float  # ray sign for index-1 sources, sweep angle for index-2
    seed: np.ndarray
    samples: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "sign": self.sign,
            "target_shift": list(self.target_shift),
            "direction": self.direction,
        }


def _chart_match(
    sys: ModelSystem, z: np.ndarray, points: Sequence[CriticalPoint]
) -> LimitLabel:
    """Best (point, deck shift) explanation of z, without canonicalizing."""
    best = None
    for cp in points:
        shift, resid = sys.chart_shift(z, cp.state)
        if best is None or resid < best.dist:
            best = LimitLabel(cp.label, tuple(int(s) for s in shift), resid)
    if best is None:
        raise ConfigError("no candidate critical points given")
    return best


def classify_limit(
    sys: ModelSystem,
    crit: CritSet,
    z: np.ndarray,
    cfg: Optional[FlowConfig] = None,
    settle_tol: float = 1e-9,
    t_max: float = 300.0,
) -> Optional[LimitLabel]:
    """Flow z forward until it settles and name the limit, or None.

    None means the orbit escaped or failed to settle within t_max; both
    are reported rather than guessed at.
    """
    labels = _classify_many(sys, crit, np.asarray(z, dtype=np.float64)[None, :],
                            cfg, settle_tol, t_max)
    return labels[0]


def _classify_many(sys, crit, Z, cfg=None, settle_tol=1e-9, t_max=300.0):
    Zs, settled, escaped = settle(sys, Z, cfg, settle_tol=settle_tol, t_max=t_max)
    out: list[Optional[LimitLabel]] = []
    for row in range(Z.shape[0]):
        if escaped[row] or not settled[row]:
            out.append(None)
            continue
        lab = _chart_match(sys, Zs[row], crit.points)
        out.append(lab if lab.dist <= MATCH_TOL else None)
    return out


def _saddle_passage(
    sys: ModelSystem,
    crit: CritSet,
    seed: np.ndarray,
    cfg: Optional[FlowConfig],
    t_max: float = 300.0,
) -> tuple[LimitLabel, np.ndarray]:
    """Which index-1 point a near-wall orbit lingers at, with samples.

    The orbit from a bisected wall angle spends a long stretch near the
    wall's saddle before either minimum claims it; the closest approach
    over a recorded trajectory identifies that saddle and its deck copy.
    """
    saddles = crit.at_index(1)
    if not saddles:
        raise MorseSmaleViolation("wall crossing found but no index-1 points exist")
    traj = integrate(sys, seed, t_max, cfg, n_records=1024, settle_tol=1e-9)
    best: Optional[LimitLabel] = None
    for cp in saddles:
        for row in range(traj.states.shape[0]):
            shift, resid = sys.chart_shift(traj.states[row], cp.state)
            cand = LimitLabel(cp.label, tuple(int(s) for s in shift), resid)
            if best is None or cand.dist < best.dist:
                best = cand
    assert best is not None
    if best.dist > STALL_TOL:
        raise MorseSmaleViolation(
            f"orbit from a bisected wall angle never approached an index-1 "
            f"point (closest {best.dist:.2e}); the wall cannot be labeled"
        )
    return best, traj.states


def _ray_limits(
    sys: ModelSystem,
    crit: CritSet,
    cp: CriticalPoint,
    eps_u: float,
    cfg: Optional[FlowConfig],
    offset: float,
) -> tuple[LimitLabel, LimitLabel, np.ndarray, np.ndarray]:
    """Limits of the two descending rays of an index-1 point (+v first)."""
    seeds = []
    for sign in (1.0, -1.0):
        seeds.append(
            unstable_sphere_seed(sys, cp, eps_u, direction=0, sign=sign,
                                 offset=offset, cfg=cfg)
        )
    labels = _classify_many(sys, crit, np.stack(seeds), cfg)
    for sign, lab in zip((1.0, -1.0), labels):
        if lab is None:
            raise NonConvergent(
                f"descending ray {sign:+.0f} of {cp.label} did not settle"
            )
        target = crit.by_label(lab.label)
        if target.morse_index != 0:
            raise MorseSmaleViolation(
                f"descending ray of {cp.label} settled on {lab.label} "
                f"(index {target.morse_index}); flow lines between saddles "
                f"break the counting rules"
            )
    return labels[0], labels[1], seeds[0], seeds[1]


def count_connecting_orbits(
    sys: ModelSystem,
    crit: CritSet,
    source: CriticalPoint,
    target: CriticalPoint,
    eps_u: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    n_theta: int = 64,
    offset: float = 1e-4,
) -> list[ConnectingOrbit]:
    """Signed flow lines from source down to target (index drop one)."""
    if source.morse_index != target.morse_index + 1:
        raise ConfigError("orbit counting needs an index drop of exactly one")
    orbits = _orbits_from(sys, crit, source, _resolve_eps(crit, eps_u), cfg,
                          n_theta, offset)
    return [ob for ob in orbits if ob.target == target.label]


def _resolve_eps(crit: CritSet, eps_u: Optional[float]) -> float:
    if eps_u is not None:
        if eps_u <= 0:
            raise ConfigError("eps_u must be positive")
        return eps_u
    gap = crit.min_value_gap()
    if not math.isfinite(gap):
        return 0.25
    return 0.25 * gap


def _orbits_from(sys, crit, cp, eps_u, cfg, n_theta, offset, ray_cache=None):
    if ray_cache is None:
        ray_cache = {}
    if cp.morse_index == 1:
        return _orbits_from_index1(sys, crit, cp, eps_u, cfg, offset, ray_cache)
    if cp.morse_index == 2:
        return _orbits_from_index2(sys, crit, cp, eps_u, cfg, n_theta, offset,
                                   ray_cache)
    raise UnsupportedIndex(
        f"orbit counting from index {cp.morse_index} is not implemented; "
        f"only index drops 1->0 and 2->1 are supported"
    )


def _rays_cached(sys, crit, saddle, eps_u, cfg, offset, cache):
    if saddle.label not in cache:
        cache[saddle.label] = _ray_limits(sys, crit, saddle, eps_u, cfg, offset)
    return cache[saddle.label]


def _orbits_from_index1(sys, crit, cp, eps_u, cfg, offset, ray_cache):
    plus, minus, seed_p, seed_m = _rays_cached(sys, crit, cp, eps_u, cfg,
                                               offset, ray_cache)
    out = []
    for sign, lab, seed in ((1, plus, seed_p), (-1, minus, seed_m)):
        traj = integrate(sys, seed, 60.0, cfg, n_records=257, settle_tol=1e-9)
        out.append(
            ConnectingOrbit(
                source=cp.label,
                target=lab.label,
                sign=sign,
                target_shift=lab.shift,
                direction=float(sign),
                seed=seed,
                samples=traj.states,
            )
        )
    return out


def _orbits_from_index2(sys, crit, cp, eps_u, cfg, n_theta, offset, ray_cache):
    if n_theta < 8:
        raise ConfigError("n_theta too small to resolve basin walls")
    thetas = np.arange(n_theta) * (2.0 * math.pi / n_theta)
    W = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    mesh = descending_sphere_mesh(sys, cp, eps_u, W, offset=offset, cfg=cfg)
    labels = _classify_many(sys, crit, mesh, cfg)
    labels = _reject_grid_walls(sys, crit, cp, eps_u, thetas, labels, cfg, offset)

    walls: list[tuple[float, LimitLabel, LimitLabel, Optional[LimitLabel]]] = []
    n = len(thetas)
    for i in range(n):
        j = (i + 1) % n
        if labels[i].key == labels[j].key:
            continue
        hi = thetas[i] + 2.0 * math.pi / n
        walls.extend(
            _find_walls(sys, crit, cp, thetas[i], hi, labels[i], labels[j],
                        cfg, offset)
        )

    out = []
    for theta_w, before, after, hit in sorted(walls, key=lambda w: w[0]):
        if hit is None:
            wall, samples = _saddle_passage(
                sys, crit, _ray_point(sys, cp, theta_w, offset), cfg
            )
        else:
            wall = hit
            traj = integrate(sys, _ray_point(sys, cp, theta_w, offset), 60.0,
                             cfg, n_records=257, settle_tol=1e-9)
            samples = traj.states
        sign = _wall_sign(sys, crit, cp, wall, before, after, eps_u, cfg,
                          offset, ray_cache)
        out.append(
            ConnectingOrbit(
                source=cp.label,
                target=wall.label,
                sign=sign,
                target_shift=wall.shift,
                direction=float(theta_w),
                seed=_ray_point(sys, cp, theta_w, offset),
                samples=samples,
            )
        )
    return out


def _ray_point(sys, cp, theta, offset):
    w = math.cos(theta) * cp.neg_frame[:, 0] + math.sin(theta) * cp.neg_frame[:, 1]
    return cp.state + offset * w


def _reject_grid_walls(sys, crit, cp, eps_u, thetas, labels, cfg, offset):
    """Re-seed grid angles that landed on a wall or failed to settle."""
    fixed = list(labels)
    for i, lab in enumerate(labels):
        bad = lab is None
        if not bad:
            hit = crit.by_label(lab.label)
            bad = hit.morse_index != 0
        if not bad:
            continue
        # nudge by a quarter step; an exact wall hit has measure zero
        nudge = thetas[i] + 0.25 * (thetas[1] - thetas[0])
        seed = descending_sphere_mesh(
            sys, cp, eps_u, np.array([[math.cos(nudge), math.sin(nudge)]]),
            offset=offset, cfg=cfg,
        )
        relab = _classify_many(sys, crit, seed, cfg)[0]
        ok = relab is not None and crit.by_label(relab.label).morse_index == 0
        if not ok:
            raise MorseSmaleViolation(
                f"sweep angle {thetas[i]:.4f} of {cp.label} does not reach a "
                f"minimum even after perturbation; descending/ascending "
                f"manifolds look non-transverse here"
            )
        fixed[i] = relab
    return fixed


def _find_walls(sys, crit, cp, lo, hi, lab_lo, lab_hi, cfg, offset,
                budget: int = 4000):
    """All basin-wall angles inside [lo, hi], given differing end labels.

    Bisection runs on the offset ray, not the sphere point: both lie on
    the same flow line up to O(offset), which moves each wall angle a
    little but never the pair of basins it separates.  Returned tuples
    are (angle, basin before, basin after, wall saddle or None).

    Two midpoint outcomes besides plain bisection are handled in stride:
    a probe landing in a third basin splits the bracket (narrow slivers
    squeezed by eigenvalue anisotropy), and a probe settling on an
    index-1 point has hit the wall itself, which pins both the saddle
    and its deck copy without any stall heuristics.
    """
    def probe(theta, width):
        lab = _classify_many(
            sys, crit, _ray_point(sys, cp, theta, offset)[None, :], cfg
        )[0]
        if lab is None:
            # dead on a wall yet unsettled: shift the probe slightly
            lab = _classify_many(
                sys, crit,
                _ray_point(sys, cp, theta + 0.01 * width, offset)[None, :], cfg
            )[0]
        if lab is None:
            raise NonConvergent(
                f"sweep probe of {cp.label} failed to settle twice near "
                f"angle {theta:.12f}"
            )
        return lab

    def grade(lab):
        return crit.by_label(lab.label).morse_index

    # plain bisection; brackets whose end keys agree stop refining, so the
    # capture zone around each wall terminates the recursion on its own
    segments: list[tuple[float, LimitLabel, LimitLabel]] = []
    work = [(lo, hi, lab_lo, lab_hi)]
    spent = 0
    while work:
        a, b, la, lb = work.pop()
        if la.key == lb.key:
            continue
        if b - a < 1e-12:
            segments.append((0.5 * (a + b), la, lb))
            continue
        spent += 1
        if spent > budget:
            raise MorseSmaleViolation(
                f"wall structure of {cp.label} did not stabilize after "
                f"{budget} refinements; basins fragment without limit, "
                f"which a transverse flow cannot produce"
            )
        mid = 0.5 * (a + b)
        lab = probe(mid, b - a)
        if grade(lab) > 1:
            raise MorseSmaleViolation(
                f"sweep probe of {cp.label} settled on {lab.label} of index "
                f"{grade(lab)}; a descending disk cannot generically meet it"
            )
        work.append((a, mid, la, lab))
        work.append((mid, b, lab, lb))

    # pair the collapsed label changes into walls: either a clean
    # min->min jump, or a min->saddle edge matched with its saddle->min
    # partner across the capture zone
    segments.sort(key=lambda s: s[0])
    walls: list[tuple[float, LimitLabel, LimitLabel, Optional[LimitLabel]]] = []
    i = 0
    while i < len(segments):
        theta, la, lb = segments[i]
        ga, gb = grade(la), grade(lb)
        if ga == 0 and gb == 0:
            walls.append((theta, la, lb, None))
            i += 1
            continue
        if ga == 0 and gb == 1:
            if i + 1 < len(segments):
                theta2, la2, lb2 = segments[i + 1]
                if la2.key == lb.key and grade(lb2) == 0:
                    mid = 0.5 * (theta + theta2)
                    if la.key != lb2.key:
                        walls.append((mid, la, lb2, lb))
                    # equal flanks: grazing contact, no transversal crossing
                    i += 2
                    continue
            raise MorseSmaleViolation(
                f"capture zone of {lb.label}{lb.shift} near angle "
                f"{theta:.9f} in the sweep of {cp.label} has no matching "
                f"far edge; wall pairing failed"
            )
        raise MorseSmaleViolation(
            f"inconsistent label grades ({ga}, {gb}) at a collapsed sweep "
            f"bracket of {cp.label} near angle {theta:.9f}"
        )
    return walls


def _wall_sign(sys, crit, cp, wall, before, after, eps_u, cfg, offset,
               ray_cache):
    """Orient one wall crossing against the wall saddle's own rays."""
    saddle = crit.by_label(wall.label)
    plus, minus, _, _ = _rays_cached(sys, crit, saddle, eps_u, cfg, offset,
                                     ray_cache)
    t_plus = (plus.label, _add_shift(plus.shift, wall.shift))
    t_minus = (minus.label, _add_shift(minus.shift, wall.shift))
    got = (after.key, before.key)
    if got == (t_plus, t_minus):
        return 1
    if got == (t_minus, t_plus):
        return -1
    raise MorseSmaleViolation(
        f"minima on the two sides of the wall through {wall.label} "
        f"(shift {wall.shift}) do not match that saddle's descending rays: "
        f"sweep saw {got}, rays give {(t_plus, t_minus)}"
    )


def _add_shift(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(int(x) + int(y) for x, y in zip(a, b))


@dataclasses.dataclass
class MorseComplex:
    """Free integer chain complex on critical points, graded by index."""

    crit: CritSet
    eps_u: float
    generators: dict[int, list[str]]
    boundaries: dict[int, np.ndarray]  # k -> (|C_{k-1}|, |C_k|) int matrix
    orbits: list[ConnectingOrbit]
    homology: list[HomologyGroup]

    def chain_complex(self) -> ChainComplexZ:
        top = max(self.generators) if self.generators else 0
        dims = [len(self.generators.get(k, [])) for k in range(top + 1)]
        bnds = {k: m.tolist() for k, m in self.boundaries.items()}
        return ChainComplexZ(dims, bnds)

    def betti(self) -> list[int]:
        return [g.betti for g in self.homology]

    def to_report(self) -> dict:
        return {
            "eps_u": self.eps_u,
            "generators": {str(k): v for k, v in self.generators.items()},
            "boundaries": {
                str(k): m.tolist() for k, m in sorted(self.boundaries.items())
            },
            "orbits": [ob.summary() for ob in self.orbits],
            "homology": [g.label() for g in self.homology],
        }


def build_morse_complex(
    sys: ModelSystem,
    crit: CritSet,
    eps_u: Optional[float] = None,
    cfg: Optional[FlowConfig] = None,
    n_theta: int = 64,
    offset: float = 1e-4,
) -> MorseComplex:
    """Count all adjacent-index orbits and assemble the chain complex.

    The boundary square is checked in exact integer arithmetic; a nonzero
    product raises rather than rounding anything away.
    """
    eps = _resolve_eps(crit, eps_u)
    top = crit.max_index()
    if top > 2:
        raise UnsupportedIndex(
            f"critical points of index up to {top} present; boundary "
            f"counting is implemented for indices 0..2 only"
        )
    gens = {k: [cp.label for cp in crit.at_index(k)] for k in range(top + 1)}
    col_of = {k: {lab: i for i, lab in enumerate(gens[k])} for k in gens}

    orbits: list[ConnectingOrbit] = []
    boundaries: dict[int, np.ndarray] = {}
    ray_cache: dict = {}
    for k in range(1, top + 1):
        mat = np.zeros((len(gens[k - 1]), len(gens[k])), dtype=np.int64)
        for cp in crit.at_index(k):
            for ob in _orbits_from(sys, crit, cp, eps, cfg, n_theta, offset,
                                   ray_cache):
                mat[col_of[k - 1][ob.target], col_of[k][ob.source]] += ob.sign
                orbits.append(ob)
        boundaries[k] = mat

    if top >= 2:
        square = boundaries[1] @ boundaries[2]
        if np.any(square):
            raise BoundarySquareNonzero(
                f"composite boundary is nonzero:\n{square}"
            )

    cc = ChainComplexZ(
        [len(gens.get(k, [])) for k in range(top + 1)],
        {k: m.tolist() for k, m in boundaries.items()},
    )
    homology = cc.homology()
    return MorseComplex(
        crit=crit,
        eps_u=eps,
        generators=gens,
        boundaries=boundaries,
        orbits=orbits,
        homology=homology,
    )
