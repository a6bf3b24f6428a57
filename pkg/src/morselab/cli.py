"""Scenario runner: config-driven pipelines with persisted artifacts.

A scenario is one TOML file naming a system, a sublevel bound, a seed,
and the pipelines it supports.  Each subcommand executes one pipeline
(after the stages it depends on) and writes a JSON run report, CSV
tables, and packed raster masks under the output directory.  Reports
are byte-stable for a fixed config and seed: timings live in one
separate block and every pass/fail entry carries the tolerance it was
judged against.

Exit codes: 0 all checks pass, 1 a check failed, 2 config error (no
artifacts), 3 numerical failure inside a stage.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys as _sys
import time
import warnings
from pathlib import Path
from typing import Callable, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .conley import (
    build_conley_pair,
    build_filtration,
    default_epsilon,
    verify_disjointness,
    verify_exit_set,
)
from .critical import CritSet, MultistartSpec, find_critical_points
from .errors import ConfigError, MissingStage, MorselabError, NotAMorseFiltration
from .foliation import (
    build_chart,
    descending_gammas,
    sample_leaf,
    shrink_into_ball,
    verify_action_decrease,
    verify_lambda_estimates,
    verify_leaf_compatibility,
    verify_leaf_convergence,
)
from .homology import Grid, Mask, compare_with_morse, rasterize, relative_homology
from .model import LoopSystem, ModelSystem, make_system
from .morse_complex import build_morse_complex
from .semiflow import ActionBelow, FlowConfig

__all__ = ["ScenarioConfig", "emit_plot_data", "main", "run"]

SUBCOMMANDS = (
    "find-crit",
    "morse",
    "conley",
    "filtration",
    "homology",
    "lambda",
    "verify-all",
)

# stage -> stages that must run first (in this order)
_DEPS: dict[str, tuple[str, ...]] = {
    "find-crit": (),
    "morse": ("find-crit",),
    "homology": ("find-crit", "morse"),
    "conley": ("find-crit",),
    "filtration": ("find-crit", "morse", "conley"),
    "lambda": ("find-crit",),
    "foliation": ("find-crit", "conley"),
}

_STAGES = tuple(_DEPS)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ScenarioConfig:
    """Validated scenario: system, run constants, per-stage tables."""

    name: str
    system_kind: str
    system_params: dict
    level: float
    seed: int
    pipelines: tuple[str, ...]
    flow: dict
    crit: dict
    grid: Optional[dict]
    morse: dict
    homology: dict
    conley: dict
    filtration: dict
    lam: dict
    foliation: dict

    def make_sys(self) -> ModelSystem:
        return make_system(self.system_kind, **self.system_params)

    def flow_cfg(self, workers: Optional[int]) -> FlowConfig:
        kw = dict(self.flow)
        if workers is not None:
            kw["workers"] = workers
        return FlowConfig(**kw)

    def make_grid(self) -> Grid:
        if self.grid is None:
            raise ConfigError("this pipeline needs a [grid] table in the config")
        return Grid(
            tuple((float(lo), float(hi)) for lo, hi in self.grid["box"]),
            tuple(int(n) for n in self.grid["shape"]),
        )


def _table(cfg: dict, key: str, allowed: set[str], where: str) -> dict:
    sub = cfg.pop(key, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"[{key}] must be a table in {where}")
    bad = set(sub) - allowed
    if bad:
        raise ConfigError(f"unknown keys {sorted(bad)} in [{key}] of {where}")
    return sub


def load_config(path: str) -> ScenarioConfig:
    """Parse and validate a scenario file; 'scenario:NAME' loads a bundled one."""
    if path.startswith("scenario:"):
        from importlib import resources

        name = path.split(":", 1)[1]
        res = resources.files("morselab").joinpath(f"scenarios/{name}.toml")
        if not res.is_file():
            raise ConfigError(f"no bundled scenario named {name!r}")
        blob = res.read_bytes()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        blob = p.read_bytes()
    try:
        raw = tomllib.loads(blob.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None

    name = raw.pop("scenario", None)
    if not isinstance(name, str) or not name:
        raise ConfigError("config needs a top-level 'scenario' name")

    system = _table(raw, "system", {"kind", "params"} | set(), name)
    kind = system.pop("kind", None)
    if not isinstance(kind, str):
        raise ConfigError("[system] needs a 'kind' string")
    params = system.pop("params", {})
    params.update(system)  # inline kind parameters are allowed

    run = _table(raw, "run", {"seed", "level", "pipelines"}, name)
    if "seed" not in run:
        raise ConfigError("[run] must set an integer 'seed'")
    seed = int(run["seed"])
    level = float(run.get("level", 0.0))
    pipelines = tuple(run.get("pipelines", ()))
    if not pipelines:
        raise ConfigError("[run] must list at least one pipeline")
    for i, st in enumerate(pipelines):
        if st not in _STAGES:
            raise ConfigError(f"unknown pipeline {st!r}; valid: {sorted(_STAGES)}")
        for dep in _DEPS[st]:
            if dep not in pipelines[:i]:
                raise ConfigError(f"pipeline {st!r} needs {dep!r} earlier in the list")

    flow = _table(raw, "flow", {"scheme", "h", "max_steps", "check_every", "workers"}, name)
    crit = _table(raw, "crit", {"count", "box", "modes", "mean_range", "amplitude"}, name)
    grid = _table(raw, "grid", {"box", "shape"}, name) or None
    morse = _table(raw, "morse", {"n_theta", "eps_u"}, name)
    homology = _table(raw, "homology", {"reference"}, name)
    conley = _table(
        raw, "conley", {"eps", "tau", "exit_samples", "pair_grid"}, name
    )
    filtration = _table(raw, "filtration", {"t_max"}, name)
    lam = _table(raw, "lambda", {"t_list", "per_axis"}, name)
    foliation = _table(
        raw,
        "foliation",
        {"compat_T", "compat_sigmas", "convergence_t_list", "n_samples", "delta"},
        name,
    )
    if raw:
        raise ConfigError(f"unknown top-level keys {sorted(raw)} in {name}")

    return ScenarioConfig(
        name=name,
        system_kind=kind,
        system_params=params,
        level=level,
        seed=seed,
        pipelines=pipelines,
        flow=flow,
        crit=crit,
        grid=grid,
        morse=morse,
        homology=homology,
        conley=conley,
        filtration=filtration,
        lam=lam,
        foliation=foliation,
    )


# ---------------------------------------------------------------------------
# run context and report plumbing
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class _Check:
    name: str
    passed: bool
    observed: object
    tolerance: object  # numeric bound or exact-match description

    def row(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": self.observed,
            "tolerance": self.tolerance,
        }


@dataclasses.dataclass
class _Ctx:
    cfg: ScenarioConfig
    sys: ModelSystem
    seed: int
    flow: FlowConfig
    out: Path
    cache: dict = dataclasses.field(default_factory=dict)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _labels(result) -> list[str]:
    return [g.label() for g in result.groups]


def _concentrated(labels: list[str], k: int, rank: int) -> bool:
    want = ["0"] * len(labels)
    if rank:
        want[k] = "Z" if rank == 1 else f"Z^{rank}"
    return labels == want


def _multistart(cfg: ScenarioConfig) -> Optional[MultistartSpec]:
    if not cfg.crit:
        return None
    kw = dict(cfg.crit)
    if "box" in kw:
        kw["box"] = np.asarray(kw["box"], dtype=np.float64)
    if "mean_range" in kw:
        kw["mean_range"] = tuple(kw["mean_range"])
    return MultistartSpec(**kw)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _stage_find_crit(ctx: _Ctx):
    crit = find_critical_points(
        ctx.sys, ctx.cfg.level, multistart=_multistart(ctx.cfg), seed=ctx.seed
    )
    ctx.cache["crit"] = crit
    rows = [
        [p.label, p.morse_index, float(p.action), float(p.spectral_gap),
         float(p.grad_norm)] + [float(v) for v in p.state]
        for p in crit.points
    ]
    dim = len(crit.points[0].state) if crit.points else 0
    _write_csv(
        ctx.out / "crit.csv",
        ["label", "index", "action", "spectral_gap", "grad_norm"]
        + [f"z{i}" for i in range(dim)],
        rows,
    )
    counts = {str(k): len(crit.at_index(k)) for k in range(crit.max_index() + 1)}
    checks = [
        _Check("critical-points-found", len(crit.points) >= 1, len(crit.points), ">= 1"),
        _Check(
            "all-nondegenerate",
            all(p.spectral_gap > 0 for p in crit.points),
            min((float(p.spectral_gap) for p in crit.points), default=0.0),
            "> 0",
        ),
        _Check(
            "gradients-vanish",
            all(p.grad_norm <= 1e-7 for p in crit.points),
            max((float(p.grad_norm) for p in crit.points), default=0.0),
            1e-7,
        ),
    ]
    results = {
        "points": [p.summary() for p in crit.points],
        "counts_by_index": counts,
        "level": ctx.cfg.level,
    }
    return results, checks, ["crit.csv"]


def _stage_morse(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    kw = {}
    if "n_theta" in ctx.cfg.morse:
        kw["n_theta"] = int(ctx.cfg.morse["n_theta"])
    if "eps_u" in ctx.cfg.morse:
        kw["eps_u"] = float(ctx.cfg.morse["eps_u"])
    mc = build_morse_complex(ctx.sys, crit, cfg=ctx.flow, **kw)
    ctx.cache["mc"] = mc
    _write_csv(
        ctx.out / "morse_orbits.csv",
        ["source", "target", "sign", "direction"],
        [[o.source, o.target, o.sign, o.direction] for o in mc.orbits],
    )
    # boundary-square check on the integer chain complex
    sq_ok = True
    tops = sorted(mc.boundaries)
    for k in tops:
        if k - 1 in mc.boundaries:
            sq_ok &= not np.any(mc.boundaries[k - 1] @ mc.boundaries[k])
    checks = [
        _Check("boundary-squares-to-zero", bool(sq_ok), bool(sq_ok), "exact"),
        _Check(
            "one-group-per-index",
            len(mc.homology) == crit.max_index() + 1,
            len(mc.homology),
            crit.max_index() + 1,
        ),
    ]
    return mc.to_report(), checks, ["morse_orbits.csv"]


def _stage_homology(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    mc = ctx.cache["mc"]
    morse_labels = [g.label() for g in mc.homology]
    results = {"morse": morse_labels}
    checks = []
    artifacts = []
    if isinstance(ctx.sys, LoopSystem):
        ref = [int(r) for r in ctx.cfg.homology.get("reference", [])]
        if not ref:
            raise ConfigError("[homology] needs a 'reference' betti list for loop systems")
        results["reference"] = ref
        checks.append(
            _Check(
                "morse-betti-match-reference",
                mc.betti() == ref,
                mc.betti(),
                f"== {ref}",
            )
        )
    else:
        grid = ctx.cfg.make_grid()
        sub = rasterize(grid, ActionBelow(ctx.sys, ctx.cfg.level).many)
        res = relative_homology(sub.mask)
        ctx.cache["sublevel_mask"] = sub.mask
        ctx.cache["sublevel_labels"] = _labels(res)
        sub.mask.save(str(ctx.out / "masks" / "sublevel.mask"))
        artifacts.append("masks/sublevel.mask")
        results["reference"] = _labels(res)
        results["sublevel_cells"] = int(sub.mask.count())
        ref_betti = [g.betti for g in res.groups]
        checks.append(
            _Check(
                "morse-betti-match-raster",
                mc.betti() == ref_betti[: len(mc.betti())]
                and all(b == 0 for b in ref_betti[len(mc.betti()) :]),
                mc.betti(),
                f"== {ref_betti}",
            )
        )
    rows = [[q, lab] for q, lab in enumerate(morse_labels)]
    _write_csv(ctx.out / "homology.csv", ["degree", "morse_group"], rows)
    artifacts.append("homology.csv")
    return results, checks, artifacts


def _stage_conley(ctx: _Ctx):
    if isinstance(ctx.sys, LoopSystem):
        raise ConfigError("conley rasterization is not configured for loop scenarios")
    crit: CritSet = ctx.cache["crit"]
    grid = ctx.cfg.make_grid()
    eps = ctx.cfg.conley.get("eps")
    tau = ctx.cfg.conley.get("tau")
    pg = ctx.cfg.conley.get("pair_grid", {})
    half = float(pg.get("half_width", 0.8))
    cells = int(pg.get("cells", 64))
    exit_samples = int(ctx.cfg.conley.get("exit_samples", 200))

    pairs = [
        build_conley_pair(
            ctx.sys, p, eps=eps, tau=tau, cfg=ctx.flow, crit=crit
        )
        for p in crit.points
    ]
    ctx.cache["pairs"] = pairs
    checks, rows, artifacts = [], [], []
    (ctx.out / "masks").mkdir(exist_ok=True)
    results = {"pairs": []}
    for pair in pairs:
        cp = pair.cp
        local = Grid(
            tuple((float(c) - half, float(c) + half) for c in cp.state),
            (cells,) * len(cp.state),
        )
        res = pair.pair_homology(local)
        labels = _labels(res)
        ok = _concentrated(labels, cp.morse_index, 1)
        checks.append(
            _Check(
                f"pair-homology-{cp.label}",
                ok,
                labels,
                f"Z in degree {cp.morse_index} only",
            )
        )
        mask_n, mask_l = pair.rasterize(grid)
        fn, fl = f"masks/conley_{cp.label}_N.mask", f"masks/conley_{cp.label}_L.mask"
        mask_n.save(str(ctx.out / fn))
        mask_l.save(str(ctx.out / fl))
        artifacts += [fn, fl]
        rep = verify_exit_set(pair, grid, samples=exit_samples, seed=ctx.seed)
        checks.append(
            _Check(
                f"exit-set-{cp.label}",
                rep.ok,
                rep.summary(),
                "0 violations",
            )
        )
        rows.append(
            [cp.label, cp.morse_index, float(pair.eps), float(pair.tau),
             int(mask_n.count()), int(mask_l.count())] + labels
        )
        results["pairs"].append(
            {
                "label": cp.label,
                "index": cp.morse_index,
                "eps": float(pair.eps),
                "tau": float(pair.tau),
                "guard": float(pair.guard),
                "pair_homology": labels,
                "exit_report": rep.summary(),
            }
        )
    dis = verify_disjointness(pairs, grid)
    ctx.cache["pairs"] = dis.pairs  # retries may have rebuilt them
    checks.append(
        _Check(
            "pairwise-disjoint",
            dis.ok,
            {"retries": dis.retries, "overlaps": dis.overlap_history},
            "0 overlapping cells",
        )
    )
    results["disjointness"] = {
        "retries": dis.retries,
        "overlap_history": dis.overlap_history,
    }
    q = grid.dim
    _write_csv(
        ctx.out / "conley_pairs.csv",
        ["label", "index", "eps", "tau", "n_cells", "l_cells"]
        + [f"h{i}" for i in range(q + 1)],
        rows,
    )
    artifacts.append("conley_pairs.csv")
    return results, checks, artifacts


def _stage_filtration(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    mc = ctx.cache["mc"]
    pairs = ctx.cache["pairs"]
    grid = ctx.cfg.make_grid()
    t_max = ctx.cfg.filtration.get("t_max")
    filt = build_filtration(
        ctx.sys, crit, pairs, grid, cutoff=ctx.cfg.level, cfg=ctx.flow,
        T_max=t_max, seed=ctx.seed,
    )
    ctx.cache["filt"] = filt
    checks, rows, artifacts = [], [], []
    stage_results = []
    (ctx.out / "masks").mkdir(exist_ok=True)
    counts = [len(crit.at_index(k)) for k in range(crit.max_index() + 1)]
    for st in filt.stages:
        res = filt.stage_homology(st.k)
        labels = _labels(res)
        stage_results.append(res)
        ok = _concentrated(labels, st.k, counts[st.k])
        checks.append(
            _Check(
                f"stage-{st.k}-concentrated",
                ok,
                labels,
                f"rank {counts[st.k]} in degree {st.k} only",
            )
        )
        inv = filt.verify_forward_invariance(st.k, seed=ctx.seed)
        checks.append(
            _Check(
                f"stage-{st.k}-forward-invariant",
                not inv["violations"],
                inv,
                "0 violations",
            )
        )
        fname = f"masks/filtration_F{st.k}.mask"
        filt.mask(st.k).save(str(ctx.out / fname))
        artifacts.append(fname)
        rows.append([st.k, float(st.T), int(filt.mask(st.k).count())] + labels)
    try:
        match = compare_with_morse(stage_results, mc.boundaries, counts)
        match_json = {
            "connecting": {str(k): v for k, v in match["connecting"].items()},
            "signs": {str(k): [int(s) for s in v] for k, v in match["signs"].items()},
            "permutations": {
                str(k): [int(p) for p in v] for k, v in match["permutations"].items()
            },
        }
        checks.append(
            _Check("triple-boundary-matches-morse", True, match_json, "signed permutation")
        )
    except NotAMorseFiltration as exc:
        match_json = None
        checks.append(
            _Check("triple-boundary-matches-morse", False, str(exc), "signed permutation")
        )
    # composite homology against the raster of the sublevel set itself
    total = relative_homology(filt.mask(filt.top))
    sub_mask = ctx.cache.get("sublevel_mask")
    if sub_mask is None or sub_mask.grid != grid:
        sub_mask = rasterize(grid, ActionBelow(ctx.sys, ctx.cfg.level).many).mask
    ref_labels = _labels(relative_homology(sub_mask))
    checks.append(
        _Check(
            "composite-equals-sublevel-homology",
            _labels(total) == ref_labels,
            _labels(total),
            f"== {ref_labels}",
        )
    )
    checks.append(
        _Check(
            "top-stage-fills-sublevel",
            int(filt.mask(filt.top).count()) == int(sub_mask.count()),
            int(filt.mask(filt.top).count()),
            int(sub_mask.count()),
        )
    )
    _write_csv(
        ctx.out / "filtration.csv",
        ["k", "T", "cells"] + [f"h{i}" for i in range(grid.dim + 1)],
        rows,
    )
    artifacts.append("filtration.csv")
    results = {
        "stages": [
            {"k": st.k, "T": float(st.T), "certificate": st.certificate}
            for st in filt.stages
        ],
        "morse_match": match_json,
        "composite": _labels(total),
    }
    return results, checks, artifacts


def _top_chart(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    cp = crit.at_index(crit.max_index())[0]
    if "chart" not in ctx.cache:
        ctx.cache["chart"] = build_chart(ctx.sys, cp, crit)
    return cp, ctx.cache["chart"]


def _stage_lambda(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    _, chart = _top_chart(ctx)
    t_list = [float(t) for t in ctx.cfg.lam.get("t_list", (1.0, 1.5, 2.0, 2.5))]
    per_axis = int(ctx.cfg.lam.get("per_axis", 5))
    eps = ctx.cfg.conley.get("eps") or default_epsilon(crit)
    gammas, _, _ = descending_gammas(chart, float(eps), n=2, seed=ctx.seed, cfg=ctx.flow)
    rep = verify_lambda_estimates(
        chart, gammas[0], t_list, per_axis=per_axis, cfg=ctx.flow
    )
    floor = chart.mu / 16.0
    rows = [
        [t, float(d), float(dd), float(rep.rate)]
        for t, d, dd in zip(rep.T_list, rep.deviations, rep.diff_deviations)
    ]
    _write_csv(
        ctx.out / "lambda.csv",
        ["T", "sup_deviation", "diff_deviation", "fitted_rate"],
        rows,
    )
    checks = [
        _Check("convergence-rate", rep.rate >= floor, float(rep.rate), f">= {floor}"),
        _Check(
            "differential-bound",
            rep.lipschitz_max <= 2.0 + 1e-9,
            float(rep.lipschitz_max),
            2.0,
        ),
        _Check("deviations-monotone", rep.monotone, rep.monotone, "non-increasing"),
    ]
    results = {
        "T_list": [float(t) for t in rep.T_list],
        "deviations": [float(d) for d in rep.deviations],
        "diff_deviations": [float(d) for d in rep.diff_deviations],
        "rate": float(rep.rate),
        "rate_floor": floor,
        "lipschitz_max": float(rep.lipschitz_max),
    }
    return results, checks, ["lambda.csv"]


def _stage_foliation(ctx: _Ctx):
    crit: CritSet = ctx.cache["crit"]
    cp, chart = _top_chart(ctx)
    pair = next(p for p in ctx.cache["pairs"] if p.cp.label == cp.label)
    fcfg = ctx.cfg.foliation
    compat_T = float(fcfg.get("compat_T", 4.0))
    sigmas = tuple(float(s) for s in fcfg.get("compat_sigmas", (0.25, 0.5, 1.0)))
    conv_list = [float(t) for t in fcfg.get("convergence_t_list", (1.0, 1.5, 2.0, 2.5))]
    n_samples = int(fcfg.get("n_samples", 50))
    delta = float(fcfg.get("delta", 0.05))

    gammas, _, _ = descending_gammas(chart, pair.eps, n=2, seed=ctx.seed, cfg=ctx.flow)
    comp = verify_leaf_compatibility(
        chart, pair, gammas[0], compat_T, sigmas=sigmas, cfg=ctx.flow
    )
    conv = verify_leaf_convergence(chart, pair, gammas[0], conv_list, cfg=ctx.flow)
    dec = verify_action_decrease(
        chart, pair, n_samples=n_samples, seed=ctx.seed, cfg=ctx.flow
    )
    srep = shrink_into_ball(ctx.sys, cp, crit, delta, cfg=ctx.flow)

    leaf = sample_leaf(chart, pair, gammas[0], compat_T, cfg=ctx.flow)
    pts = leaf.states
    _write_csv(
        ctx.out / "foliation_leaf.csv",
        [f"z{i}" for i in range(pts.shape[1])] + ["action", "kept"],
        [
            [float(v) for v in pts[i]] + [float(leaf.actions[i]), bool(leaf.keep[i])]
            for i in range(pts.shape[0])
        ],
    )
    _write_csv(
        ctx.out / "foliation_decrease.csv",
        ["boundary_action", "derivative"],
        [
            [float(a), float(d)]
            for a, d in zip(dec.boundary_actions, dec.derivatives)
        ],
    )
    _write_csv(
        ctx.out / "foliation_shrink.csv",
        ["round", "eps", "tau", "radius"],
        [
            [i, float(r["eps"]), float(r["tau"]), float(r["radius"])]
            for i, r in enumerate(srep.rounds)
        ],
    )
    # W neighborhood raster for the figure analogue
    n_w = 41
    axes = [
        np.linspace(float(c) - chart.rho0, float(c) + chart.rho0, n_w)
        for c in cp.state
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)
    in_ball = ctx.sys.norm_many(Z - cp.state[None, :]) <= chart.rho0
    in_w = in_ball & (ctx.sys.action_many(Z) <= cp.action + 0.5 * pair.eps)
    _write_csv(
        ctx.out / "w_region.csv",
        [f"z{i}" for i in range(Z.shape[1])] + ["in_w"],
        [[float(v) for v in Z[i]] + [bool(in_w[i])] for i in range(Z.shape[0])],
    )

    checks = [
        _Check("leaf-compatibility", comp.passed, comp.summary(), comp.tol),
        _Check(
            "leaf-convergence-rate",
            conv.passed,
            float(conv.rate),
            f">= {chart.mu / 16.0}",
        ),
        _Check(
            "action-decrease",
            dec.passed,
            {"alpha": float(dec.alpha), "worst": float(np.max(dec.derivatives))},
            float(dec.threshold),
        ),
        _Check(
            "decrease-sample-budget",
            dec.n_samples >= n_samples,
            int(dec.n_samples),
            f">= {n_samples}",
        ),
        _Check("shrink-into-ball", srep.passed, float(srep.radius), delta),
    ]
    results = {
        "compat": comp.summary(),
        "convergence": {
            "T_list": conv_list,
            "distances": [float(d) for d in conv.distances],
            "rate": float(conv.rate),
        },
        "decrease": {
            "alpha": float(dec.alpha),
            "threshold": float(dec.threshold),
            "n_samples": int(dec.n_samples),
            "worst_derivative": float(np.max(dec.derivatives)),
        },
        "shrink": {
            "eps": float(srep.eps),
            "tau": float(srep.tau),
            "radius": float(srep.radius),
            "rounds": len(srep.rounds),
        },
    }
    return results, checks, [
        "foliation_leaf.csv",
        "foliation_decrease.csv",
        "foliation_shrink.csv",
        "w_region.csv",
    ]


_RUNNERS: dict[str, Callable] = {
    "find-crit": _stage_find_crit,
    "morse": _stage_morse,
    "homology": _stage_homology,
    "conley": _stage_conley,
    "filtration": _stage_filtration,
    "lambda": _stage_lambda,
    "foliation": _stage_foliation,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _stages_for(subcommand: str, cfg: ScenarioConfig) -> list[str]:
    if subcommand == "verify-all":
        return list(cfg.pipelines)
    if subcommand not in cfg.pipelines:
        raise ConfigError(
            f"pipeline {subcommand!r} is not configured for scenario {cfg.name!r}"
        )
    ordered = []
    for st in (*_DEPS[subcommand], subcommand):
        if st not in ordered:
            ordered.append(st)
    return ordered


def run(
    subcommand: str,
    config: str,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    strict: bool = False,
) -> int:
    """Execute one pipeline; returns the process exit code."""
    if subcommand not in SUBCOMMANDS:
        _sys.stderr.write(f"unknown subcommand {subcommand!r}\n")
        return 2
    try:
        cfg = load_config(config)
        stages = _stages_for(subcommand, cfg)
        run_seed = int(seed) if seed is not None else cfg.seed
        flow = cfg.flow_cfg(workers)
        sysm = cfg.make_sys()
    except (MorselabError, TypeError, ValueError) as exc:
        _sys.stderr.write(f"config error: {exc}\n")
        return 2

    out_dir = Path(out) if out else Path("runs") / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(exist_ok=True)
    ctx = _Ctx(cfg=cfg, sys=sysm, seed=run_seed, flow=flow, out=out_dir)

    report = {
        "scenario": cfg.name,
        "subcommand": subcommand,
        "seed": run_seed,
        "workers": int(flow.workers),
        "strict": bool(strict),
        "level": cfg.level,
        "system": {"kind": cfg.system_kind, "params": cfg.system_params},
        "stages": {},
    }
    timings: dict[str, float] = {}
    failed_stage = None
    for st in stages:
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as wrec:
            warnings.simplefilter("always")
            try:
                results, checks, artifacts = _RUNNERS[st](ctx)
            except MorselabError as exc:
                timings[st] = time.perf_counter() - t0
                report["stages"][st] = {"status": "error", "error": str(exc)}
                failed_stage = (st, str(exc))
                break
        timings[st] = time.perf_counter() - t0
        n_warn = len(wrec)
        if strict and n_warn:
            checks.append(
                _Check("no-numerical-warnings", False, n_warn, 0)
            )
        status = "pass" if all(c.passed for c in checks) else "fail"
        report["stages"][st] = {
            "status": status,
            "checks": [c.row() for c in checks],
            "results": results,
            "artifacts": sorted(artifacts),
            "warnings": n_warn,
        }

    all_pass = failed_stage is None and all(
        s["status"] == "pass" for s in report["stages"].values()
    )
    report["status"] = (
        "error" if failed_stage else ("pass" if all_pass else "fail")
    )
    report["timings"] = {k: round(v, 6) for k, v in timings.items()}
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if failed_stage:
        _sys.stderr.write(f"stage {failed_stage[0]}: {failed_stage[1]}\n")
        return 3
    return 0 if all_pass else 1


# ---------------------------------------------------------------------------
# figure analogue export
# ---------------------------------------------------------------------------

_FIGURES = (
    "lambda_convergence",
    "filtration_levels",
    "conley_sections",
    "leaf_tracks",
    "w_region",
)

_FIGURE_STAGE = {
    "lambda_convergence": "lambda",
    "filtration_levels": "filtration",
    "conley_sections": "conley",
    "leaf_tracks": "foliation",
    "w_region": "foliation",
}


def emit_plot_data(
    run_dir: str, out_dir: Optional[str] = None, figures: Optional[list[str]] = None
) -> list[str]:
    """Write plot-ready CSVs from a completed run's artifacts.

    With `figures=None` every figure whose pipeline ran is emitted; an
    explicitly requested figure whose pipeline was skipped raises
    MissingStage, as does a run with no figure-capable stage at all.
    """
    run = Path(run_dir)
    rp = run / "report.json"
    if not rp.is_file():
        raise MissingStage(f"no run report under {run_dir}")
    report = json.loads(rp.read_text())
    ran = set(report.get("stages", {}))
    dest = Path(out_dir) if out_dir else run
    dest.mkdir(parents=True, exist_ok=True)

    explicit = figures is not None
    wanted = list(figures) if explicit else list(_FIGURES)
    for f in wanted:
        if f not in _FIGURE_STAGE:
            raise ConfigError(f"unknown figure {f!r}; valid: {sorted(_FIGURE_STAGE)}")
    if not explicit:
        wanted = [f for f in wanted if _FIGURE_STAGE[f] in ran]
        if not wanted:
            raise MissingStage("the run executed no figure-capable pipeline")

    written = []
    for fig in wanted:
        stage = _FIGURE_STAGE[fig]
        if stage not in ran:
            raise MissingStage(f"figure {fig!r} needs the {stage!r} pipeline")
        if fig == "lambda_convergence":
            src = run / "lambda.csv"
            if not src.is_file():
                raise MissingStage("lambda.csv missing from the run directory")
            path = dest / "fig_lambda_convergence.csv"
            path.write_text(src.read_text())
        elif fig == "filtration_levels":
            rows = []
            for st in report["stages"]["filtration"]["results"]["stages"]:
                k = st["k"]
                mf = run / "masks" / f"filtration_F{k}.mask"
                if not mf.is_file():
                    raise MissingStage(f"mask for filtration level {k} missing")
                rows.append([k, float(st["T"]), f"masks/filtration_F{k}.mask",
                             int(Mask.load(str(mf)).count())])
            path = dest / "fig_filtration_levels.csv"
            _write_csv(path, ["k", "T", "mask_file", "cells"], rows)
        elif fig == "conley_sections":
            rows = []
            for info in report["stages"]["conley"]["results"]["pairs"]:
                label = info["label"]
                mn = Mask.load(str(run / "masks" / f"conley_{label}_N.mask"))
                ml = Mask.load(str(run / "masks" / f"conley_{label}_L.mask"))
                if mn.grid.dim != 2:
                    continue  # point clouds only make sense for planar grids
                centers = mn.grid.centers()
                flat_n = mn.cells.ravel()
                flat_l = ml.cells.ravel()
                for i in np.flatnonzero(flat_n):
                    rows.append(
                        [label, float(centers[i, 0]), float(centers[i, 1]),
                         True, bool(flat_l[i])]
                    )
            path = dest / "fig_conley_sections.csv"
            _write_csv(path, ["pair", "x", "y", "in_n", "in_l"], rows)
        elif fig == "leaf_tracks":
            src = run / "foliation_leaf.csv"
            if not src.is_file():
                raise MissingStage("foliation_leaf.csv missing from the run directory")
            path = dest / "fig_leaf_tracks.csv"
            path.write_text(src.read_text())
        else:  # w_region
            src = run / "w_region.csv"
            if not src.is_file():
                raise MissingStage("w_region.csv missing from the run directory")
            path = dest / "fig_w_region.csv"
            path.write_text(src.read_text())
        written.append(str(path))
    return written


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="morselab",
        description="run scenario pipelines for gradient semi-flow experiments",
    )
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario TOML path or scenario:NAME")
    ap.add_argument("--out", default=None, help="output directory (default runs/<scenario>)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--workers", type=int, default=None, help="cap parallel evaluation")
    ap.add_argument(
        "--strict", action="store_true", help="treat numerical warnings as failures"
    )
    ns = ap.parse_args(argv)
    return run(
        ns.subcommand,
        ns.config,
        out=ns.out,
        seed=ns.seed,
        workers=ns.workers,
        strict=ns.strict,
    )


if __name__ == "__main__":
    raise SystemExit(main())
