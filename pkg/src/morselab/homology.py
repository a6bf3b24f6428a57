"""Cubical homology of rasterized state-space regions, over the integers.

A region is a boolean mask on an axis-aligned grid of cells; its cubical
complex consists of the cells as top cubes plus all their faces.  Pairs
of nested masks give relative complexes: faces landing in the inner
region are simply absent.

The homology pipeline is exact end to end:

1. reduce the complex by batched free-face collapses and coreductions,
   both of which delete cell pairs without modifying any other boundary
   entry, and log every deleted pair;
2. run integer Smith reduction on the small remaining core;
3. move chains between the original complex and the core by replaying
   the deletion log (forward to project, backward to lift), so homology
   generators and class coordinates always refer to original cells.

Cube ids pack the base-vertex index with an extrusion bitmask, one bit
per axis; a cube spans [v_i, v_i + e_i] along axis i and its dimension
is the popcount of e.
"""

from __future__ import annotations

import dataclasses
import itertools
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InvalidState, NotAMorseFiltration, OracleError
from .snf import ChainComplexZ, DegreeData, HomologyGroup

__all__ = [
    "Grid",
    "Mask",
    "RasterReport",
    "rasterize",
    "HomologyResult",
    "relative_homology",
    "chain_boundary",
    "triple_boundary",
    "compare_with_morse",
    "openness_report",
]

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int8)
_NO_TIME = np.iinfo(np.int64).max


# ---------------------------------------------------------------------------
# grids and masks
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Grid:
    """Axis-aligned cell grid over a box; cells are sampled at centers."""

    box: tuple[tuple[float, float], ...]  # (lo, hi) per axis
    shape: tuple[int, ...]  # cells per axis

    def __post_init__(self):
        object.__setattr__(
            self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box)
        )
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if len(self.box) != len(self.shape) or not self.shape:
            raise ConfigError("grid box and shape must agree in dimension")
        for (lo, hi), n in zip(self.box, self.shape):
            if not (hi > lo) or n < 1:
                raise ConfigError("grid axes need hi > lo and >= 1 cell")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def steps(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / n for (lo, hi), n in zip(self.box, self.shape)]
        )

    def centers(self) -> np.ndarray:
        """(n_cells, d) cell centers in C order."""
        axes = [
            lo + (np.arange(n) + 0.5) * (hi - lo) / n
            for (lo, hi), n in zip(self.box, self.shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def locate(self, point: Sequence[float]) -> tuple[int, ...]:
        """Cell index containing a point; raises if outside the box."""
        out = []
        for x, (lo, hi), n in zip(point, self.box, self.shape):
            if not lo <= x <= hi:
                raise InvalidState(f"point coordinate {x} outside [{lo}, {hi}]")
            out.append(min(int((x - lo) / (hi - lo) * n), n - 1))
        return tuple(out)

    def cell_center(self, idx: Sequence[int]) -> np.ndarray:
        return np.array(
            [
                lo + (i + 0.5) * (hi - lo) / n
                for i, (lo, hi), n in zip(idx, self.box, self.shape)
            ]
        )

    def locate_many(self, P: np.ndarray) -> np.ndarray:
        """Flat cell indices of a (B, d) point stack; -1 outside the box."""
        P = np.asarray(P, dtype=np.float64)
        flat = np.zeros(P.shape[0], dtype=np.int64)
        ok = np.ones(P.shape[0], dtype=bool)
        stride = 1
        for axis in range(self.dim - 1, -1, -1):
            lo, hi = self.box[axis]
            n = self.shape[axis]
            x = P[:, axis]
            ok &= (x >= lo) & (x <= hi) & np.isfinite(x)
            i = np.minimum(((x - lo) / (hi - lo) * n).astype(np.int64), n - 1)
            flat += np.clip(i, 0, n - 1) * stride
            stride *= n
        return np.where(ok, flat, -1)


@dataclasses.dataclass
class Mask:
    """Boolean cell selection on a grid."""

    grid: Grid
    cells: np.ndarray  # bool, grid.shape

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.shape != self.grid.shape:
            raise ConfigError("mask array shape does not match the grid")

    # -- set algebra --------------------------------------------------------

    def _check(self, other: "Mask"):
        if other.grid != self.grid:
            raise ConfigError("mask operations need a shared grid")

    def union(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.cells | other.cells)

    def intersect(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.cells & other.cells)

    def minus(self, other: "Mask") -> "Mask":
        self._check(other)
        return Mask(self.grid, self.cells & ~other.cells)

    def contains(self, other: "Mask") -> bool:
        self._check(other)
        return bool(np.all(other.cells <= self.cells))

    def is_empty(self) -> bool:
        return not bool(self.cells.any())

    def count(self) -> int:
        return int(self.cells.sum())

    # -- components ---------------------------------------------------------

    def n_components(self) -> int:
        _, n = ndimage.label(
            self.cells, structure=ndimage.generate_binary_structure(self.grid.dim, 1)
        )
        return int(n)

    def component_containing(self, point: Sequence[float]) -> "Mask":
        """Face-connected component of the cell holding the point."""
        idx = self.grid.locate(point)
        if not self.cells[idx]:
            raise InvalidState(
                f"cell {idx} at {tuple(float(x) for x in point)} is not in the mask"
            )
        labels, _ = ndimage.label(
            self.cells, structure=ndimage.generate_binary_structure(self.grid.dim, 1)
        )
        return Mask(self.grid, labels == labels[idx])

    # -- file format ---------------------------------------------------------
    # text header (magic, shape, box as hex floats), then row-major packed bits

    def save(self, path: str) -> None:
        """Portable bitmap grid: ASCII header, then bit rows padded to bytes."""
        head = ["cubmask 1"]
        head.append(f"dims {self.grid.dim}")
        head.append("shape " + " ".join(str(n) for n in self.grid.shape))
        head.append(
            "box " + " ".join(f"{lo.hex()} {hi.hex()}"
                              for lo, hi in ((float(a), float(b)) for a, b in self.grid.box))
        )
        head.append("h " + " ".join(float(s).hex() for s in self.grid.steps()))
        head.append("data")
        payload = np.packbits(self.cells.astype(np.uint8), axis=-1)
        with open(path, "wb") as fh:
            fh.write(("\n".join(head) + "\n").encode("ascii"))
            fh.write(payload.tobytes())

    @staticmethod
    def load(path: str) -> "Mask":
        with open(path, "rb") as fh:
            blob = fh.read()
        try:
            head, payload = blob.split(b"data\n", 1)
            fields = {}
            lines = head.decode("ascii").strip().splitlines()
            if lines[0] != "cubmask 1":
                raise ValueError("bad magic")
            for line in lines[1:]:
                key, *toks = line.split()
                fields[key] = toks
            shape = tuple(int(t) for t in fields["shape"])
            toks = fields["box"]
            box = tuple(
                (float.fromhex(toks[2 * i]), float.fromhex(toks[2 * i + 1]))
                for i in range(len(shape))
            )
            row_bytes = -(-shape[-1] // 8)
            rows = np.frombuffer(payload, dtype=np.uint8)
            rows = rows.reshape(shape[:-1] + (row_bytes,))
            bits = np.unpackbits(rows, axis=-1)[..., : shape[-1]]
            cells = bits.astype(bool)
        except (ValueError, IndexError, KeyError) as exc:
            raise ConfigError(f"not a mask file: {path} ({exc})") from None
        return Mask(Grid(box, shape), cells)


@dataclasses.dataclass
class RasterReport:
    """Outcome of rasterizing a predicate: kept cells and failures."""

    mask: Mask
    errors: Mask

    @property
    def n_errors(self) -> int:
        return self.errors.count()


def rasterize(
    grid: Grid,
    predicate_many: Callable[[np.ndarray], np.ndarray],
    batch: int = 8192,
) -> RasterReport:
    """Sample a tri-state predicate at all cell centers.

    The predicate returns int8 per point: 1 inside, 0 outside, -1 for
    evaluation failures.  Failed cells are excluded from the mask and
    reported separately.
    """
    pts = grid.centers()
    flags = np.empty(pts.shape[0], dtype=np.int8)
    for start in range(0, pts.shape[0], batch):
        flags[start:start + batch] = predicate_many(pts[start:start + batch])
    flags = flags.reshape(grid.shape)
    return RasterReport(
        mask=Mask(grid, flags == 1),
        errors=Mask(grid, flags == -1),
    )


def openness_report(report: RasterReport) -> dict:
    """Raster quality proxies: boundary-cell share and failure count.

    A mask approximating an open set should be dominated by interior
    cells; a large rim share means the resolution is too coarse for the
    region it tries to capture.
    """
    cells = report.mask.cells
    if not cells.any():
        return {"cells": 0, "rim_cells": 0, "rim_share": 0.0,
                "error_cells": report.n_errors}
    eroded = ndimage.binary_erosion(
        cells, structure=ndimage.generate_binary_structure(cells.ndim, 1)
    )
    rim = int(cells.sum() - eroded.sum())
    return {
        "cells": int(cells.sum()),
        "rim_cells": rim,
        "rim_share": rim / float(cells.sum()),
        "error_cells": report.n_errors,
    }


# ---------------------------------------------------------------------------
# cubical complexes
# ---------------------------------------------------------------------------


def _pack(vlin: np.ndarray, ext: np.ndarray, d: int) -> np.ndarray:
    return (vlin.astype(np.int64) << d) | ext.astype(np.int64)


def _closure_ids(grid: Grid, cells: np.ndarray) -> dict[int, np.ndarray]:
    """All cube ids in the closure of the given top cells, by dimension."""
    d = grid.dim
    vshape = tuple(n + 1 for n in grid.shape)
    vstrides = np.array(
        [int(np.prod(vshape[i + 1:])) for i in range(d)], dtype=np.int64
    )
    base = np.argwhere(cells).astype(np.int64)  # (m, d) cell indices
    out: dict[int, list[np.ndarray]] = {q: [] for q in range(d + 1)}
    if base.size == 0:
        return {q: np.empty(0, dtype=np.int64) for q in range(d + 1)}
    for ext in range(1 << d):
        qdim = int(_POPCOUNT[ext])
        free = [i for i in range(d) if not (ext >> i) & 1]
        # subcubes with this extrusion sit at v + u, u ranging over {0,1}^free
        for pick in range(1 << len(free)):
            v = base.copy()
            for slot, axis in enumerate(free):
                if (pick >> slot) & 1:
                    v[:, axis] += 1
            vlin = v @ vstrides
            out[qdim].append(_pack(vlin, np.full(v.shape[0], ext), d))
    return {
        q: np.unique(np.concatenate(out[q])) if out[q] else np.empty(0, np.int64)
        for q in range(d + 1)
    }


class _Complex:
    """Relative cubical complex with a deletion-logged reduction.

    Cells live in per-dimension sorted id arrays.  Face positions and
    signs are precomputed; coface incidence is the transposed table in
    CSR form.  Unique alive neighbors are tracked with count + index-sum
    arrays so reduction sweeps stay fully vectorized.
    """

    def __init__(self, grid: Grid, mask_a: Mask, mask_b: Optional[Mask]):
        self.grid = grid
        d = grid.dim
        self.d = d
        vshape = tuple(n + 1 for n in grid.shape)
        self.vstrides = np.array(
            [int(np.prod(vshape[i + 1:])) for i in range(d)], dtype=np.int64
        )
        self.vshape = vshape

        clo_a = _closure_ids(grid, mask_a.cells)
        if mask_b is not None and not mask_b.is_empty():
            if not mask_a.contains(mask_b):
                raise ConfigError("relative pair needs nested masks")
            clo_b = _closure_ids(grid, mask_b.cells)
            self.ids = {
                q: np.setdiff1d(clo_a[q], clo_b[q], assume_unique=True)
                for q in range(d + 1)
            }
        else:
            self.ids = clo_a

        self.alive = {q: np.ones(self.ids[q].size, dtype=bool) for q in self.ids}
        self.rm_time = {
            q: np.full(self.ids[q].size, _NO_TIME, dtype=np.int64) for q in self.ids
        }
        self._build_incidence()
        # deletion log: per entry (q of the face cell, row of a, row of b, sign);
        # vertex pumps are logged with b = -1 and collected in `pumped`
        self.log_q: list[int] = []
        self.log_a: list[int] = []
        self.log_b: list[int] = []
        self.log_e: list[int] = []
        self.pumped: list[int] = []

    # -- id arithmetic -------------------------------------------------------

    def dims_of(self, ids: np.ndarray) -> np.ndarray:
        return _POPCOUNT[(ids & ((1 << self.d) - 1)).astype(np.int64)]

    def coords_of(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(vertex coords (m, d), extrusion bits (m,))."""
        ext = (ids & ((1 << self.d) - 1)).astype(np.int64)
        rem = (ids >> self.d).astype(np.int64)
        coords = np.empty((ids.size, self.d), dtype=np.int64)
        for i in range(self.d):
            coords[:, i] = rem // self.vstrides[i]
            rem = rem % self.vstrides[i]
        return coords, ext

    def _face_table(self, ids: np.ndarray, q: int):
        """(m, 2q) face ids and int8 signs; same convention everywhere:
        along each extruded axis the far face gets +s, the near face -s,
        with s alternating over lower extruded axes."""
        m = ids.size
        fids = np.full((m, 2 * q), -1, dtype=np.int64)
        sgn = np.zeros((m, 2 * q), dtype=np.int8)
        if m == 0 or q == 0:
            return fids, sgn
        ext = (ids & ((1 << self.d) - 1)).astype(np.int64)
        vlin = (ids >> self.d).astype(np.int64)
        slot = np.zeros(m, dtype=np.int64)
        par = np.ones(m, dtype=np.int8)
        for axis in range(self.d):
            rows = np.flatnonzero((ext >> axis) & 1)
            if rows.size == 0:
                continue
            sub = ext[rows] & ~np.int64(1 << axis)
            near = _pack(vlin[rows], sub, self.d)
            far = _pack(vlin[rows] + self.vstrides[axis], sub, self.d)
            s = par[rows]
            k = slot[rows]
            fids[rows, 2 * k] = near
            sgn[rows, 2 * k] = -s
            fids[rows, 2 * k + 1] = far
            sgn[rows, 2 * k + 1] = s
            slot[rows] += 1
            par[rows] = -par[rows]
        return fids, sgn

    def locate(self, q: int, ids: np.ndarray) -> np.ndarray:
        """Rows of ids in the dim-q table, -1 where absent."""
        table = self.ids[q]
        pos = np.searchsorted(table, ids)
        pos_c = np.clip(pos, 0, max(table.size - 1, 0))
        ok = (table.size > 0) & (ids >= 0)
        ok = ok & (table[pos_c] == ids) if table.size else np.zeros(ids.shape, bool)
        return np.where(ok, pos_c, -1).astype(np.int64)

    def _build_incidence(self):
        d = self.d
        self.fpos = {}
        self.fsgn = {}
        self.cof_ptr = {}
        self.cof_rows = {}
        self.face_cnt = {}
        self.coface_cnt = {}
        self.sum_face = {}
        self.sum_cof = {}
        for q in range(d + 1):
            n = self.ids[q].size
            self.face_cnt[q] = np.zeros(n, dtype=np.int32)
            self.coface_cnt[q] = np.zeros(n, dtype=np.int32)
            self.sum_face[q] = np.zeros(n, dtype=np.int64)
            self.sum_cof[q] = np.zeros(n, dtype=np.int64)
        for q in range(1, d + 1):
            fids, sgn = self._face_table(self.ids[q], q)
            pos = self.locate(q - 1, fids.ravel()).reshape(fids.shape)
            pos[sgn == 0] = -1
            self.fpos[q] = pos
            self.fsgn[q] = sgn
            valid = pos >= 0
            self.face_cnt[q][:] = valid.sum(axis=1)
            self.sum_face[q][:] = np.where(valid, pos, 0).sum(axis=1)
            flat = pos[valid]
            rows = np.repeat(np.arange(self.ids[q].size), valid.sum(axis=1))
            np.add.at(self.coface_cnt[q - 1], flat, 1)
            np.add.at(self.sum_cof[q - 1], flat, rows)
            order = np.argsort(flat, kind="stable")
            self.cof_rows[q - 1] = rows[order]
            counts = np.bincount(flat, minlength=self.ids[q - 1].size)
            self.cof_ptr[q - 1] = np.concatenate(
                [[0], np.cumsum(counts)]
            ).astype(np.int64)

    # -- batched reduction ----------------------------------------------------

    def _csr_slices(self, q: int, rows: np.ndarray):
        """Concatenated coface rows for the given dim-q rows, with owners."""
        ptr = self.cof_ptr.get(q)
        if ptr is None or rows.size == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        starts, ends = ptr[rows], ptr[rows + 1]
        lens = ends - starts
        total = int(lens.sum())
        if total == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        idx = np.repeat(starts + lens - lens.cumsum(), lens) + np.arange(total)
        owners = np.repeat(rows, lens)
        return self.cof_rows[q][idx], owners

    def _remove(self, q: int, rows: np.ndarray, when: np.ndarray):
        """Mark rows dead and update neighbor counts and index sums."""
        self.alive[q][rows] = False
        self.rm_time[q][rows] = when
        if q >= 1:
            pos = self.fpos[q][rows]
            valid = pos >= 0
            owners = np.repeat(rows, valid.sum(axis=1))
            np.add.at(self.coface_cnt[q - 1], pos[valid], -1)
            np.add.at(self.sum_cof[q - 1], pos[valid], -owners)
        if q < self.d:
            cof, owners = self._csr_slices(q, rows)
            if cof.size:
                np.add.at(self.face_cnt[q + 1], cof, -1)
                np.add.at(self.sum_face[q + 1], cof, -owners)

    def _pair_sign(self, q: int, row_a: np.ndarray, row_b: np.ndarray) -> np.ndarray:
        """Incidence of face rows a inside the boundary of (q+1)-rows b."""
        pos = self.fpos[q + 1][row_b]
        hit = pos == row_a[:, None]
        sgn = (self.fsgn[q + 1][row_b] * hit).sum(axis=1)
        if np.any(np.abs(sgn) != 1):
            raise OracleError("cubical incidence must be a unit")
        return sgn.astype(np.int64)

    def _accept_disjoint(self, rows_a, rows_b):
        """Keep a subset of candidate pairs with all-distinct members."""
        _, first = np.unique(rows_b, return_index=True)
        return rows_a[np.sort(first)], rows_b[np.sort(first)]

    def reduce(self):
        """Exhaust free-face collapses, coreductions, and vertex pumps.

        Free faces and coreductions are homology-preserving pair
        deletions.  When both stall (closed surfaces: every cell has two
        cofaces and a full complement of faces) one stalled vertex is
        pumped: deleted alone and recorded.  Quotienting by a vertex
        class leaves every degree untouched except degree zero, which
        drops by exactly one free summand, so each pump later counts as
        one extra degree-zero generator.  At a stall no alive vertex
        class is trivial or matches another stalled one (an alive chain
        with boundary equal to a single vertex would need a one-cell
        with exactly one alive face, which is a coreduction), so the
        bookkeeping is exact.  Pumping also reopens the coreduction
        cascade, shrinking stalled circles and shells to a handful of
        cells.
        """
        while True:
            self._sweep_pairs()
            v = self._pump_candidate()
            if v < 0:
                return
            when = np.array([len(self.log_a)], dtype=np.int64)
            self._remove(0, np.array([v], dtype=np.int64), when)
            self.log_q.append(0)
            self.log_a.append(int(v))
            self.log_b.append(-1)
            self.log_e.append(0)
            self.pumped.append(int(v))

    def _pump_candidate(self) -> int:
        """A stalled vertex that still has alive cofaces, or -1."""
        cand = np.flatnonzero(self.alive[0] & (self.coface_cnt[0] > 0))
        return int(cand[0]) if cand.size else -1

    def _sweep_pairs(self):
        clock = len(self.log_a)
        changed = True
        while changed:
            changed = False
            for q in range(self.d):
                # free faces: alive dim-q cells with a unique alive coface
                cand = np.flatnonzero(self.alive[q] & (self.coface_cnt[q] == 1))
                if cand.size == 0:
                    continue
                mates = self.sum_cof[q][cand]
                cand, mates = self._accept_disjoint(cand, mates)
                eps = self._pair_sign(q, cand, mates)
                when = clock + np.arange(cand.size, dtype=np.int64)
                self._remove(q, cand, when)
                self._remove(q + 1, mates, when)
                self.log_q.extend([q] * cand.size)
                self.log_a.extend(cand.tolist())
                self.log_b.extend(mates.tolist())
                self.log_e.extend(eps.tolist())
                clock += cand.size
                changed = True
            for q in range(1, self.d + 1):
                # coreductions: alive dim-q cells with a unique alive face
                cand = np.flatnonzero(self.alive[q] & (self.face_cnt[q] == 1))
                if cand.size == 0:
                    continue
                mates = self.sum_face[q][cand]  # dim q-1 rows
                cand, mates = self._accept_disjoint(cand, mates)
                eps = self._pair_sign(q - 1, mates, cand)
                when = clock + np.arange(cand.size, dtype=np.int64)
                self._remove(q - 1, mates, when)
                self._remove(q, cand, when)
                self.log_q.extend([q - 1] * cand.size)
                self.log_a.extend(mates.tolist())
                self.log_b.extend(cand.tolist())
                self.log_e.extend(eps.tolist())
                clock += cand.size
                changed = True

    # -- core matrices ---------------------------------------------------------

    def core_rows(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.alive[q])

    def core_matrices(self, max_core: int):
        dims = []
        core = {}
        for q in range(self.d + 1):
            rows = self.core_rows(q)
            if rows.size > max_core:
                raise OracleError(
                    f"reduction left {rows.size} cells in dimension {q}; "
                    f"the integer stage would not finish in sensible time"
                )
            core[q] = rows
            dims.append(rows.size)
        bnds = {}
        for q in range(1, self.d + 1):
            if core[q].size == 0 or core[q - 1].size == 0:
                continue
            colmap = np.full(self.ids[q - 1].size, -1, dtype=np.int64)
            colmap[core[q - 1]] = np.arange(core[q - 1].size)
            mat = [[0] * core[q].size for _ in range(core[q - 1].size)]
            pos = self.fpos[q][core[q]]
            sgn = self.fsgn[q][core[q]]
            for j in range(core[q].size):
                for slot in range(pos.shape[1]):
                    p = pos[j, slot]
                    if p >= 0 and self.alive[q - 1][p]:
                        mat[colmap[p]][j] += int(sgn[j, slot])
            bnds[q] = mat
        return dims, bnds, core

    # -- chain replay -----------------------------------------------------------

    def ambient_faces(self, q: int, chain: dict[int, int]) -> dict[int, int]:
        """Boundary of a chain on cube ids, in the full lattice.

        Unlike chain_faces this keeps faces that fall outside this
        pair's cell set, which is what a connecting map needs.
        """
        ids = np.array(sorted(chain), dtype=np.int64)
        if ids.size == 0:
            return {}
        fids, sgn = self._face_table(ids, q)
        out: dict[int, int] = {}
        for r, cid in enumerate(ids):
            coef = int(chain[int(cid)])
            if coef == 0:
                continue
            for slot in range(fids.shape[1]):
                s = int(sgn[r, slot])
                if s:
                    f = int(fids[r, slot])
                    out[f] = out.get(f, 0) + coef * s
        return {f: c for f, c in out.items() if c != 0}

    def chain_faces(self, q: int, chain: dict[int, int]) -> dict[int, int]:
        """Literal boundary of a chain given by {dim-q row: coeff}."""
        out: dict[int, int] = {}
        for row, coef in chain.items():
            if coef == 0:
                continue
            for slot in range(self.fpos[q].shape[1]):
                p = self.fpos[q][row, slot]
                if p >= 0:
                    s = int(self.fsgn[q][row, slot])
                    out[p] = out.get(p, 0) + coef * s
        return {r: c for r, c in out.items() if c != 0}

    def project(self, q: int, chain: dict[int, int]) -> list[int]:
        """Original cycle -> core coordinate vector of dimension q.

        Replays the deletion log forward.  Dropping the higher pair cell
        never affects other coordinates, so only the face-cell rule does
        work: a deleted face is retracted across its partner, picking up
        the partner's remaining boundary as it stood at deletion time.
        """
        z = {int(r): int(c) for r, c in chain.items() if c != 0}
        for i in range(len(self.log_a)):
            lq, a, b, eps = self.log_q[i], self.log_a[i], self.log_b[i], self.log_e[i]
            if b < 0:
                # vertex pump: the quotient map drops that coordinate
                if lq == q:
                    z.pop(a, None)
            elif lq + 1 == q:
                z.pop(b, None)
            elif lq == q:
                za = z.get(a, 0)
                if za:
                    for p, s in self._stage_faces(lq + 1, b, i):
                        if p != a:
                            z[p] = z.get(p, 0) - (za // eps) * s
                    del z[a]
        rows = self.core_rows(q)
        colmap = {int(r): j for j, r in enumerate(rows)}
        vec = [0] * rows.size
        for row, coef in z.items():
            if coef == 0:
                continue
            j = colmap.get(row)
            if j is None:
                raise OracleError(
                    "projection left weight on a deleted cell; the input "
                    "was not a cycle of this pair"
                )
            vec[j] = coef
        return vec

    def lift(self, q: int, vec: Sequence[int]) -> dict[int, int]:
        """Core coordinate vector -> cycle in the original complex."""
        rows = self.core_rows(q)
        z: dict[int, int] = {
            int(r): int(v) for r, v in zip(rows, vec) if int(v) != 0
        }
        for i in range(len(self.log_a) - 1, -1, -1):
            lq, a, b, eps = self.log_q[i], self.log_a[i], self.log_b[i], self.log_e[i]
            if b < 0 or lq + 1 != q:
                # a cycle's boundary cannot meet a pumped vertex: its
                # class stays a free degree-zero summand until removal
                continue
            t = 0
            for row, coef in z.items():
                t += coef * self._incidence(q, row, lq, a)
            if t:
                z[b] = z.get(b, 0) - t // eps
                if z[b] == 0:
                    del z[b]
        return z

    def _incidence(self, q: int, row: int, fq: int, face_row: int) -> int:
        if fq + 1 != q:
            return 0
        for slot in range(self.fpos[q].shape[1]):
            if self.fpos[q][row, slot] == face_row:
                return int(self.fsgn[q][row, slot])
        return 0

    def _stage_faces(self, q: int, row: int, stage: int):
        """Faces of a dim-q row still present when log entry `stage` ran."""
        out = []
        for slot in range(self.fpos[q].shape[1]):
            p = self.fpos[q][row, slot]
            if p >= 0 and self.rm_time[q - 1][p] >= stage:
                out.append((int(p), int(self.fsgn[q][row, slot])))
        return out


# ---------------------------------------------------------------------------
# homology of mask pairs
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class HomologyResult:
    """Integer homology of a mask pair with original-cell generators."""

    grid: Grid
    groups: list[HomologyGroup]
    _cx: _Complex
    _chain: ChainComplexZ
    _data: list[DegreeData]
    _core: dict[int, np.ndarray]
    _pumps: list[int]

    def betti(self) -> list[int]:
        return [g.betti for g in self.groups]

    def group(self, q: int) -> HomologyGroup:
        if 0 <= q < len(self.groups):
            return self.groups[q]
        return HomologyGroup(0, ())

    def generators(self, q: int) -> list[dict[int, int]]:
        """Torsion + free generators of H_q as {cube id: coeff} chains.

        Pumped vertices come last in degree zero: each is a standalone
        free class on top of whatever the reduced core carries.
        """
        if not (0 <= q < len(self._data)):
            return []
        out = []
        ids_q = self._cx.ids[q]
        for gen in self._data[q].generators:
            chain_rows = self._cx.lift(q, gen)
            out.append({int(ids_q[r]): int(c) for r, c in chain_rows.items()})
        if q == 0:
            out.extend({int(ids_q[r]): 1} for r in self._pumps)
        return out

    def class_coords(self, q: int, chain: dict[int, int]) -> tuple[list[int], list[int]]:
        """(free coords, torsion residues) of a cycle given on cube ids."""
        if q == 0 and self._pumps:
            raise OracleError(
                "degree-zero coordinates are ambiguous once vertices were "
                "pumped; this pair's components did not reduce to points"
            )
        rows = self._rows_of(q, chain)
        vec = self._cx.project(q, rows)
        return self._chain.class_coordinates(q, [int(v) for v in vec], self._data[q])

    def boundary_chain(self, q: int, chain: dict[int, int]) -> dict[int, int]:
        """Literal cubical boundary, on cube ids, within this complex."""
        rows = self._rows_of(q, chain)
        faces = self._cx.chain_faces(q, rows)
        ids = self._cx.ids[q - 1]
        return {int(ids[r]): int(c) for r, c in faces.items()}

    def has_cell(self, q: int, cube_id: int) -> bool:
        pos = self._cx.locate(q, np.array([cube_id], dtype=np.int64))
        return bool(pos[0] >= 0)

    def _rows_of(self, q: int, chain: dict[int, int]) -> dict[int, int]:
        ids = np.array(sorted(chain), dtype=np.int64)
        pos = self._cx.locate(q, ids)
        if np.any(pos < 0):
            missing = ids[pos < 0][:4].tolist()
            raise ConfigError(
                f"chain uses cube ids absent from this pair: {missing}"
            )
        return {int(p): int(chain[int(i)]) for p, i in zip(pos, ids)}


def relative_homology(
    mask_a: Mask,
    mask_b: Optional[Mask] = None,
    max_core: int = 2500,
) -> HomologyResult:
    """H_*(A, B) over the integers for nested masks (B may be None/empty)."""
    cx = _Complex(mask_a.grid, mask_a, mask_b)
    cx.reduce()
    dims, bnds, core = cx.core_matrices(max_core)
    chain = ChainComplexZ(dims, bnds)
    data = chain.homology_data()
    groups = [d.group for d in data]
    if cx.pumped:
        g0 = groups[0]
        groups[0] = HomologyGroup(g0.betti + len(cx.pumped), g0.torsion)
    return HomologyResult(
        grid=mask_a.grid,
        groups=groups,
        _cx=cx,
        _chain=chain,
        _data=data,
        _core=core,
        _pumps=list(cx.pumped),
    )


def chain_boundary(res: HomologyResult, q: int, chain: dict[int, int]) -> dict[int, int]:
    return res.boundary_chain(q, chain)


# ---------------------------------------------------------------------------
# connecting map between filtration stages, and the comparison gate
# ---------------------------------------------------------------------------


def triple_boundary(
    hi: HomologyResult,
    lo: HomologyResult,
    q: int,
) -> np.ndarray:
    """Boundary map H_q(hi pair) -> H_{q-1}(lo pair) on free generators.

    Each free generator of the upper pair is lifted to a cube chain, its
    literal boundary taken, cells absent from the lower pair dropped
    (they lie in the lower pair's quotient region), and the rest read in
    the lower pair's class coordinates.  Any torsion residue is an
    immediate failure: these filtrations must produce free groups.
    """
    n_hi = hi.group(q).betti
    n_lo = lo.group(q - 1).betti
    mat = np.zeros((n_lo, n_hi), dtype=np.int64)
    gens = hi.generators(q)
    free_gens = gens[hi._data[q].n_torsion_slots:] if gens else []
    if len(free_gens) != n_hi:
        raise OracleError("free generator count mismatch in the upper pair")
    for j, gen in enumerate(free_gens):
        bnd = hi._cx.ambient_faces(q, gen)
        kept: dict[int, int] = {}
        for cid, coef in bnd.items():
            if lo.has_cell(q - 1, cid):
                kept[cid] = coef
        free, tor = lo.class_coords(q - 1, kept)
        if any(t != 0 for t in tor):
            raise NotAMorseFiltration(
                f"connecting map hits torsion in degree {q - 1}"
            )
        mat[:, j] = free
    return mat


def compare_with_morse(
    stage_pairs: Sequence[HomologyResult],
    morse_boundaries: dict[int, np.ndarray],
    morse_counts: Sequence[int],
) -> dict:
    """Match filtration homology to a Morse complex, exactly.

    Checks, in order: every stage pair is free with rank concentrated in
    its own degree; the connecting maps agree with the Morse boundary
    matrices up to one signed relabeling of generators per degree; the
    total homologies then agree automatically.  Raises
    NotAMorseFiltration with the first structural failure.
    """
    top = len(stage_pairs) - 1
    for k, res in enumerate(stage_pairs):
        for q, g in enumerate(res.groups):
            want = int(morse_counts[k]) if q == k else 0
            if g.torsion:
                raise NotAMorseFiltration(
                    f"stage {k} has torsion {g.label()} in degree {q}"
                )
            if g.betti != want:
                raise NotAMorseFiltration(
                    f"stage {k} has rank {g.betti} in degree {q}, "
                    f"expected {want}"
                )

    conn = {
        k: triple_boundary(stage_pairs[k], stage_pairs[k - 1], k)
        for k in range(1, top + 1)
    }

    match = _signed_permutation_match(conn, morse_boundaries, morse_counts, top)
    if match is None:
        raise NotAMorseFiltration(
            "no signed relabeling of generators aligns the connecting maps "
            "with the orbit-count boundaries"
        )
    return {
        "connecting": {k: m.tolist() for k, m in conn.items()},
        "signs": {k: s for k, (_, s) in match.items()},
        "permutations": {k: p for k, (p, _) in match.items()},
    }


def _signed_permutation_match(conn, morse, counts, top):
    """Per-degree signed permutations P_k with P_{k-1} conn_k = morse_k P_k."""
    options: list[list[tuple[tuple[int, ...], tuple[int, ...]]]] = []
    for k in range(top + 1):
        n = int(counts[k])
        opts = []
        for perm in itertools.permutations(range(n)):
            for bits in range(1 << n):
                signs = tuple(1 if (bits >> i) & 1 == 0 else -1 for i in range(n))
                opts.append((perm, signs))
        options.append(opts)

    def apply(mat, pl, sl, pr, sr):
        # rows relabeled by (pl, sl), columns by (pr, sr)
        out = np.zeros_like(mat)
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                out[pl[i], j] = sl[i] * mat[i, j]
        out2 = np.zeros_like(out)
        for j in range(mat.shape[1]):
            out2[:, pr[j]] = sr[j] * out[:, j]
        return out2

    def search(k, chosen):
        if k > top:
            return chosen
        for opt in options[k]:
            chosen[k] = opt
            ok = True
            if k >= 1:
                pl, sl = chosen[k - 1]
                pr, sr = opt
                if not np.array_equal(
                    apply(conn[k], pl, sl, pr, sr), morse[k]
                ):
                    ok = False
            if ok:
                res = search(k + 1, chosen)
                if res is not None:
                    return res
        chosen.pop(k, None)
        return None

    got = search(0, {})
    if got is None:
        return None
    return {k: (list(v[0]), list(v[1])) for k, v in got.items()}
