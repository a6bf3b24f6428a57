"""Exact integer linear algebra for homology over the integers.

Dense Smith normal form with full transform tracking (U, V and their
inverses maintained simultaneously), integer kernel bases, exact solves,
and homology of a finite chain complex with generators and class
coordinates.  Everything runs on Python ints, so no overflow: the
matrices that reach this layer are small (reduced complexes and Morse
boundary operators), the heavy lifting happens before.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

from .errors import BoundarySquareNonzero, MorselabError

__all__ = [
    "SNFResult",
    "smith_normal_form",
    "solve_integer",
    "HomologyGroup",
    "ChainComplexZ",
]

IntMatrix = list[list[int]]


def as_int_matrix(A, rows: Optional[int] = None, cols: Optional[int] = None) -> IntMatrix:
    """Copy any 2-D array-like into lists of Python ints."""
    M = [[int(x) for x in row] for row in A]
    if rows is not None and len(M) != rows:
        raise ValueError(f"expected {rows} rows, got {len(M)}")
    if M and cols is not None and any(len(r) != cols for r in M):
        raise ValueError("ragged or mis-sized matrix")
    return M


def zeros(r: int, c: int) -> IntMatrix:
    return [[0] * c for _ in range(r)]


def eye(n: int) -> IntMatrix:
    M = zeros(n, n)
    for i in range(n):
        M[i][i] = 1
    return M


def matmul(A: IntMatrix, B: IntMatrix) -> IntMatrix:
    if not A or not B:
        rows = len(A)
        cols = len(B[0]) if B else 0
        return zeros(rows, cols)
    n, k, m = len(A), len(B), len(B[0])
    out = zeros(n, m)
    for i in range(n):
        Ai = A[i]
        oi = out[i]
        for t in range(k):
            a = Ai[t]
            if a:
                Bt = B[t]
                for j in range(m):
                    if Bt[j]:
                        oi[j] += a * Bt[j]
    return out


def matvec(A: IntMatrix, v: Sequence[int]) -> list[int]:
    return [sum(a * x for a, x in zip(row, v)) for row in A]


@dataclasses.dataclass
class SNFResult:
    """D = U A V with U, V unimodular; Uinv, Vinv their exact inverses."""

    D: IntMatrix
    U: IntMatrix
    V: IntMatrix
    Uinv: IntMatrix
    Vinv: IntMatrix
    rank: int
    rows: int
    cols: int

    def diagonal(self) -> list[int]:
        n = min(self.rows, self.cols)
        return [self.D[i][i] for i in range(n)]


def smith_normal_form(A, shape: Optional[tuple[int, int]] = None) -> SNFResult:
    """Smith normal form over the integers with transform tracking.

    The diagonal is non-negative with each entry dividing the next.
    Pass `shape` explicitly for matrices that may have zero rows; the
    nested-list form cannot carry a column count through an empty axis.
    """
    D = as_int_matrix(A)
    r = len(D)
    c = len(D[0]) if D else 0
    if shape is not None:
        if r != shape[0] or (D and c != shape[1]):
            raise ValueError(f"matrix is {r}x{c}, declared {shape}")
        r, c = shape
        if not D:
            D = zeros(r, c)
    U, Uinv = eye(r), eye(r)
    V, Vinv = eye(c), eye(c)

    def row_swap(i, j):
        D[i], D[j] = D[j], D[i]
        U[i], U[j] = U[j], U[i]
        for row in Uinv:
            row[i], row[j] = row[j], row[i]

    def row_add(i, j, m):  # row i += m * row j
        Di, Dj = D[i], D[j]
        for t in range(c):
            Di[t] += m * Dj[t]
        Ui, Uj = U[i], U[j]
        for t in range(r):
            Ui[t] += m * Uj[t]
        for row in Uinv:  # Uinv: col j -= m * col i
            row[j] -= m * row[i]

    def row_neg(i):
        D[i] = [-x for x in D[i]]
        U[i] = [-x for x in U[i]]
        for row in Uinv:
            row[i] = -row[i]

    def col_swap(i, j):
        for row in D:
            row[i], row[j] = row[j], row[i]
        for row in V:
            row[i], row[j] = row[j], row[i]
        Vinv[i], Vinv[j] = Vinv[j], Vinv[i]

    def col_add(i, j, m):  # col i += m * col j
        for row in D:
            row[i] += m * row[j]
        for row in V:
            row[i] += m * row[j]
        Vj, Vi = Vinv[j], Vinv[i]  # Vinv: row j -= m * row i
        for t in range(c):
            Vj[t] -= m * Vi[t]

    def col_neg(i):
        for row in D:
            row[i] = -row[i]
        for row in V:
            row[i] = -row[i]
        Vinv[i] = [-x for x in Vinv[i]]

    t = 0
    limit = min(r, c)
    while t < limit:
        # locate a pivot of minimal absolute value in the working block
        piv = None
        best = None
        for i in range(t, r):
            Di = D[i]
            for j in range(t, c):
                x = Di[j]
                if x:
                    if best is None or abs(x) < best:
                        best = abs(x)
                        piv = (i, j)
                        if best == 1:
                            break
            if best == 1:
                break
        if piv is None:
            break
        i0, j0 = piv
        if i0 != t:
            row_swap(t, i0)
        if j0 != t:
            col_swap(t, j0)
        if D[t][t] < 0:
            row_neg(t)

        dirty = False
        for i in range(t + 1, r):
            if D[i][t]:
                q = D[i][t] // D[t][t]
                if q:
                    row_add(i, t, -q)
                if D[i][t]:
                    dirty = True
        for j in range(t + 1, c):
            if D[t][j]:
                q = D[t][j] // D[t][t]
                if q:
                    col_add(j, t, -q)
                if D[t][j]:
                    dirty = True
        if dirty:
            continue  # remainders became new, smaller pivot candidates

        # pivot must divide the rest of the block for the chain condition
        d = D[t][t]
        offender = None
        for i in range(t + 1, r):
            Di = D[i]
            for j in range(t + 1, c):
                if Di[j] % d:
                    offender = i
                    break
            if offender is not None:
                break
        if offender is not None:
            row_add(t, offender, 1)
            continue
        t += 1

    rank = 0
    for i in range(limit):
        if D[i][i]:
            rank += 1
    return SNFResult(D=D, U=U, V=V, Uinv=Uinv, Vinv=Vinv, rank=rank, rows=r, cols=c)


def solve_integer(snf_K: SNFResult, y: Sequence[int]) -> list[int]:
    """Exact solve K w = y given the SNF of K; raises on no solution."""
    D, U, V = snf_K.D, snf_K.U, snf_K.V
    r, c = snf_K.rows, snf_K.cols
    u = matvec(U, list(y))
    w_t = [0] * c
    for i in range(r):
        d = D[i][i] if i < c else 0
        if d:
            if u[i] % d:
                raise MorselabError("integer solve: divisibility failure")
            w_t[i] = u[i] // d
        elif u[i]:
            raise MorselabError("integer solve: inconsistent system")
    return matvec(V, w_t)


# ---------------------------------------------------------------------------
# homology of a chain complex
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class HomologyGroup:
    """Finitely generated abelian group: Z^betti + sum Z/torsion_i."""

    betti: int
    torsion: tuple[int, ...] = ()

    def label(self) -> str:
        parts = []
        if self.betti == 1:
            parts.append("Z")
        elif self.betti > 1:
            parts.append(f"Z^{self.betti}")
        parts.extend(f"Z/{d}" for d in self.torsion)
        return " + ".join(parts) if parts else "0"

    def is_trivial(self) -> bool:
        return self.betti == 0 and not self.torsion


@dataclasses.dataclass
class DegreeData:
    """Homology bookkeeping for one degree, enough to express classes."""

    group: HomologyGroup
    kernel_basis: IntMatrix  # n_q x z, columns span ker boundary
    snf_kernel: Optional[SNFResult]
    coords_map: IntMatrix  # z x z unimodular (U_Y): kernel coords -> class coords
    n_torsion_slots: int  # rank of the boundary image inside the kernel
    diag: list[int]
    generators: IntMatrix  # n_q x (torsion gens..., free gens...)


class ChainComplexZ:
    """Finite chain complex of free Z-modules given by boundary matrices.

    ``boundaries[q]`` maps C_q -> C_{q-1} and has shape
    (dims[q-1], dims[q]); q runs from 1 to len(dims)-1.
    """

    def __init__(self, dims: Sequence[int], boundaries: dict[int, IntMatrix]):
        self.dims = [int(d) for d in dims]
        self.boundaries: dict[int, IntMatrix] = {}
        for q in range(1, len(self.dims)):
            B = boundaries.get(q)
            if B is None:
                B = zeros(self.dims[q - 1], self.dims[q])
            B = as_int_matrix(B)
            if len(B) != self.dims[q - 1] or (B and self.dims[q] and len(B[0]) != self.dims[q]):
                raise ValueError(f"boundary {q} has wrong shape")
            if not B:
                B = zeros(self.dims[q - 1], self.dims[q])
            self.boundaries[q] = B

    def check_boundary_square(self):
        for q in range(2, len(self.dims)):
            P = matmul(self.boundaries[q - 1], self.boundaries[q])
            bad = max((abs(x) for row in P for x in row), default=0)
            if bad:
                raise BoundarySquareNonzero(
                    f"boundary squared is nonzero in degree {q} (max entry {bad})"
                )

    def top(self) -> int:
        return len(self.dims) - 1

    def homology(self) -> list[HomologyGroup]:
        return [d.group for d in self.homology_data()]

    def homology_data(self) -> list[DegreeData]:
        out = []
        for q in range(len(self.dims)):
            out.append(self._degree_data(q))
        return out

    def _degree_data(self, q: int) -> DegreeData:
        n_q = self.dims[q]
        if n_q == 0:
            return DegreeData(
                group=HomologyGroup(0),
                kernel_basis=zeros(0, 0),
                snf_kernel=None,
                coords_map=zeros(0, 0),
                n_torsion_slots=0,
                diag=[],
                generators=zeros(0, 0),
            )
        # kernel of the outgoing boundary
        if q == 0:
            K = eye(n_q)
            z = n_q
        else:
            snf_d = smith_normal_form(
                self.boundaries[q], shape=(self.dims[q - 1], n_q)
            )
            rnk = snf_d.rank
            z = n_q - rnk
            K = [[snf_d.V[i][rnk + j] for j in range(z)] for i in range(n_q)]
        # image of the incoming boundary, in kernel coordinates
        if q + 1 < len(self.dims) and self.dims[q + 1] > 0 and z > 0:
            B_in = self.boundaries[q + 1]
            snf_K = smith_normal_form(K, shape=(n_q, z)) if q > 0 else None
            y_cols = self.dims[q + 1]
            cols = []
            for j in range(y_cols):
                col = [B_in[i][j] for i in range(n_q)]
                if q == 0:
                    cols.append(col)
                else:
                    cols.append(solve_integer(snf_K, col))
            Y = [[cols[j][i] for j in range(y_cols)] for i in range(z)]
        else:
            snf_K = smith_normal_form(K, shape=(n_q, z)) if (q > 0 and z > 0) else None
            y_cols = 0
            Y = zeros(z, 0)
        snf_Y = smith_normal_form(Y, shape=(z, y_cols))
        s = snf_Y.rank
        diag = snf_Y.diagonal()[:s]
        torsion = tuple(int(d) for d in diag if abs(d) > 1)
        betti = z - s
        group = HomologyGroup(betti, torsion)
        # new kernel basis K' = K * Uinv_Y aligns the image with the diagonal
        Kp = matmul(K, snf_Y.Uinv) if z else zeros(n_q, 0)
        gen_cols = [i for i in range(s) if abs(diag[i]) > 1] + list(range(s, z))
        gens = [[Kp[i][j] for j in gen_cols] for i in range(n_q)] if z else zeros(n_q, 0)
        return DegreeData(
            group=group,
            kernel_basis=K,
            snf_kernel=snf_K,
            coords_map=snf_Y.U,
            n_torsion_slots=s,
            diag=[int(d) for d in diag],
            generators=gens,
        )

    def class_coordinates(self, q: int, cycle: Sequence[int], data: DegreeData) -> tuple[list[int], list[int]]:
        """Coordinates of a cycle's class: (free part, torsion residues).

        Torsion residues are reported only for slots with divisor > 1,
        reduced into [0, d).
        """
        z = len(data.kernel_basis[0]) if data.kernel_basis else 0
        if z == 0:
            if any(int(x) for x in cycle):
                raise MorselabError("nonzero cycle in a degree with trivial kernel")
            return [], []
        if q == 0:
            w = [int(x) for x in cycle]
        else:
            w = solve_integer(data.snf_kernel, [int(x) for x in cycle])
        coords = matvec(data.coords_map, w)
        s = data.n_torsion_slots
        free = coords[s:]
        tors = [
            coords[i] % data.diag[i]
            for i in range(s)
            if abs(data.diag[i]) > 1
        ]
        return [int(x) for x in free], [int(x) for x in tors]
