"""State spaces and energy functions for gradient semi-flows.

Two families of systems share one interface:

* analytic systems on R^n with closed-form polynomial energies, and
* loop systems: closed polygonal loops with ``n_segments`` equispaced
  samples on a flat manifold (circle, flat torus, or R^m), carrying the
  classical action = kinetic term minus a time-periodic potential.

Loop states are flattened sample arrays of shape ``(n_segments * m,)``
in C order (sample-major).  The winding of the loop around each periodic
direction is part of the system, not the state: states live in the
universal-cover chart and the closure condition is
``x[N] = x[0] + winding``.

All gradients and Hessians are taken with respect to the system's inner
product: the 1/N-weighted discrete L2 product for loops, the Euclidean
product for analytic systems.  With that convention the loop gradient is
the discrete second difference plus the potential force, and its spectrum
approximates the continuum Jacobi operator independent of N.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidState

__all__ = [
    "FourierTerm",
    "Potential",
    "ModelSystem",
    "SeparablePolynomialSystem",
    "CoupledSaddleSystem",
    "LoopSystem",
    "KernelSpec",
    "make_system",
    "norm_w12",
    "norm_w14",
]


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

KIND_COS = 0
KIND_SIN = 1

_TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class FourierTerm:
    """One product term  coef * trig(2 pi t_order t) * trig(2 pi wave . q).

    ``t_kind`` / ``q_kind`` select cos (0) or sin (1).  ``t_order = 0``
    with cos gives a time-independent term.
    """

    coef: float
    wave: tuple[int, ...]
    t_order: int = 0
    t_kind: int = KIND_COS
    q_kind: int = KIND_COS

    def __post_init__(self):
        if self.t_kind not in (KIND_COS, KIND_SIN):
            raise ConfigError(f"bad t_kind {self.t_kind}")
        if self.q_kind not in (KIND_COS, KIND_SIN):
            raise ConfigError(f"bad q_kind {self.q_kind}")
        if self.t_order < 0:
            raise ConfigError("t_order must be >= 0")


def _trig(kind: int, u: np.ndarray) -> np.ndarray:
    return np.cos(u) if kind == KIND_COS else np.sin(u)


def _dtrig(kind: int, u: np.ndarray) -> np.ndarray:
    # derivative of cos is -sin, of sin is cos
    return -np.sin(u) if kind == KIND_COS else np.cos(u)


class Potential:
    """Truncated Fourier potential V(t, q) on [0,1) x R^m, 1-periodic in t.

    Closed forms for the value, the q-gradient, and the q-Hessian, all
    vectorized over a leading batch of sample points.
    """

    def __init__(self, dim: int, terms: Sequence[FourierTerm]):
        self.dim = int(dim)
        self.terms = tuple(terms)
        for tm in self.terms:
            if len(tm.wave) != self.dim:
                raise ConfigError(
                    f"wave {tm.wave} does not match potential dim {self.dim}"
                )

    def table(self) -> np.ndarray:
        """Pack terms as rows [coef, t_order, t_kind, q_kind, wave...]."""
        if not self.terms:
            return np.zeros((0, 4 + self.dim))
        rows = [
            [tm.coef, tm.t_order, tm.t_kind, tm.q_kind, *tm.wave] for tm in self.terms
        ]
        return np.asarray(rows, dtype=np.float64)

    # Q has shape (..., m); t broadcasts against the leading axes of Q.
    def value(self, t: np.ndarray, Q: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        Q = np.asarray(Q, dtype=np.float64)
        out = np.zeros(np.broadcast_shapes(t.shape, Q.shape[:-1]))
        for tm in self.terms:
            w = np.asarray(tm.wave, dtype=np.float64)
            ph_t = _trig(tm.t_kind, _TWO_PI * tm.t_order * t)
            ph_q = _trig(tm.q_kind, _TWO_PI * (Q @ w))
            out = out + tm.coef * ph_t * ph_q
        return out

    def grad(self, t: np.ndarray, Q: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        Q = np.asarray(Q, dtype=np.float64)
        out = np.zeros_like(Q)
        for tm in self.terms:
            w = np.asarray(tm.wave, dtype=np.float64)
            ph_t = _trig(tm.t_kind, _TWO_PI * tm.t_order * t)
            dph_q = _dtrig(tm.q_kind, _TWO_PI * (Q @ w))
            out = out + (tm.coef * _TWO_PI) * (ph_t * dph_q)[..., None] * w
        return out

    def hess(self, t: np.ndarray, Q: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        Q = np.asarray(Q, dtype=np.float64)
        out = np.zeros(Q.shape + (self.dim,))
        for tm in self.terms:
            w = np.asarray(tm.wave, dtype=np.float64)
            ph_t = _trig(tm.t_kind, _TWO_PI * tm.t_order * t)
            # second derivative of either trig is minus itself
            ph_q = -_trig(tm.q_kind, _TWO_PI * (Q @ w))
            ww = np.outer(w, w)
            out = out + (tm.coef * _TWO_PI * _TWO_PI) * (ph_t * ph_q)[..., None, None] * ww
        return out


# ---------------------------------------------------------------------------
# kernel packing
# ---------------------------------------------------------------------------

KERNEL_SEP_POLY = 0
KERNEL_COUPLED_SADDLE = 1
KERNEL_LOOP = 2


@dataclasses.dataclass
class KernelSpec:
    """Flat description of a system's gradient for the stepping kernels.

    Everything a kernel needs is packed into plain float64 arrays so the
    compiled backend never calls back into Python.
    """

    kind: int
    n_state: int
    is_loop: bool
    pa: np.ndarray  # quartic coefficients / (mu_hat, beta)
    pb: np.ndarray  # quadratic coefficients / unused
    n_loop: int = 0
    m_dim: int = 0
    winding: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))
    terms: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros((0, 4)))
    box_lo: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))
    box_hi: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------


class ModelSystem:
    """Common interface: action, metric gradient, metric Hessian, norms."""

    name: str = "system"
    n_state: int = 0
    is_loop: bool = False

    # -- energy ------------------------------------------------------------

    def action_many(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_many(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def action(self, z: np.ndarray) -> float:
        return float(self.action_many(np.asarray(z, dtype=np.float64)[None, :])[0])

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.grad_many(np.asarray(z, dtype=np.float64)[None, :])[0]

    def hessian_raw(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, z: np.ndarray) -> np.ndarray:
        """Symmetrized metric Hessian; raw asymmetry must be tiny."""
        A = self.hessian_raw(np.asarray(z, dtype=np.float64))
        asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
        if asym > 1e-9 * max(1.0, float(np.max(np.abs(A)))):
            raise InvalidState(f"Hessian asymmetry {asym:.3e} exceeds tolerance")
        return 0.5 * (A + A.T)

    # -- metric ------------------------------------------------------------

    def metric_weight(self) -> float:
        return 1.0

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return self.metric_weight() * float(np.dot(np.ravel(u), np.ravel(v)))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))

    def norm_many(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=np.float64)
        return np.sqrt(self.metric_weight() * np.einsum("bi,bi->b", U, U))

    # -- geometry ----------------------------------------------------------

    def box(self) -> np.ndarray:
        """Bounding box (n_state, 2); escape past it raises NonFiniteState."""
        b = np.empty((self.n_state, 2))
        b[:, 0] = -1e6
        b[:, 1] = 1e6
        return b

    def periodic_components(self) -> np.ndarray:
        """Boolean (m,) mask of unit-periodic coordinate directions."""
        return np.zeros(0, dtype=bool)

    def canonicalize(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Translate periodic directions into the fundamental cell.

        Returns (canonical state, integer shift removed).  Identity for
        analytic systems.
        """
        return np.asarray(z, dtype=np.float64).copy(), np.zeros(0, dtype=np.int64)

    def state_distance(self, z1: np.ndarray, z2: np.ndarray) -> float:
        """Max-norm distance, minimized over deck translations."""
        return float(np.max(np.abs(np.asarray(z1) - np.asarray(z2))))

    def translate(self, z: np.ndarray, shift: Sequence[int]) -> np.ndarray:
        """Apply a deck translation; identity (and zero shift) off tori."""
        shift = np.asarray(shift, dtype=np.int64)
        if shift.size and np.any(shift != 0):
            raise InvalidState("nonzero deck shift on a non-periodic system")
        return np.asarray(z, dtype=np.float64).copy()

    def chart_shift(self, z: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, float]:
        """Nearest deck shift taking ref to z, and the residual max-norm."""
        d = float(np.max(np.abs(np.asarray(z) - np.asarray(ref))))
        return np.zeros(0, dtype=np.int64), d

    # -- kernels -----------------------------------------------------------

    def kernel_spec(self) -> Optional[KernelSpec]:
        return None

    def validate_state(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.n_state,):
            raise InvalidState(f"state shape {z.shape}, expected ({self.n_state},)")
        if not np.all(np.isfinite(z)):
            raise InvalidState("state has non-finite entries")
        return z


class SeparablePolynomialSystem(ModelSystem):
    """S(z) = sum_i c4_i z_i^4 + c2_i z_i^2  + c0, Euclidean metric."""

    def __init__(self, c4, c2, c0: float = 0.0, name: str = "separable", box_halfwidth: float = 1e6):
        self.c4 = np.asarray(c4, dtype=np.float64)
        self.c2 = np.asarray(c2, dtype=np.float64)
        if self.c4.shape != self.c2.shape or self.c4.ndim != 1:
            raise ConfigError("c4 and c2 must be 1-D arrays of equal length")
        self.c0 = float(c0)
        self.n_state = self.c4.size
        self.name = name
        self._boxw = float(box_halfwidth)

    def action_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        Z2 = Z * Z
        return Z2 @ self.c2 + (Z2 * Z2) @ self.c4 + self.c0

    def grad_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        return Z * (4.0 * self.c4 * Z * Z + 2.0 * self.c2)

    def hessian_raw(self, z):
        return np.diag(12.0 * self.c4 * z * z + 2.0 * self.c2)

    def box(self):
        b = np.empty((self.n_state, 2))
        b[:, 0] = -self._boxw
        b[:, 1] = self._boxw
        return b

    def kernel_spec(self):
        b = self.box()
        return KernelSpec(
            kind=KERNEL_SEP_POLY,
            n_state=self.n_state,
            is_loop=False,
            pa=self.c4.copy(),
            pb=self.c2.copy(),
            box_lo=b[:, 0].copy(),
            box_hi=b[:, 1].copy(),
        )


class CoupledSaddleSystem(ModelSystem):
    """S(x, y) = -x^2/2 + x^4/4 + mu_hat y^2/2 + beta x^2 y on R^2."""

    def __init__(self, mu_hat: float = 2.0, beta: float = 0.0, name: str = "coupled_saddle"):
        self.mu_hat = float(mu_hat)
        self.beta = float(beta)
        self.n_state = 2
        self.name = name

    def action_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        x, y = Z[:, 0], Z[:, 1]
        return -0.5 * x * x + 0.25 * x ** 4 + 0.5 * self.mu_hat * y * y + self.beta * x * x * y

    def grad_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        x, y = Z[:, 0], Z[:, 1]
        g = np.empty_like(Z)
        g[:, 0] = -x + x ** 3 + 2.0 * self.beta * x * y
        g[:, 1] = self.mu_hat * y + self.beta * x * x
        return g

    def hessian_raw(self, z):
        x, y = float(z[0]), float(z[1])
        return np.array(
            [
                [-1.0 + 3.0 * x * x + 2.0 * self.beta * y, 2.0 * self.beta * x],
                [2.0 * self.beta * x, self.mu_hat],
            ]
        )

    def kernel_spec(self):
        b = self.box()
        return KernelSpec(
            kind=KERNEL_COUPLED_SADDLE,
            n_state=2,
            is_loop=False,
            pa=np.array([self.mu_hat, self.beta]),
            pb=np.zeros(2),
            box_lo=b[:, 0].copy(),
            box_hi=b[:, 1].copy(),
        )


class LoopSystem(ModelSystem):
    """Discrete free-loop space over a flat manifold.

    ``manifold`` is ``"circle"`` (m = 1), ``"torus"`` (m >= 1 periodic), or
    ``"euclidean"`` (m >= 1, no periodicity, winding forced to zero).
    The action of a sampled loop x_0..x_{N-1} with closure
    x_N = x_0 + winding is

        S(x) = sum_j N/2 |x_{j+1} - x_j|^2  -  1/N sum_j V(j/N, x_j).
    """

    def __init__(
        self,
        manifold: str,
        potential: Potential,
        n_segments: int = 16,
        winding: Optional[Sequence[int]] = None,
        name: str = "loop",
        box_halfwidth: float = 1e3,
    ):
        if manifold not in ("circle", "torus", "euclidean"):
            raise ConfigError(f"unknown manifold {manifold!r}")
        if manifold == "circle" and potential.dim != 1:
            raise ConfigError("circle loops need a 1-D potential")
        if n_segments < 4:
            raise ConfigError("need at least 4 samples per loop")
        self.manifold = manifold
        self.potential = potential
        self.n_loop = int(n_segments)
        self.m_dim = int(potential.dim)
        self.n_state = self.n_loop * self.m_dim
        w = np.zeros(self.m_dim, dtype=np.int64) if winding is None else np.asarray(winding, dtype=np.int64)
        if w.shape != (self.m_dim,):
            raise ConfigError(f"winding shape {w.shape}, expected ({self.m_dim},)")
        if manifold == "euclidean" and np.any(w != 0):
            raise ConfigError("euclidean loops cannot wind")
        self.winding = w
        self.is_loop = True
        self.name = name
        self._boxw = float(box_halfwidth)
        self.t_grid = np.arange(self.n_loop, dtype=np.float64) / self.n_loop
        # circulant second-difference matrix, positive semi-definite
        N = self.n_loop
        L = 2.0 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)
        L[0, N - 1] -= 1.0
        L[N - 1, 0] -= 1.0
        self.laplacian = L
        self._stiff_cache: dict[float, np.ndarray] = {}

    # -- helpers -----------------------------------------------------------

    def points(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64).reshape(self.n_loop, self.m_dim)

    def flatten(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64).reshape(-1)

    def _segments(self, X: np.ndarray) -> np.ndarray:
        # X: (B, N, m); returns x_{j+1} - x_j honoring the winding closure
        D = np.roll(X, -1, axis=1) - X
        D[:, -1, :] += self.winding
        return D

    # -- energy ------------------------------------------------------------

    def action_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        X = Z.reshape(Z.shape[0], self.n_loop, self.m_dim)
        D = self._segments(X)
        kinetic = 0.5 * self.n_loop * np.einsum("bjm,bjm->b", D, D)
        pot = self.potential.value(self.t_grid, X).sum(axis=1) / self.n_loop
        return kinetic - pot

    def potential_force(self, X: np.ndarray) -> np.ndarray:
        """grad_q V at every sample; X has shape (B, N, m)."""
        return self.potential.grad(self.t_grid, X)

    def grad_many(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        B = Z.shape[0]
        X = Z.reshape(B, self.n_loop, self.m_dim)
        N2 = float(self.n_loop) ** 2
        D2 = np.roll(X, -1, axis=1) - 2.0 * X + np.roll(X, 1, axis=1)
        G = -N2 * D2 - self.potential_force(X)
        # closure x_N = x_0 + winding shifts the wrapped differences
        G[:, 0, :] += N2 * self.winding
        G[:, -1, :] -= N2 * self.winding
        return G.reshape(B, self.n_state)

    def hessian_raw(self, z):
        X = self.points(z)
        N2 = float(self.n_loop) ** 2
        A = np.kron(N2 * self.laplacian, np.eye(self.m_dim))
        HV = self.potential.hess(self.t_grid, X)  # (N, m, m)
        m = self.m_dim
        for j in range(self.n_loop):
            A[j * m : (j + 1) * m, j * m : (j + 1) * m] -= HV[j]
        return A

    # -- metric ------------------------------------------------------------

    def metric_weight(self) -> float:
        return 1.0 / self.n_loop

    # -- stiff splitting for the semi-implicit stepper ---------------------

    def stiff_solver(self, h: float) -> np.ndarray:
        """(I + h N^2 L)^{-1}, cached per step size."""
        key = float(h)
        M = self._stiff_cache.get(key)
        if M is None:
            N2 = float(self.n_loop) ** 2
            M = np.linalg.inv(np.eye(self.n_loop) + key * N2 * self.laplacian)
            self._stiff_cache[key] = M
        return M

    def explicit_rhs(self, X: np.ndarray) -> np.ndarray:
        """Non-stiff part of -grad S on (B, N, m) sample stacks."""
        R = self.potential_force(X).copy()
        N2 = float(self.n_loop) ** 2
        R[:, 0, :] -= N2 * self.winding
        R[:, -1, :] += N2 * self.winding
        return R

    # -- geometry ----------------------------------------------------------

    def box(self):
        b = np.empty((self.n_state, 2))
        b[:, 0] = -self._boxw
        b[:, 1] = self._boxw
        return b

    def periodic_components(self):
        if self.manifold == "euclidean":
            return np.zeros(self.m_dim, dtype=bool)
        return np.ones(self.m_dim, dtype=bool)

    def canonicalize(self, z):
        X = self.points(z).copy()
        shift = np.zeros(self.m_dim, dtype=np.int64)
        per = self.periodic_components()
        for a in range(self.m_dim):
            if per[a]:
                shift[a] = math.floor(X[:, a].mean())
                X[:, a] -= shift[a]
        return self.flatten(X), shift

    def state_distance(self, z1, z2):
        D = self.points(z1) - self.points(z2)
        per = self.periodic_components()
        total = 0.0
        for a in range(self.m_dim):
            col = D[:, a]
            if per[a]:
                mid = 0.5 * (col.max() + col.min())
                best = math.inf
                for s in (math.floor(mid), math.ceil(mid)):
                    best = min(best, float(np.max(np.abs(col - s))))
            else:
                best = float(np.max(np.abs(col)))
            total = max(total, best)
        return total

    def translate(self, z, shift):
        shift = np.asarray(shift, dtype=np.int64)
        if shift.shape != (self.m_dim,):
            raise InvalidState("deck shift must have one entry per loop component")
        per = self.periodic_components()
        if np.any(shift[~per] != 0):
            raise InvalidState("nonzero deck shift on a non-periodic component")
        X = self.points(z) + shift.astype(np.float64)
        return self.flatten(X)

    def chart_shift(self, z, ref):
        D = self.points(z) - self.points(ref)
        per = self.periodic_components()
        shift = np.zeros(self.m_dim, dtype=np.int64)
        for a in range(self.m_dim):
            if per[a]:
                shift[a] = int(round(float(D[:, a].mean())))
        resid = float(np.max(np.abs(D - shift.astype(np.float64))))
        return shift, resid

    def kernel_spec(self):
        b = self.box()
        return KernelSpec(
            kind=KERNEL_LOOP,
            n_state=self.n_state,
            is_loop=True,
            pa=np.zeros(0),
            pb=np.zeros(0),
            n_loop=self.n_loop,
            m_dim=self.m_dim,
            winding=self.winding.astype(np.float64),
            terms=self.potential.table(),
            box_lo=b[:, 0].copy(),
            box_hi=b[:, 1].copy(),
        )


# ---------------------------------------------------------------------------
# Sobolev-style discrete norms (deviation measures for graph-map checks)
# ---------------------------------------------------------------------------


def norm_w12(sys: ModelSystem, u: np.ndarray) -> float:
    """Discrete W^{1,2} norm for loops; Euclidean norm for analytic systems."""
    u = np.asarray(u, dtype=np.float64)
    if not sys.is_loop:
        return float(np.linalg.norm(u))
    U = u.reshape(sys.n_loop, sys.m_dim)
    DU = (np.roll(U, -1, axis=0) - U) * sys.n_loop  # forward difference velocity
    w = 1.0 / sys.n_loop
    return math.sqrt(w * float(np.sum(U * U)) + w * float(np.sum(DU * DU)))


def norm_w14(sys: ModelSystem, u: np.ndarray) -> float:
    """Discrete W^{1,4} norm for loops; max-norm for analytic systems."""
    u = np.asarray(u, dtype=np.float64)
    if not sys.is_loop:
        return float(np.max(np.abs(u))) if u.size else 0.0
    U = u.reshape(sys.n_loop, sys.m_dim)
    DU = (np.roll(U, -1, axis=0) - U) * sys.n_loop
    w = 1.0 / sys.n_loop
    q4 = w * float(np.sum(np.sum(U * U, axis=1) ** 2))
    d4 = w * float(np.sum(np.sum(DU * DU, axis=1) ** 2))
    return (q4 + d4) ** 0.25


# ---------------------------------------------------------------------------
# factory
# ---------------------------------------------------------------------------


def make_system(kind: str, **params) -> ModelSystem:
    """Build one of the bundled systems by name.

    Analytic: double_well, saddle3d, quadratic_well, linear_diag,
    cubic_saddle, coupled_saddle.  Loops: pendulum_circle, locked_circle,
    torus_wells.
    """
    if kind == "double_well":
        return SeparablePolynomialSystem([1.0, 0.0], [-2.0, 1.0], 1.0, name="double_well")
    if kind == "saddle3d":
        return SeparablePolynomialSystem(
            [1.0, 1.0, 0.0], [-2.0, -2.0, 1.0], 2.0, name="saddle3d"
        )
    if kind == "quadratic_well":
        n = int(params.get("dim", 2))
        return SeparablePolynomialSystem(
            np.zeros(n), 0.5 * np.ones(n), 0.0, name=f"quadratic_well{n}"
        )
    if kind == "linear_diag":
        spec = np.asarray(params.get("spectrum", [-1.0, 2.0]), dtype=np.float64)
        if np.any(np.abs(spec) < 1e-12):
            raise ConfigError("linear_diag spectrum must avoid zero")
        return SeparablePolynomialSystem(
            np.zeros(spec.size), 0.5 * spec, 0.0, name="linear_diag"
        )
    if kind == "cubic_saddle":
        mu_hat = float(params.get("mu_hat", 2.0))
        return SeparablePolynomialSystem(
            [0.25, 0.0], [-0.5, 0.5 * mu_hat], 0.0, name="cubic_saddle"
        )
    if kind == "coupled_saddle":
        return CoupledSaddleSystem(
            mu_hat=float(params.get("mu_hat", 2.0)),
            beta=float(params.get("beta", 0.2)),
        )
    if kind == "pendulum_circle":
        kappa = float(params.get("kappa", 0.5))
        n = int(params.get("n_segments", 16))
        winding = params.get("winding", [0])
        pot = Potential(1, [FourierTerm(kappa, (1,))])
        return LoopSystem("circle", pot, n, winding, name="pendulum_circle")
    if kind == "locked_circle":
        # pendulum plus a unit-speed traveling wave; cos(2 pi (q - t)) is
        # split into its cos/sin product terms
        kappa = float(params.get("kappa", 0.3))
        lock = float(params.get("kappa_lock", 0.15))
        n = int(params.get("n_segments", 16))
        winding = params.get("winding", [1])
        pot = Potential(
            1,
            [
                FourierTerm(kappa, (1,)),
                FourierTerm(lock, (1,), t_order=1, t_kind=KIND_COS, q_kind=KIND_COS),
                FourierTerm(lock, (1,), t_order=1, t_kind=KIND_SIN, q_kind=KIND_SIN),
            ],
        )
        return LoopSystem("circle", pot, n, winding, name="locked_circle")
    if kind == "torus_wells":
        k1 = float(params.get("kappa1", 0.4))
        k2 = float(params.get("kappa2", 0.3))
        n = int(params.get("n_segments", 16))
        winding = params.get("winding", [0, 0])
        pot = Potential(2, [FourierTerm(k1, (1, 0)), FourierTerm(k2, (0, 1))])
        return LoopSystem("torus", pot, n, winding, name="torus_wells")
    raise ConfigError(f"unknown system kind {kind!r}")
