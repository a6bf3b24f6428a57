"""Pure-numpy stepping backend.

Same contract as the compiled module `flowcore`: batched fixed-step
integration of dz/ds = -grad S(z) built directly from a KernelSpec, with
per-row early exit.  Rows evolve independently, so results are identical
for any batch split.

Status codes per row: 0 = ran the full step count, 1 = settled early
(metric gradient norm below tolerance), 2 = escaped the bounding box or
went non-finite (the returned row holds the last checkpoint snapshot).
"""

from __future__ import annotations

import math

import numpy as np

from ..model import (
    KERNEL_COUPLED_SADDLE,
    KERNEL_LOOP,
    KERNEL_SEP_POLY,
    KernelSpec,
)

BACKEND = "python"

STATUS_RAN = 0
STATUS_SETTLED = 1
STATUS_ESCAPED = 2

_TWO_PI = 2.0 * math.pi


def _loop_tables(spec: KernelSpec):
    N = spec.n_loop
    t = np.arange(N, dtype=np.float64) / N
    terms = spec.terms
    n_terms = terms.shape[0]
    m = spec.m_dim
    tt = np.empty((n_terms, N))
    waves = np.empty((n_terms, m))
    coefs = np.empty(n_terms)
    qkind = np.empty(n_terms, dtype=np.int64)
    for i in range(n_terms):
        coef, t_order, t_kind, q_kind = terms[i, :4]
        u = _TWO_PI * t_order * t
        tt[i] = np.cos(u) if int(t_kind) == 0 else np.sin(u)
        waves[i] = terms[i, 4:]
        coefs[i] = coef
        qkind[i] = int(q_kind)
    return tt, waves, coefs, qkind


def grad_batch(spec: KernelSpec, Z: np.ndarray) -> np.ndarray:
    """Metric gradient of the action for a (B, n) stack of states."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if spec.kind == KERNEL_SEP_POLY:
        return Z * (4.0 * spec.pa * Z * Z + 2.0 * spec.pb)
    if spec.kind == KERNEL_COUPLED_SADDLE:
        mu_hat, beta = spec.pa
        x, y = Z[:, 0], Z[:, 1]
        G = np.empty_like(Z)
        G[:, 0] = -x + x ** 3 + 2.0 * beta * x * y
        G[:, 1] = mu_hat * y + beta * x * x
        return G
    if spec.kind == KERNEL_LOOP:
        tt, waves, coefs, qkind = _loop_tables(spec)
        return _loop_grad(spec, Z, tt, waves, coefs, qkind)
    raise ValueError(f"unknown kernel kind {spec.kind}")


def _loop_grad(spec, Z, tt, waves, coefs, qkind):
    B = Z.shape[0]
    N, m = spec.n_loop, spec.m_dim
    X = Z.reshape(B, N, m)
    N2 = float(N) ** 2
    D2 = np.roll(X, -1, axis=1) - 2.0 * X + np.roll(X, 1, axis=1)
    G = -N2 * D2
    for i in range(coefs.size):
        u = _TWO_PI * (X @ waves[i])
        dq = -np.sin(u) if qkind[i] == 0 else np.cos(u)
        G -= (coefs[i] * _TWO_PI) * (tt[i] * dq)[..., None] * waves[i]
    G[:, 0, :] += N2 * spec.winding
    G[:, -1, :] -= N2 * spec.winding
    return G.reshape(B, N * m)


def _metric_grad_norms(spec: KernelSpec, G: np.ndarray) -> np.ndarray:
    w = 1.0 / spec.n_loop if spec.is_loop else 1.0
    return np.sqrt(w * np.einsum("bi,bi->b", G, G))


def _bad_rows(spec: KernelSpec, Z: np.ndarray) -> np.ndarray:
    bad = ~np.all(np.isfinite(Z), axis=1)
    bad |= np.any(Z < spec.box_lo, axis=1) | np.any(Z > spec.box_hi, axis=1)
    return bad


def flow_batch(
    spec: KernelSpec,
    Z: np.ndarray,
    n_steps: int,
    h: float,
    scheme: int,
    stiff_m: np.ndarray | None,
    settle_tol: float,
    check_every: int = 16,
):
    """Integrate every row of Z for n_steps steps of size h.

    scheme 0 = classical RK4, scheme 1 = semi-implicit Euler (loop systems
    only; stiff_m must hold (I + h N^2 L)^{-1}).
    """
    Z = np.array(Z, dtype=np.float64, order="C", copy=True)
    B = Z.shape[0]
    status = np.zeros(B, dtype=np.int8)
    steps = np.zeros(B, dtype=np.int64)
    if n_steps <= 0 or B == 0:
        return Z, status, steps

    if scheme == 1:
        if spec.kind != KERNEL_LOOP or stiff_m is None:
            raise ValueError("semi-implicit scheme needs a loop system and stiff_m")
        tt, waves, coefs, qkind = _loop_tables(spec)
        N, m = spec.n_loop, spec.m_dim
        N2 = float(N) ** 2

        def advance(Za, k):
            X = Za.reshape(Za.shape[0], N, m)
            for _ in range(k):
                R = np.zeros_like(X)
                for i in range(coefs.size):
                    u = _TWO_PI * (X @ waves[i])
                    dq = -np.sin(u) if qkind[i] == 0 else np.cos(u)
                    R += (coefs[i] * _TWO_PI) * (tt[i] * dq)[..., None] * waves[i]
                R[:, 0, :] -= N2 * spec.winding
                R[:, -1, :] += N2 * spec.winding
                X = np.einsum("ij,bjm->bim", stiff_m, X + h * R)
            return X.reshape(Za.shape)

    elif scheme == 0:

        def advance(Za, k):
            for _ in range(k):
                k1 = -grad_batch(spec, Za)
                k2 = -grad_batch(spec, Za + (0.5 * h) * k1)
                k3 = -grad_batch(spec, Za + (0.5 * h) * k2)
                k4 = -grad_batch(spec, Za + h * k3)
                Za = Za + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            return Za

    else:
        raise ValueError(f"unknown scheme {scheme}")

    active = np.arange(B)
    Za = Z.copy()
    done = 0
    while done < n_steps and active.size:
        k = min(check_every, n_steps - done)
        snapshot = Za.copy()
        Za = advance(Za, k)
        done += k

        bad = _bad_rows(spec, Za)
        if np.any(bad):
            rows = active[bad]
            Z[rows] = snapshot[bad]  # keep the last finite checkpoint
            status[rows] = STATUS_ESCAPED
            steps[rows] = done - k
            keep = ~bad
            active, Za = active[keep], Za[keep]
            if not active.size:
                break

        if settle_tol > 0.0 and active.size:
            gn = _metric_grad_norms(spec, grad_batch(spec, Za))
            settled = gn < settle_tol
            if np.any(settled):
                rows = active[settled]
                Z[rows] = Za[settled]
                status[rows] = STATUS_SETTLED
                steps[rows] = done
                keep = ~settled
                active, Za = active[keep], Za[keep]

    if active.size:
        Z[active] = Za
        steps[active] = n_steps
    return Z, status, steps
