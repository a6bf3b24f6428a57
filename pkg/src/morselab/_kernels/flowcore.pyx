# cython: language_level=3
"""Compiled stepping backend.

Mirrors the contract of `flowpy`: batched fixed-step integration of
dz/ds = -grad S(z) from a KernelSpec, per-row early exit, identical
status codes.  Rows are processed sequentially under nogil; callers
parallelize by chunking the batch.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

cnp.import_array()

BACKEND = "compiled"

STATUS_RAN = 0
STATUS_SETTLED = 1
STATUS_ESCAPED = 2

cdef double TWO_PI = 6.283185307179586476925286766559

cdef int KIND_SEP_POLY = 0
cdef int KIND_COUPLED = 1
cdef int KIND_LOOP = 2


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _grad(int kind, int n, double[::1] pa, double[::1] pb,
                int N, int m, double[::1] wind,
                int n_terms, double[:, ::1] tt, double[:, ::1] waves,
                double[::1] coefs, long[::1] qkind,
                double* z, double* g) noexcept nogil:
    cdef int i, j, a, jp, jm
    cdef double x, u, dq, s, N2, d2
    if kind == KIND_SEP_POLY:
        for i in range(n):
            x = z[i]
            g[i] = x * (4.0 * pa[i] * x * x + 2.0 * pb[i])
        return
    if kind == KIND_COUPLED:
        # pa = (mu_hat, beta)
        g[0] = -z[0] + z[0] * z[0] * z[0] + 2.0 * pa[1] * z[0] * z[1]
        g[1] = pa[0] * z[1] + pa[1] * z[0] * z[0]
        return
    # loop system
    N2 = (<double> N) * (<double> N)
    for j in range(N):
        jp = j + 1 if j + 1 < N else 0
        jm = j - 1 if j >= 1 else N - 1
        for a in range(m):
            d2 = z[jp * m + a] - 2.0 * z[j * m + a] + z[jm * m + a]
            g[j * m + a] = -N2 * d2
    for a in range(m):
        g[a] += N2 * wind[a]
        g[(N - 1) * m + a] -= N2 * wind[a]
    for i in range(n_terms):
        for j in range(N):
            u = 0.0
            for a in range(m):
                u += waves[i, a] * z[j * m + a]
            u *= TWO_PI
            dq = -sin(u) if qkind[i] == 0 else cos(u)
            s = coefs[i] * TWO_PI * tt[i, j] * dq
            for a in range(m):
                g[j * m + a] -= s * waves[i, a]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _explicit_rhs(int N, int m, double[::1] wind,
                        int n_terms, double[:, ::1] tt, double[:, ::1] waves,
                        double[::1] coefs, long[::1] qkind,
                        double* z, double* r) noexcept nogil:
    # non-stiff part of -grad S: potential force plus winding offsets
    cdef int i, j, a
    cdef double u, dq, s, N2
    N2 = (<double> N) * (<double> N)
    for j in range(N * m):
        r[j] = 0.0
    for i in range(n_terms):
        for j in range(N):
            u = 0.0
            for a in range(m):
                u += waves[i, a] * z[j * m + a]
            u *= TWO_PI
            dq = -sin(u) if qkind[i] == 0 else cos(u)
            s = coefs[i] * TWO_PI * tt[i, j] * dq
            for a in range(m):
                r[j * m + a] += s * waves[i, a]
    for a in range(m):
        r[a] -= N2 * wind[a]
        r[(N - 1) * m + a] += N2 * wind[a]


def grad_batch(spec, Z):
    """Metric gradient of the action for a (B, n) stack of states."""
    cdef cnp.ndarray[double, ndim=2] Zc = np.ascontiguousarray(Z, dtype=np.float64)
    cdef int B = Zc.shape[0]
    cdef int n = Zc.shape[1]
    cdef cnp.ndarray[double, ndim=2] G = np.empty_like(Zc)
    cdef int kind = spec.kind
    cdef int N = spec.n_loop
    cdef int m = spec.m_dim
    cdef double[::1] pa = np.ascontiguousarray(spec.pa, dtype=np.float64)
    cdef double[::1] pb = np.ascontiguousarray(spec.pb, dtype=np.float64)
    cdef double[::1] wind = np.ascontiguousarray(spec.winding, dtype=np.float64)
    tt_np, waves_np, coefs_np, qkind_np = _loop_tables_py(spec)
    cdef double[:, ::1] tt = tt_np
    cdef double[:, ::1] waves = waves_np
    cdef double[::1] coefs = coefs_np
    cdef long[::1] qkind = qkind_np
    cdef int n_terms = coefs_np.shape[0]
    cdef int b
    with nogil:
        for b in range(B):
            _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves, coefs, qkind,
                  &Zc[b, 0], &G[b, 0])
    return G


def _loop_tables_py(spec):
    N = max(int(spec.n_loop), 1)
    t = np.arange(N, dtype=np.float64) / N
    terms = np.asarray(spec.terms, dtype=np.float64)
    n_terms = terms.shape[0]
    m = max(int(spec.m_dim), 1)
    tt = np.zeros((max(n_terms, 1), N))
    waves = np.zeros((max(n_terms, 1), m))
    coefs = np.zeros(max(n_terms, 1))
    qkind = np.zeros(max(n_terms, 1), dtype=np.int64)
    for i in range(n_terms):
        coef, t_order, t_kind, q_kind = terms[i, :4]
        u = TWO_PI * t_order * t
        tt[i] = np.cos(u) if int(t_kind) == 0 else np.sin(u)
        waves[i] = terms[i, 4:]
        coefs[i] = coef
        qkind[i] = int(q_kind)
    if n_terms == 0:
        tt = tt[:0]
        waves = waves[:0]
        coefs = coefs[:0]
        qkind = qkind[:0]
    return (np.ascontiguousarray(tt), np.ascontiguousarray(waves),
            np.ascontiguousarray(coefs), np.ascontiguousarray(qkind))


@cython.boundscheck(False)
@cython.wraparound(False)
def flow_batch(spec, Z, int n_steps, double h, int scheme, stiff_m,
               double settle_tol, int check_every=16):
    """Integrate every row of Z for n_steps steps of size h.

    scheme 0 = classical RK4, scheme 1 = semi-implicit Euler (loop systems
    only; stiff_m must hold (I + h N^2 L)^{-1}).
    """
    cdef cnp.ndarray[double, ndim=2] Zc = np.array(Z, dtype=np.float64, order="C", copy=True)
    cdef int B = Zc.shape[0]
    cdef int n = Zc.shape[1]
    cdef cnp.ndarray[cnp.int8_t, ndim=1] status = np.zeros(B, dtype=np.int8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] steps = np.zeros(B, dtype=np.int64)
    if n_steps <= 0 or B == 0:
        return Zc, status, steps
    if check_every <= 0:
        check_every = 16

    cdef int kind = spec.kind
    cdef int is_loop = 1 if spec.is_loop else 0
    cdef int N = spec.n_loop
    cdef int m = spec.m_dim
    cdef double[::1] pa = np.ascontiguousarray(spec.pa, dtype=np.float64)
    cdef double[::1] pb = np.ascontiguousarray(spec.pb, dtype=np.float64)
    cdef double[::1] wind = np.ascontiguousarray(spec.winding, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(spec.box_lo, dtype=np.float64)
    cdef double[::1] hi = np.ascontiguousarray(spec.box_hi, dtype=np.float64)
    tt_np, waves_np, coefs_np, qkind_np = _loop_tables_py(spec)
    cdef double[:, ::1] tt = tt_np
    cdef double[:, ::1] waves = waves_np
    cdef double[::1] coefs = coefs_np
    cdef long[::1] qkind = qkind_np
    cdef int n_terms = coefs_np.shape[0]

    cdef double[:, ::1] M
    if scheme == 1:
        if kind != KIND_LOOP or stiff_m is None:
            raise ValueError("semi-implicit scheme needs a loop system and stiff_m")
        M = np.ascontiguousarray(stiff_m, dtype=np.float64)
    elif scheme == 0:
        M = np.zeros((1, 1))
    else:
        raise ValueError(f"unknown scheme {scheme}")

    cdef cnp.ndarray[double, ndim=1] snap = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] g = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] k1 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] k2 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] k3 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] k4 = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] zt = np.empty(n)
    cdef double* psnap = &snap[0]
    cdef double* pg = &g[0]
    cdef double* pk1 = &k1[0]
    cdef double* pk2 = &k2[0]
    cdef double* pk3 = &k3[0]
    cdef double* pk4 = &k4[0]
    cdef double* pzt = &zt[0]

    cdef double w_metric = 1.0 / N if is_loop else 1.0
    cdef int b, i, j, a, kseg, done, broke
    cdef double* z
    cdef double gn2, x, acc
    cdef int bad

    with nogil:
        for b in range(B):
            z = &Zc[b, 0]
            done = 0
            broke = 0
            while done < n_steps:
                kseg = check_every
                if n_steps - done < kseg:
                    kseg = n_steps - done
                for i in range(n):
                    psnap[i] = z[i]
                for j in range(kseg):
                    if scheme == 0:
                        _rk4_step(kind, n, pa, pb, N, m, wind, n_terms, tt, waves,
                                  coefs, qkind, h, z, pk1, pk2, pk3, pk4, pzt)
                    else:
                        _imex_step(N, m, wind, n_terms, tt, waves, coefs, qkind,
                                   h, M, z, pk1, pzt)
                done += kseg
                bad = 0
                for i in range(n):
                    x = z[i]
                    if not (x == x) or x < lo[i] or x > hi[i]:
                        bad = 1
                        break
                if bad:
                    for i in range(n):
                        z[i] = psnap[i]  # keep the last finite checkpoint
                    status[b] = 2
                    steps[b] = done - kseg
                    broke = 1
                    break
                if settle_tol > 0.0:
                    _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves,
                          coefs, qkind, z, pg)
                    gn2 = 0.0
                    for i in range(n):
                        gn2 += pg[i] * pg[i]
                    if sqrt(w_metric * gn2) < settle_tol:
                        status[b] = 1
                        steps[b] = done
                        broke = 1
                        break
            if not broke:
                steps[b] = n_steps
    return Zc, status, steps


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _rk4_step(int kind, int n, double[::1] pa, double[::1] pb,
                    int N, int m, double[::1] wind,
                    int n_terms, double[:, ::1] tt, double[:, ::1] waves,
                    double[::1] coefs, long[::1] qkind, double h,
                    double* z, double* k1, double* k2, double* k3, double* k4,
                    double* zt) noexcept nogil:
    cdef int i
    _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves, coefs, qkind, z, k1)
    for i in range(n):
        zt[i] = z[i] - 0.5 * h * k1[i]
    _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves, coefs, qkind, zt, k2)
    for i in range(n):
        zt[i] = z[i] - 0.5 * h * k2[i]
    _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves, coefs, qkind, zt, k3)
    for i in range(n):
        zt[i] = z[i] - h * k3[i]
    _grad(kind, n, pa, pb, N, m, wind, n_terms, tt, waves, coefs, qkind, zt, k4)
    for i in range(n):
        z[i] -= (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _imex_step(int N, int m, double[::1] wind,
                     int n_terms, double[:, ::1] tt, double[:, ::1] waves,
                     double[::1] coefs, long[::1] qkind, double h,
                     double[:, ::1] M, double* z, double* r, double* zt) noexcept nogil:
    cdef int i, j, a
    cdef double acc
    _explicit_rhs(N, m, wind, n_terms, tt, waves, coefs, qkind, z, r)
    for i in range(N * m):
        zt[i] = z[i] + h * r[i]
    # z <- (I + h N^2 L)^{-1} zt, applied per component column
    for j in range(N):
        for a in range(m):
            acc = 0.0
            for i in range(N):
                acc += M[j, i] * zt[i * m + a]
            z[j * m + a] = acc
