# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Glauber kernels; ``_pykernels`` is the reference twin."""

from libc.math cimport exp, INFINITY


cdef inline bint _try_move(
    long long[:, ::1] heights, const long long[::1] floor, const long long[::1] ceil,
    const double[::1] logp, long long min_off, const double[::1] coef,
    long long K, long long X, long long s, double u, double* dlw,
) noexcept nogil:
    cdef Py_ssize_t n = heights.shape[0]
    cdef long long span = logp.shape[0]
    cdef long long x = heights[K, X]
    cdef long long y = x + s
    cdef long long left, right, k1, k2
    cdef double lp1, lp2, logr, r
    if K > 0 and y > heights[K - 1, X]:
        return 0
    if K < n - 1 and y < heights[K + 1, X]:
        return 0
    if y < floor[X]:
        return 0
    if K == 0 and y > ceil[X]:
        return 0
    left = heights[K, X - 1]
    right = heights[K, X + 1]
    k1 = y - left - min_off
    k2 = right - y - min_off
    if k1 < 0 or k1 >= span or k2 < 0 or k2 >= span:
        return 0
    lp1 = logp[k1]
    lp2 = logp[k2]
    if lp1 == -INFINITY or lp2 == -INFINITY:
        return 0
    logr = (lp1 + lp2) - (logp[x - left - min_off] + logp[right - x - min_off]) - s * coef[K]
    r = exp(logr)
    if u <= r:
        heights[K, X] = y
        dlw[0] += logr
        return 1
    return 0


def glauber_steps(
    long long[:, ::1] heights,
    const long long[::1] floor,
    const long long[::1] ceil,
    const double[::1] logp,
    long long min_off,
    const double[::1] coef,
    const long long[::1] codes,
    const double[::1] uniforms,
    long long interior,
    long long record_every,
    int[:, :, ::1] out,
):
    """Apply ``len(codes)`` proposals in place; snapshot every ``record_every`` steps.

    Returns ``(accepted, summed log-ratio of accepted moves)``.
    """
    cdef Py_ssize_t t, count = codes.shape[0], n = heights.shape[0], L = heights.shape[1]
    cdef Py_ssize_t rec = 0, i, j
    cdef long long code, two_m = 2 * interior, rem, K, X, s
    cdef long long accepted = 0
    cdef double dlw = 0.0
    with nogil:
        for t in range(count):
            code = codes[t]
            K = code // two_m
            rem = code - K * two_m
            X = 1 + (rem >> 1)
            s = 1 - 2 * (rem & 1)
            accepted += _try_move(heights, floor, ceil, logp, min_off, coef, K, X, s, uniforms[t], &dlw)
            if record_every > 0 and (t + 1) % record_every == 0:
                for i in range(n):
                    for j in range(L):
                        out[rec, i, j] = <int> heights[i, j]
                rec += 1
    return accepted, dlw


def coupled_steps(
    long long[:, ::1] up,
    long long[:, ::1] down,
    const long long[::1] floor_up,
    const long long[::1] ceil_up,
    const long long[::1] floor_down,
    const long long[::1] ceil_down,
    const double[::1] logp,
    long long min_off,
    const double[::1] coef_up,
    const double[::1] coef_down,
    const long long[::1] codes,
    const double[::1] uniforms,
    long long interior,
    long long violating,
):
    """Drive two chains with one proposal stream.

    ``violating`` is the current number of sites with ``down > up``. Returns
    ``(accepted_up, accepted_down, dlw_up, dlw_down, violation_total, violating)``
    where ``violation_total`` sums the violating-site count after every step.
    """
    cdef Py_ssize_t t, count = codes.shape[0]
    cdef long long code, two_m = 2 * interior, rem, K, X, s
    cdef long long acc_up = 0, acc_down = 0, total = 0
    cdef bint before, after
    cdef double dlw_up = 0.0, dlw_down = 0.0
    with nogil:
        for t in range(count):
            code = codes[t]
            K = code // two_m
            rem = code - K * two_m
            X = 1 + (rem >> 1)
            s = 1 - 2 * (rem & 1)
            before = down[K, X] > up[K, X]
            acc_up += _try_move(up, floor_up, ceil_up, logp, min_off, coef_up, K, X, s, uniforms[t], &dlw_up)
            acc_down += _try_move(down, floor_down, ceil_down, logp, min_off, coef_down, K, X, s, uniforms[t], &dlw_down)
            after = down[K, X] > up[K, X]
            violating += <long long> after - <long long> before
            total += violating
    return acc_up, acc_down, dlw_up, dlw_down, total, violating
