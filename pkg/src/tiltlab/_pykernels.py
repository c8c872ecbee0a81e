"""Pure-Python Glauber kernels.

Same signatures and the same floating-point operation order as the compiled
``_kernels`` module, so both produce bit-identical chains.
"""
from math import exp, inf


def _try_move(H, floor, ceil, logp, min_off, coef, K, X, s, u, n, span):
    row = H[K]
    x = row[X]
    y = x + s
    if K > 0 and y > H[K - 1][X]:
        return None
    if K < n - 1 and y < H[K + 1][X]:
        return None
    if y < floor[X]:
        return None
    if K == 0 and y > ceil[X]:
        return None
    left = row[X - 1]
    right = row[X + 1]
    k1 = y - left - min_off
    k2 = right - y - min_off
    if k1 < 0 or k1 >= span or k2 < 0 or k2 >= span:
        return None
    lp1 = logp[k1]
    lp2 = logp[k2]
    if lp1 == -inf or lp2 == -inf:
        return None
    logr = (lp1 + lp2) - (logp[x - left - min_off] + logp[right - x - min_off]) - s * coef[K]
    if u <= exp(logr):
        row[X] = y
        return logr
    return None


def glauber_steps(heights, floor, ceil, logp, min_off, coef, codes, uniforms, interior, record_every, out):
    n, L = heights.shape
    H = heights.tolist()
    floor_l, ceil_l, logp_l, coef_l = floor.tolist(), ceil.tolist(), logp.tolist(), coef.tolist()
    span = len(logp_l)
    two_m = 2 * interior
    accepted = 0
    dlw = 0.0
    rec = 0
    for t, (code, u) in enumerate(zip(codes.tolist(), uniforms.tolist())):
        K, rem = divmod(code, two_m)
        X = 1 + (rem >> 1)
        s = 1 - 2 * (rem & 1)
        logr = _try_move(H, floor_l, ceil_l, logp_l, min_off, coef_l, K, X, s, u, n, span)
        if logr is not None:
            accepted += 1
            dlw += logr
        if record_every > 0 and (t + 1) % record_every == 0:
            out[rec] = H
            rec += 1
    heights[...] = H
    return accepted, dlw


def coupled_steps(up, down, floor_up, ceil_up, floor_down, ceil_down, logp, min_off,
                  coef_up, coef_down, codes, uniforms, interior, violating):
    n, L = up.shape
    U, D = up.tolist(), down.tolist()
    fu, cu, fd, cd = floor_up.tolist(), ceil_up.tolist(), floor_down.tolist(), ceil_down.tolist()
    logp_l = logp.tolist()
    span = len(logp_l)
    k_up, k_down = coef_up.tolist(), coef_down.tolist()
    two_m = 2 * interior
    acc_up = acc_down = total = 0
    dlw_up = dlw_down = 0.0
    for code, u in zip(codes.tolist(), uniforms.tolist()):
        K, rem = divmod(code, two_m)
        X = 1 + (rem >> 1)
        s = 1 - 2 * (rem & 1)
        before = D[K][X] > U[K][X]
        r_up = _try_move(U, fu, cu, logp_l, min_off, k_up, K, X, s, u, n, span)
        if r_up is not None:
            acc_up += 1
            dlw_up += r_up
        r_down = _try_move(D, fd, cd, logp_l, min_off, k_down, K, X, s, u, n, span)
        if r_down is not None:
            acc_down += 1
            dlw_down += r_down
        after = D[K][X] > U[K][X]
        violating += after - before
        total += violating
    up[...] = U
    down[...] = D
    return acc_up, acc_down, dlw_up, dlw_down, total, violating
