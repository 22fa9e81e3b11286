"""Pure-Python reference for the staleness-aware EWMA fold.

This is the semantic definition of the recursion; the Cython module
``_fold.pyx`` is a line-for-line transcription for speed.  Both are kept
because the compiled path must reproduce this one bit-for-bit.
"""

import math

KEPT = 0
RETAINED_ZERO = 1
STALE_FLAGGED = 2
MISSING_SRC = 3
AGG_FLAGGED = 4
LEADING_STRIPPED = 5

_SQRT_PI = math.sqrt(math.pi)


def staleness_fold(ret, miss, price_ff, alpha, mu1, tick, sqrt2dt,
                   filter_zeros, squared_mode, start,
                   sigma_out, p_out, z_out, nsave_out, flags_out):
    """Run the sequential volatility/staleness recursion in place.

    Per slot k >= start: the entering sigma predicts ret[k]; the branch on
    (missing / zero / non-zero) updates sigma and the missing-run length
    n0; the rounding-zero probability computed from the entering sigma and
    the end-of-slot price accumulates into z for every kept one-step
    return (including retained zeros), and n_save grows when floor(z)
    advances.
    """
    n = len(ret)
    erf = math.erf
    expm1 = math.expm1
    floor = math.floor
    sqrt = math.sqrt
    fabs = math.fabs

    sigma = fabs(ret[start]) / mu1
    z = 0.0
    nsave = 0
    n0 = 0
    prev_floor = 0
    one_m_a = 1.0 - alpha
    a_over_mu1 = alpha / mu1

    for k in range(start, n):
        sig_prev = sigma
        sigma_out[k] = sig_prev
        if miss[k]:
            n0 += 1
            flag = MISSING_SRC
        else:
            rt = ret[k]
            if rt == 0.0 and filter_zeros:
                if nsave > 0 and n0 == 0:
                    nsave -= 1
                    flag = RETAINED_ZERO
                    if squared_mode:
                        sigma = sqrt(one_m_a * sigma * sigma)
                    else:
                        sigma = one_m_a * sigma
                else:
                    n0 += 1
                    flag = STALE_FLAGGED
            else:
                proxy = rt / sqrt(n0 + 1.0)
                if squared_mode:
                    sigma = sqrt(alpha * proxy * proxy + one_m_a * sigma * sigma)
                else:
                    sigma = a_over_mu1 * fabs(proxy) + one_m_a * sigma
                flag = AGG_FLAGGED if n0 > 0 else KEPT
                n0 = 0
        r_ratio = tick / (price_ff[k] * sig_prev * sqrt2dt)
        if r_ratio > 0.0:
            p = erf(r_ratio) + expm1(-r_ratio * r_ratio) / (r_ratio * _SQRT_PI)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
        else:
            p = 0.0
        p_out[k] = p
        # Only one-step observed returns feed the zero budget: post-gap
        # aggregates are set missing and their p is not a one-step
        # rounding probability.
        if flag == KEPT or flag == RETAINED_ZERO:
            z += p
            zf = floor(z)
            if zf > prev_floor:
                nsave += zf - prev_floor
                prev_floor = zf
        z_out[k] = z
        nsave_out[k] = nsave
        flags_out[k] = flag


def variance_path(eps, omega, a1, a2, b, sigma2_out):
    """ARCH/GARCH conditional-variance recursion seeded at the
    unconditional variance (pre-sample shocks set to it as well)."""
    n = len(eps)
    sqrt = math.sqrt
    uncond = omega / (1.0 - a1 - a2 - b)
    u2_prev = uncond
    u2_prev2 = uncond
    s2_prev = uncond
    for t in range(n):
        if t == 0:
            s2 = uncond
        else:
            s2 = omega + a1 * u2_prev + a2 * u2_prev2 + b * s2_prev
        sigma2_out[t] = s2
        u = sqrt(s2) * eps[t]
        u2_prev2 = u2_prev
        u2_prev = u * u
        s2_prev = s2
