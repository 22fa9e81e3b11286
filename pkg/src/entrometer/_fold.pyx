# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Sequential staleness-aware EWMA fold (compiled hot path).

Semantics are defined by the reference implementation in ``_fold_py.py``;
the two must produce identical output (cross-checked in the test suite).
"""

from libc.math cimport erf, expm1, fabs, floor, sqrt, pi

# Flag codes (shared with _fold_py / volstale).
DEF KEPT = 0
DEF RETAINED_ZERO = 1
DEF STALE_FLAGGED = 2
DEF MISSING_SRC = 3
DEF AGG_FLAGGED = 4


def staleness_fold(double[::1] ret,
                   unsigned char[::1] miss,
                   double[::1] price_ff,
                   double alpha,
                   double mu1,
                   double tick,
                   double sqrt2dt,
                   bint filter_zeros,
                   bint squared_mode,
                   Py_ssize_t start,
                   double[::1] sigma_out,
                   double[::1] p_out,
                   double[::1] z_out,
                   long long[::1] nsave_out,
                   signed char[::1] flags_out):
    cdef Py_ssize_t n = ret.shape[0]
    cdef Py_ssize_t k
    cdef double sigma = fabs(ret[start]) / mu1
    cdef double z = 0.0
    cdef long long nsave = 0
    cdef long long n0 = 0
    cdef long long prev_floor = 0
    cdef long long zf
    cdef double one_m_a = 1.0 - alpha
    cdef double a_over_mu1 = alpha / mu1
    cdef double sqrtpi = sqrt(pi)
    cdef double rt, sig_prev, proxy, r_ratio, p
    cdef signed char flag

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
            p = erf(r_ratio) + expm1(-r_ratio * r_ratio) / (r_ratio * sqrtpi)
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
            zf = <long long>floor(z)
            if zf > prev_floor:
                nsave += zf - prev_floor
                prev_floor = zf
        z_out[k] = z
        nsave_out[k] = nsave
        flags_out[k] = flag


def variance_path(double[::1] eps, double omega, double a1, double a2,
                  double b, double[::1] sigma2_out):
    """ARCH/GARCH conditional-variance recursion seeded at the
    unconditional variance (pre-sample shocks set to it as well)."""
    cdef Py_ssize_t n = eps.shape[0]
    cdef Py_ssize_t t
    cdef double uncond = omega / (1.0 - a1 - a2 - b)
    cdef double u2_prev = uncond
    cdef double u2_prev2 = uncond
    cdef double s2_prev = uncond
    cdef double s2, u
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
