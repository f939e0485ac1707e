# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot numerical kernels.

Twin of ``_kernels_py``: same names, signatures and arithmetic, so both
backends produce the same numbers from the same pre-drawn random arrays.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, sin, asin, fabs, INFINITY, nextafter
from scipy.special.cython_special cimport ndtr, ndtri_exp, log_ndtr

cnp.import_array()

cdef double TWO_PI = 6.283185307179586

cdef double[3] W6 = [0.1713244923791705, 0.3607615730481384, 0.4679139345726904]
cdef double[3] X6 = [0.9324695142031522, 0.6612093864662647, 0.2386191860831970]
cdef double[6] W12 = [0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                      0.2031674267230659, 0.2334925365383547, 0.2491470458134029]
cdef double[6] X12 = [0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                      0.5873179542866171, 0.3678314989981802, 0.1252334085114692]
cdef double[10] W20 = [0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                       0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                       0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                       0.1527533871307259]
cdef double[10] X20 = [0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                       0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                       0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                       0.07652652113349733]


cdef inline double _phi(double x) noexcept nogil:
    return ndtr(x)


cdef double _bvnu(double h, double k, double r) noexcept nogil:
    cdef double hk, hs, asr, sn, bvn, a_s, a, bs, c, d, b, sp, xs, rs, ep, lval, node, wt
    cdef int i, m, j
    cdef double *xw
    cdef double *ww
    if h == INFINITY or k == INFINITY:
        return 0.0
    if h == -INFINITY:
        if k == -INFINITY:
            return 1.0
        return _phi(-k)
    if k == -INFINITY:
        return _phi(-h)
    if fabs(r) < 1e-15:
        return _phi(-h) * _phi(-k)
    hk = h * k
    bvn = 0.0
    if fabs(r) < 0.925:
        if fabs(r) < 0.3:
            m = 3
            xw = X6
            ww = W6
        elif fabs(r) < 0.75:
            m = 6
            xw = X12
            ww = W12
        else:
            m = 10
            xw = X20
            ww = W20
        hs = (h * h + k * k) / 2.0
        asr = asin(r) / 2.0
        # node order matches the concatenated rule (1 - x then 1 + x)
        for j in range(2):
            for i in range(m):
                node = 1.0 - xw[i] if j == 0 else 1.0 + xw[i]
                sn = sin(asr * node)
                bvn += ww[i] * exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / TWO_PI + _phi(-h) * _phi(-k)
    else:
        if r < 0:
            k = -k
            hk = -hk
        if fabs(r) < 1.0:
            a_s = 1.0 - r * r
            a = sqrt(a_s)
            bs = (h - k) * (h - k)
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            asr = -(bs / a_s + hk) / 2.0
            if asr > -100.0:
                bvn = a * exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s)
            if hk > -100.0:
                b = sqrt(bs)
                sp = sqrt(TWO_PI) * _phi(-b / a)
                bvn = bvn - exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
            a = a / 2.0
            sp = 0.0
            for j in range(2):
                for i in range(10):
                    node = 1.0 - X20[i] if j == 0 else 1.0 + X20[i]
                    xs = (a * node) * (a * node)
                    asr = -(bs / xs + hk) / 2.0
                    if asr > -100.0:
                        rs = sqrt(1.0 - xs)
                        ep = exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs
                        sp += W20[i] * exp(asr) * ((1.0 + c * xs * (1.0 + 5.0 * d * xs)) - ep)
            bvn = (a * sp - bvn) / TWO_PI
        if r > 0:
            bvn = bvn + _phi(-(h if h > k else k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0:
                lval = _phi(k) - _phi(h)
            else:
                lval = _phi(-h) - _phi(-k)
            bvn = lval - bvn
    if bvn < 0.0:
        return 0.0
    if bvn > 1.0:
        return 1.0
    return bvn


def bvn_upper(h, k, r):
    """``P(X > h, Y > k)`` for a standard bivariate normal (Genz)."""
    hb, kb, rb = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, r)))
    shape = hb.shape
    cdef double[::1] hv = np.ascontiguousarray(hb).ravel()
    cdef double[::1] kv = np.ascontiguousarray(kb).ravel()
    cdef double[::1] rv = np.ascontiguousarray(rb).ravel()
    cdef Py_ssize_t n = hv.shape[0], i
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _bvnu(hv[i], kv[i], rv[i])
    return out.reshape(shape)


cdef inline bint _reflect(double lo, double hi) noexcept nogil:
    if (lo == INFINITY or lo == -INFINITY) and (hi == INFINITY or hi == -INFINITY):
        return False
    return lo + hi < 0


def rect_prob_std(a1, b1, a2, b2, r):
    """Rectangle probability with unit variances (see the Python twin)."""
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, b1, a2, b2, r)))
    shape = arrs[0].shape
    cdef double[::1] av1 = np.ascontiguousarray(arrs[0]).ravel()
    cdef double[::1] bv1 = np.ascontiguousarray(arrs[1]).ravel()
    cdef double[::1] av2 = np.ascontiguousarray(arrs[2]).ravel()
    cdef double[::1] bv2 = np.ascontiguousarray(arrs[3]).ravel()
    cdef double[::1] rv = np.ascontiguousarray(arrs[4]).ravel()
    cdef Py_ssize_t n = av1.shape[0], i
    cdef double lo1, hi1, lo2, hi2, rr, p, t
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            lo1 = av1[i]; hi1 = bv1[i]; lo2 = av2[i]; hi2 = bv2[i]; rr = rv[i]
            if _reflect(lo1, hi1):
                t = lo1
                lo1 = -hi1
                hi1 = -t
                rr = -rr
            if _reflect(lo2, hi2):
                t = lo2
                lo2 = -hi2
                hi2 = -t
                rr = -rr
            p = (_bvnu(lo1, lo2, rr) - _bvnu(hi1, lo2, rr)
                 - _bvnu(lo1, hi2, rr) + _bvnu(hi1, hi2, rr))
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            ov[i] = p
    return out.reshape(shape)


cdef inline double _logaddexp(double x, double y) noexcept nogil:
    cdef double m
    if x == -INFINITY:
        return y
    if y == -INFINITY:
        return x
    m = x if x > y else y
    return m + log1p(exp(-fabs(x - y)))


def trunc_norm_std(a, b, u):
    """Inverse-cdf truncated standard normal draws (see the Python twin)."""
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, u)))
    shape = arrs[0].shape
    cdef double[::1] av = np.ascontiguousarray(arrs[0]).ravel()
    cdef double[::1] bv = np.ascontiguousarray(arrs[1]).ravel()
    cdef double[::1] uv = np.ascontiguousarray(arrs[2]).ravel()
    cdef Py_ssize_t n = av.shape[0], i
    cdef double lo, hi, x, logp, uu, lu
    cdef bint flip
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            flip = av[i] > 0
            if flip:
                lo = -bv[i]
                hi = -av[i]
            else:
                lo = av[i]
                hi = bv[i]
            uu = uv[i]
            lu = log(uu) if uu > 0 else -INFINITY
            logp = _logaddexp(log1p(-uu) + log_ndtr(lo), lu + log_ndtr(hi))
            x = ndtri_exp(logp)
            if x < lo:
                x = lo
            if x > hi:
                x = hi
            if x <= lo:
                x = nextafter(lo, hi)
            if x >= hi:
                x = nextafter(hi, lo)
            ov[i] = -x if flip else x
    return out.reshape(shape)


def car_sweep(double[::1] b, double[::1] y, double[::1] e_base,
              const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] indices,
              double[::1] n_nb, double tau2, double[::1] step,
              double[::1] normals, double[::1] logu):
    """Sequential single-site Metropolis sweep for a Poisson ICAR field."""
    cdef Py_ssize_t n = b.shape[0], i, p
    cdef double m, prec, cur, prop, logr, nn
    cdef long accepted = 0
    with nogil:
        for i in range(n):
            nn = n_nb[i]
            if nn > 0:
                m = 0.0
                for p in range(offsets[i], offsets[i + 1]):
                    m += b[indices[p]]
                m /= nn
                prec = nn / tau2
            else:
                m = 0.0
                prec = 1.0 / tau2
            cur = b[i]
            prop = cur + step[i] * normals[i]
            logr = (y[i] * (prop - cur)
                    - e_base[i] * (exp(prop) - exp(cur))
                    - 0.5 * prec * ((prop - m) * (prop - m) - (cur - m) * (cur - m)))
            if logu[i] < logr:
                b[i] = prop
                accepted += 1
    return accepted


def mcar_sweep(double[:, ::1] b, double[::1] beta, double[:, ::1] design,
               double[::1] y, double[::1] offset_e,
               const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] indices,
               double[::1] n_nb, double[:, ::1] omega, double[:, :, ::1] chol,
               double[:, ::1] normals, double[::1] logu):
    """Sequential single-site Metropolis sweep for a Poisson MCAR field."""
    cdef Py_ssize_t n = b.shape[0], dim = b.shape[1], i, j, l, q
    cdef double nn, w, eta_c, eta_p, qc, qp, logr
    cdef double[::1] m = np.zeros(dim)
    cdef double[::1] prop = np.zeros(dim)
    cdef double[::1] dc = np.zeros(dim)
    cdef double[::1] dp = np.zeros(dim)
    cdef long accepted = 0
    with nogil:
        for i in range(n):
            nn = n_nb[i]
            for j in range(dim):
                m[j] = 0.0
            if nn > 0:
                for q in range(offsets[i], offsets[i + 1]):
                    for j in range(dim):
                        m[j] += b[indices[q], j]
                for j in range(dim):
                    m[j] /= nn
                w = nn
            else:
                w = 1.0
            eta_c = 0.0
            eta_p = 0.0
            for j in range(dim):
                prop[j] = b[i, j]
                for l in range(dim):
                    prop[j] += chol[i, j, l] * normals[i, l]
                eta_c += design[i, j] * (beta[j] + b[i, j])
                eta_p += design[i, j] * (beta[j] + prop[j])
                dc[j] = b[i, j] - m[j]
                dp[j] = prop[j] - m[j]
            qc = 0.0
            qp = 0.0
            for j in range(dim):
                for l in range(dim):
                    qc += dc[j] * omega[j, l] * dc[l]
                    qp += dp[j] * omega[j, l] * dp[l]
            logr = (y[i] * (eta_p - eta_c)
                    - offset_e[i] * (exp(eta_p) - exp(eta_c))
                    - 0.5 * w * (qp - qc))
            if logu[i] < logr:
                for j in range(dim):
                    b[i, j] = prop[j]
                accepted += 1
    return accepted
