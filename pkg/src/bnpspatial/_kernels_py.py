"""Pure numpy implementations of the hot numerical kernels.

This module is the fallback used when the compiled extension is missing (or
when ``BNPSPATIAL_BACKEND=python``). Every function here has a twin with the
same name and signature in ``_kernels.pyx``; the two must agree to rounding.
All randomness enters through pre-drawn arrays so the backends consume the
random stream identically.
"""
from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri_exp

TWO_PI = 2.0 * np.pi

# Gauss-Legendre half-rules (nodes on (0, 1], weights) used by the Genz
# bivariate normal algorithm.
_GL_W = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
              0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
              0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
              0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
              0.1527533871307259]),
)
_GL_X = (
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
              0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
              0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
              0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
              0.07652652113349733]),
)
# Full rules on (0, 2): nodes 1 - x and 1 + x, weights repeated.
GL_NODES = tuple(np.concatenate([1.0 - x, 1.0 + x]) for x in _GL_X)
GL_WEIGHTS = tuple(np.concatenate([w, w]) for w in _GL_W)


def _bvnu_finite(h, k, r):
    """Upper orthant probability for finite ``h``, ``k`` and ``|r| > 0``."""
    out = np.empty_like(h)
    ar = np.abs(r)
    mid = ar < 0.925
    if np.any(mid):
        hm, km, rm = h[mid], k[mid], r[mid]
        am = ar[mid]
        res = np.empty_like(hm)
        for sel, rule in ((am < 0.3, 0), ((am >= 0.3) & (am < 0.75), 1), (am >= 0.75, 2)):
            if not np.any(sel):
                continue
            hh, kk, rr = hm[sel], km[sel], rm[sel]
            hk = hh * kk
            hs = 0.5 * (hh * hh + kk * kk)
            asr = 0.5 * np.arcsin(rr)
            sn = np.sin(asr[:, None] * GL_NODES[rule][None, :])
            terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
            res[sel] = terms @ GL_WEIGHTS[rule] * asr / TWO_PI + ndtr(-hh) * ndtr(-kk)
        out[mid] = res
    hi = ~mid
    if np.any(hi):
        hh, kk, rr = h[hi], k[hi].copy(), r[hi]
        hk = hh * kk
        neg = rr < 0
        kk[neg] = -kk[neg]
        hk[neg] = -hk[neg]
        bvn = np.zeros_like(hh)
        lt1 = np.abs(rr) < 1.0
        if np.any(lt1):
            h1, k1, hk1 = hh[lt1], kk[lt1], hk[lt1]
            r1 = rr[lt1]
            a_s = 1.0 - r1 * r1
            a = np.sqrt(a_s)
            bs = (h1 - k1) ** 2
            c = (4.0 - hk1) / 8.0
            d = (12.0 - hk1) / 80.0
            asr = -(bs / a_s + hk1) / 2.0
            b1 = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s),
                0.0,
            )
            b = np.sqrt(bs)
            sp = np.sqrt(TWO_PI) * ndtr(-b / a)
            b1 = np.where(
                hk1 > -100.0,
                b1 - np.exp(-hk1 / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
                b1,
            )
            a = a / 2.0
            xs = (a[:, None] * GL_NODES[2][None, :]) ** 2
            asr2 = -(bs[:, None] / xs + hk1[:, None]) / 2.0
            ok = asr2 > -100.0
            sp2 = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hk1[:, None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
            terms = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (sp2 - ep), 0.0)
            bvn[lt1] = (a * (terms @ GL_WEIGHTS[2]) - b1) / TWO_PI
        pos = rr > 0
        res = np.empty_like(hh)
        res[pos] = bvn[pos] + ndtr(-np.maximum(hh[pos], kk[pos]))
        negm = ~pos
        if np.any(negm):
            hn, kn, bn = hh[negm], kk[negm], bvn[negm]
            lval = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
            res[negm] = np.where(hn >= kn, -bn, lval - bn)
        out[hi] = res
    return out


def bvn_upper(h, k, r):
    """``P(X > h, Y > k)`` for a standard bivariate normal with correlation ``r``.

    Genz's algorithm (double precision, absolute error around 1e-15).
    Arguments broadcast; infinite limits are allowed.
    """
    h, k, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, r)))
    shape = h.shape
    h, k, r = h.ravel(), k.ravel(), r.ravel()
    out = np.empty(h.shape)
    inf_hk = (h == np.inf) | (k == np.inf)
    h_lo = h == -np.inf
    k_lo = k == -np.inf
    out[inf_hk] = 0.0
    m = ~inf_hk & h_lo
    out[m] = ndtr(-k[m])
    m2 = ~inf_hk & ~h_lo & k_lo
    out[m2] = ndtr(-h[m2])
    fin = ~inf_hk & ~h_lo & ~k_lo
    indep = fin & (np.abs(r) < 1e-15)
    out[indep] = ndtr(-h[indep]) * ndtr(-k[indep])
    rest = fin & ~indep
    if np.any(rest):
        out[rest] = _bvnu_finite(h[rest], k[rest], r[rest])
    return np.clip(out, 0.0, 1.0).reshape(shape)


def rect_prob_std(a1, b1, a2, b2, r):
    """Rectangle probability ``P(a1 < X < b1, a2 < Y < b2)``, unit variances.

    Coordinates whose interval lies mostly below zero are reflected first so
    that the four orthant terms are small, which limits cancellation.
    """
    a1, b1, a2, b2, r = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (a1, b1, a2, b2, r))
    )
    a1, b1, a2, b2, r = (v.copy() for v in (a1, b1, a2, b2, r))
    for lo, hi in ((a1, b1), (a2, b2)):
        flip = _reflect_mask(lo, hi)
        lo_f, hi_f = -hi[flip], -lo[flip]
        lo[flip], hi[flip] = lo_f, hi_f
        r[flip] = -r[flip]
    p = (
        bvn_upper(a1, a2, r)
        - bvn_upper(b1, a2, r)
        - bvn_upper(a1, b2, r)
        + bvn_upper(b1, b2, r)
    )
    return np.clip(p, 0.0, 1.0)


def _reflect_mask(lo, hi):
    with np.errstate(invalid="ignore"):
        mid = lo + hi
    both_inf = np.isinf(lo) & np.isinf(hi)
    return ~both_inf & (mid < 0)


def trunc_norm_std(a, b, u):
    """Inverse-cdf draws from ``N(0, 1)`` truncated to ``(a, b)``.

    ``u`` holds uniforms in (0, 1). Intervals lying above zero are reflected
    so that the computation always runs in the lower tail, in log space.
    """
    a, b, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, u)))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    la = log_ndtr(lo)
    lb = log_ndtr(hi)
    with np.errstate(divide="ignore"):
        logp = np.logaddexp(np.log1p(-u) + la, np.log(u) + lb)
    x = ndtri_exp(logp)
    x = np.minimum(np.maximum(x, lo), hi)
    x = np.where(x <= lo, np.nextafter(lo, hi), x)
    x = np.where(x >= hi, np.nextafter(hi, lo), x)
    return np.where(flip, -x, x)


def car_sweep(b, y, e_base, offsets, indices, n_nb, tau2, step, normals, logu):
    """Sequential single-site Metropolis sweep for a Poisson ICAR field.

    Area ``i`` has log rate ``log(e_base[i]) + b[i]`` and the ICAR full
    conditional ``N(mean of neighbours, tau2 / n_i)``; areas with no neighbours
    get an ``N(0, tau2)`` prior. ``b`` is updated in place. Returns the number
    of accepted proposals.
    """
    n = b.shape[0]
    accepted = 0
    for i in range(n):
        start, stop = offsets[i], offsets[i + 1]
        nn = n_nb[i]
        if nn > 0:
            m = 0.0
            for p in range(start, stop):
                m += b[indices[p]]
            m /= nn
            prec = nn / tau2
        else:
            m = 0.0
            prec = 1.0 / tau2
        cur = b[i]
        prop = cur + step[i] * normals[i]
        logr = (
            y[i] * (prop - cur)
            - e_base[i] * (np.exp(prop) - np.exp(cur))
            - 0.5 * prec * ((prop - m) ** 2 - (cur - m) ** 2)
        )
        if logu[i] < logr:
            b[i] = prop
            accepted += 1
    return accepted


def mcar_sweep(b, beta, design, y, offset_e, offsets, indices, n_nb, omega, chol, normals, logu):
    """Sequential single-site Metropolis sweep for a Poisson MCAR field.

    Area ``i`` has log rate ``log(offset_e[i]) + design[i] @ (beta + b[i])``
    and the MCAR full conditional ``N(mean of neighbours, (n_i * omega)^-1)``
    (``N(0, omega^-1)`` for areas with no neighbours). Proposals are
    ``b[i] + chol[i] @ normals[i]``. ``b`` is updated in place.
    """
    n, p = b.shape
    accepted = 0
    for i in range(n):
        start, stop = offsets[i], offsets[i + 1]
        nn = n_nb[i]
        if nn > 0:
            m = b[indices[start:stop]].sum(axis=0) / nn
            w = nn
        else:
            m = np.zeros(p)
            w = 1.0
        cur = b[i]
        prop = cur + chol[i] @ normals[i]
        eta_c = design[i] @ (beta + cur)
        eta_p = design[i] @ (beta + prop)
        dc = cur - m
        dp = prop - m
        logr = (
            y[i] * (eta_p - eta_c)
            - offset_e[i] * (np.exp(eta_p) - np.exp(eta_c))
            - 0.5 * w * (dp @ omega @ dp - dc @ omega @ dc)
        )
        if logu[i] < logr:
            b[i] = prop
            accepted += 1
    return accepted
