"""Latent Gaussian representation of count and binomial observations.

A count ``y`` is the image of a standard normal latent ``y*`` under the rule
``y = q  iff  c_{q-1} < y* <= c_q`` with cut points ``c_l = Phi^{-1}(F(l))``,
where ``F`` is the Poisson or binomial cdf. Marginally ``y`` then follows the
target distribution exactly. The module also provides the truncated normal
samplers and the bivariate normal rectangle probabilities that the sampler
needs when latents are integrated out or imputed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import bdtr, bdtrc, log_ndtr, ndtr, ndtri, pdtr, pdtrc

from . import kernels

# Standardized latent bounds are clamped to this range during inverse-cdf
# root finding; the normal mass beyond it is below double precision.
_ROOT_CLAMP = 38.0


class LinkError(ValueError):
    """Raised for invalid link parameters."""


def _cut_from_cdf(cdf, sf):
    """``Phi^{-1}(cdf)`` evaluated on whichever tail is more accurate."""
    cdf = np.asarray(cdf, dtype=float)
    sf = np.asarray(sf, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(cdf <= 0.5, ndtri(cdf), -ndtri(sf))


def poisson_cutpoints(levels, rate):
    """Cut points ``c_l`` of the Poisson rule; broadcasts over both arguments.

    ``l = -1`` maps to ``-inf``. When the cdf underflows (or the survival
    function underflows) the cut point is ``-inf`` (``+inf``).
    """
    levels = np.asarray(levels)
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0) or np.any(~np.isfinite(rate)):
        raise LinkError("Poisson rate must be positive and finite")
    lv = np.maximum(levels, 0)
    out = _cut_from_cdf(pdtr(lv, rate), pdtrc(lv, rate))
    return np.where(levels < 0, -np.inf, out)


def binomial_cutpoints(levels, trials, prob):
    """Cut points of the binomial rule; ``c_{-1} = -inf`` and ``c_N = +inf``."""
    levels = np.asarray(levels)
    trials = np.asarray(trials)
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0) | (prob >= 1)):
        raise LinkError("binomial probability must lie in (0, 1)")
    lv = np.clip(levels, 0, trials)
    out = _cut_from_cdf(bdtr(lv, trials, prob), bdtrc(lv, trials, prob))
    out = np.where(levels >= trials, np.inf, out)
    return np.where(levels < 0, -np.inf, out)


def poisson_cutpoint(level: int, rate: float) -> float:
    return float(poisson_cutpoints(level, rate))


def binomial_cutpoint(level: int, trials: int, prob: float) -> float:
    if level > trials:
        raise LinkError("level exceeds the number of trials")
    return float(binomial_cutpoints(level, trials, prob))


def poisson_interval(y, rate):
    """Latent interval ``(c_{y-1}, c_y]`` for observed counts ``y``."""
    y = np.asarray(y)
    return poisson_cutpoints(y - 1, rate), poisson_cutpoints(y, rate)


def binomial_interval(y, trials, prob):
    y = np.asarray(y)
    return binomial_cutpoints(y - 1, trials, prob), binomial_cutpoints(y, trials, prob)


@dataclass(frozen=True)
class CutPointRule:
    """Poisson (``rate``) or binomial (``trials``, ``prob``) discretization rule.

    Parameters may be arrays, in which case the rule acts elementwise.
    """

    kind: str
    rate: float = 1.0
    trials: int = 1
    prob: float = 0.5

    def __post_init__(self):
        if self.kind == "poisson":
            if not np.all(np.asarray(self.rate) > 0):
                raise LinkError("Poisson rate must be positive")
        elif self.kind == "binomial":
            prob = np.asarray(self.prob)
            if not np.all((prob > 0) & (prob < 1)):
                raise LinkError("binomial probability must lie in (0, 1)")
            if np.any(np.asarray(self.trials) < 0):
                raise LinkError("number of trials must be nonnegative")
        else:
            raise LinkError(f"unknown rule kind {self.kind!r}")

    @classmethod
    def poisson(cls, rate: float) -> "CutPointRule":
        return cls("poisson", rate=rate)

    @classmethod
    def binomial(cls, trials: int, prob: float) -> "CutPointRule":
        return cls("binomial", trials=trials, prob=prob)

    def cutpoints(self, levels):
        if self.kind == "poisson":
            return poisson_cutpoints(levels, self.rate)
        return binomial_cutpoints(levels, self.trials, self.prob)

    def interval(self, y):
        y = np.asarray(y)
        return self.cutpoints(y - 1), self.cutpoints(y)

    def pmf(self, y):
        if self.kind == "poisson":
            return stats.poisson.pmf(y, self.rate)
        return stats.binom.pmf(y, self.trials, self.prob)

    def _quantile_guess(self, u):
        if self.kind == "poisson":
            return stats.poisson.ppf(u, self.rate)
        return stats.binom.ppf(u, self.trials, self.prob)


def latent_to_count(ystar, rule: CutPointRule):
    """Map latent values to counts: the ``q`` with ``c_{q-1} <= y* < c_q``.

    A latent lying exactly on a finite cut point (a probability-zero event)
    is assigned to the interval above it, which is the same as nudging it up
    by one ulp.
    """
    ystar = np.asarray(ystar, dtype=float)
    if np.any(~np.isfinite(ystar)):
        raise LinkError("latent values must be finite")
    scalar = ystar.ndim == 0
    y = np.atleast_1d(ystar)
    q = np.nan_to_num(rule._quantile_guess(ndtr(y)), nan=0.0, posinf=0.0)
    q = np.maximum(q, 0).astype(np.int64)
    if rule.kind == "binomial":
        q = np.minimum(q, rule.trials)
    y = np.broadcast_to(y, q.shape)
    # Correct the floating point guess against the exact cut points.
    while True:
        down = rule.cutpoints(q - 1) > y
        if not down.any():
            break
        q[down] -= 1
    while True:
        up = rule.cutpoints(q) <= y
        if not up.any():
            break
        q[up] += 1
    return int(q[0]) if scalar else q


# ---------------------------------------------------------------------------
# interval and rectangle probabilities


def log_interval_prob_std(lo, hi):
    """``log P(lo < Z < hi)`` for ``Z ~ N(0, 1)``, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log1p(-np.exp(la - lb))
    return np.where(b <= a, -np.inf, out)


def interval_prob(mean, sd, lo, hi):
    return np.exp(log_interval_prob_std((np.asarray(lo) - mean) / sd, (np.asarray(hi) - mean) / sd))


@dataclass(frozen=True)
class Rectangle2D:
    """Axis-aligned rectangle, bounds possibly infinite."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (2,) or hi.shape != (2,) or np.any(lo >= hi):
            raise LinkError("rectangle needs lower < upper in both coordinates")

    @property
    def lo(self):
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self):
        return np.asarray(self.upper, dtype=float)


def _standardize(mean, cov, lower, upper):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    v0 = cov[..., 0, 0]
    v1 = cov[..., 1, 1]
    c01 = cov[..., 0, 1]
    if np.any(v0 <= 0) or np.any(v1 <= 0) or np.any(c01 * c01 >= v0 * v1):
        raise LinkError("covariance matrix is not positive definite")
    s0 = np.sqrt(v0)
    s1 = np.sqrt(v1)
    r = c01 / (s0 * s1)
    a0 = (lower[..., 0] - mean[..., 0]) / s0
    b0 = (upper[..., 0] - mean[..., 0]) / s0
    a1 = (lower[..., 1] - mean[..., 1]) / s1
    b1 = (upper[..., 1] - mean[..., 1]) / s1
    return a0, b0, a1, b1, r, s0, s1


def rect_prob_bvn(mean, cov, lower, upper=None):
    """Bivariate normal probability of a rectangle.

    ``mean`` has shape ``(..., 2)``, ``cov`` ``(..., 2, 2)`` and the bounds
    ``(..., 2)``; a :class:`Rectangle2D` may be passed as ``lower``.
    """
    if isinstance(lower, Rectangle2D):
        lower, upper = lower.lo, lower.hi
    a0, b0, a1, b1, r, _, _ = _standardize(mean, cov, lower, upper)
    p = kernels.rect_prob_std(a0, b0, a1, b1, r)
    return float(p) if np.ndim(p) == 0 else p


def rect_prob_quadrature(mean, cov, lower, upper, epsabs=1e-13):
    """Reference rectangle probability by 1-d adaptive quadrature.

    Integrates the first coordinate's density times the conditional interval
    probability of the second. Slow; intended as an independent check.
    """
    a0, b0, a1, b1, r, _, _ = _standardize(mean, cov, lower, upper)
    a0, b0, a1, b1, r = (float(v) for v in (a0, b0, a1, b1, r))
    s = np.sqrt(1.0 - r * r)

    def integrand(z):
        return stats.norm.pdf(z) * np.exp(
            log_interval_prob_std((a1 - r * z) / s, (b1 - r * z) / s)
        )

    lo, hi = max(a0, -40.0), min(b0, 40.0)
    if lo >= hi:
        return 0.0
    pts = [p for p in (0.0, a1 / r if r else None, b1 / r if r else None) if p is not None and lo < p < hi and np.isfinite(p)]
    val, _ = integrate.quad(integrand, lo, hi, epsabs=epsabs, epsrel=1e-12, limit=500, points=pts or None)
    return float(val)


# Below this probability the inclusion-exclusion result of the Genz routine
# has lost relative accuracy and the log-space quadrature takes over.
_TAIL_SWITCH = 1e-7
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _min_mahalanobis_sq(a0, b0, a1, b1, r):
    """Smallest ``z' R^{-1} z`` over the rectangle, for unit-variance ``R``."""
    one_m = 1.0 - r * r
    inside = (a0 <= 0) & (0 <= b0) & (a1 <= 0) & (0 <= b1)
    best = np.where(inside, 0.0, np.inf)
    with np.errstate(invalid="ignore"):
        for fixed, lo, hi in ((a0, a1, b1), (b0, a1, b1)):
            other = np.clip(r * fixed, lo, hi)
            val = (fixed * fixed - 2 * r * fixed * other + other * other) / one_m
            best = np.where(np.isfinite(fixed), np.fmin(best, val), best)
        for fixed, lo, hi in ((a1, a0, b0), (b1, a0, b0)):
            other = np.clip(r * fixed, lo, hi)
            val = (fixed * fixed - 2 * r * fixed * other + other * other) / one_m
            best = np.where(np.isfinite(fixed), np.fmin(best, val), best)
    return best


def _log_rect_quadrature(a0, b0, a1, b1, r):
    """``log P`` of a standardized rectangle by composite Gauss-Legendre.

    Integrates ``phi(z) P(a1 < Z1 < b1 | z)`` over the first coordinate in
    log space. The outer range is cut where the joint density falls 40 nats
    below its maximum over the rectangle, and panel breaks are placed where
    the inner probability changes fastest, so the result keeps its relative
    accuracy far into the tails.
    """
    s = np.sqrt(1.0 - r * r)
    reach = np.sqrt(_min_mahalanobis_sq(a0, b0, a1, b1, r) + 80.0)
    lo = np.maximum(a0, -reach)
    hi = np.minimum(b0, reach)
    breaks = [lo, hi]
    safe_r = np.where(np.abs(r) > 1e-12, r, 1.0)
    width = 4.0 * s / np.abs(safe_r)
    for edge in (a1, b1):
        centre = np.where(np.isfinite(edge) & (np.abs(r) > 1e-12), edge / safe_r, lo)
        for off in (-width, 0.0, width):
            breaks.append(np.clip(centre + off, lo, hi))
    pts = np.sort(np.stack(breaks, axis=-1), axis=-1)
    # Split every panel in two to keep the node density up.
    mids = 0.5 * (pts[..., 1:] + pts[..., :-1])
    pts = np.sort(np.concatenate([pts, mids], axis=-1), axis=-1)
    left, right = pts[..., :-1], pts[..., 1:]
    half = 0.5 * (right - left)
    z = (0.5 * (right + left))[..., None] + half[..., None] * _GL_NODES
    rr = np.asarray(r)[..., None, None]
    ss = np.asarray(s)[..., None, None]
    inner = log_interval_prob_std(
        (np.asarray(a1)[..., None, None] - rr * z) / ss, (np.asarray(b1)[..., None, None] - rr * z) / ss
    )
    with np.errstate(divide="ignore"):
        logw = np.log(half)[..., None] + np.log(_GL_WEIGHTS)
    terms = logw - 0.5 * z * z - 0.5 * np.log(2.0 * np.pi) + inner
    flat = terms.reshape(terms.shape[:-2] + (-1,))
    top = np.max(flat, axis=-1)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = top + np.log(np.sum(np.exp(flat - top[..., None]), axis=-1))
    return np.where(hi > lo, out, -np.inf)


def log_rect_prob_bvn(mean, cov, lower, upper):
    """``log`` of :func:`rect_prob_bvn`, accurate for tiny probabilities.

    Shapes as in :func:`rect_prob_bvn`. Rectangles with probability below
    ``1e-7`` are recomputed by log-space quadrature.
    """
    a0, b0, a1, b1, r, _, _ = _standardize(mean, cov, lower, upper)
    a0, b0, a1, b1, r = np.broadcast_arrays(a0, b0, a1, b1, r)
    p = np.asarray(kernels.rect_prob_std(a0, b0, a1, b1, r), dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(p)
    tail = p < _TAIL_SWITCH
    if np.any(tail):
        out = np.array(out, copy=True)
        out[tail] = _log_rect_quadrature(a0[tail], b0[tail], a1[tail], b1[tail], r[tail])
    return float(out) if np.ndim(out) == 0 else out


def log_latent_prob(mean, cov, lower, upper):
    """``log P(V in box)`` for ``V ~ N(mean, cov)`` of dimension 0, 1 or 2.

    Vectorized over rows: ``mean``, ``lower`` and ``upper`` have shape
    ``(m, L)`` and ``cov`` is a single ``(L, L)`` matrix.
    """
    mean = np.asarray(mean, dtype=float)
    dim = mean.shape[-1]
    if dim == 0:
        return np.zeros(mean.shape[:-1])
    if dim == 1:
        sd = np.sqrt(cov[0, 0])
        return log_interval_prob_std((lower[..., 0] - mean[..., 0]) / sd, (upper[..., 0] - mean[..., 0]) / sd)
    if dim == 2:
        return log_rect_prob_bvn(mean, np.broadcast_to(cov, mean.shape[:-1] + (2, 2)), lower, upper)
    raise LinkError("at most two latent coordinates are supported")


# ---------------------------------------------------------------------------
# truncated normal samplers


def _uniforms(rng, shape):
    u = rng.random(shape)
    return np.where(u == 0.0, 2.0 ** -54, u)


def sample_trunc_normal_1d(mean, sd, lower, upper, rng, size=None):
    """Draw from ``N(mean, sd^2)`` truncated to ``(lower, upper)``.

    Uses the inverse cdf in log space, so far-tail intervals cost the same
    as central ones. Arguments broadcast; ``size`` overrides the shape.
    """
    mean, sd, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, sd, lower, upper))
    )
    if np.any(sd <= 0):
        raise LinkError("standard deviation must be positive")
    if np.any(lower >= upper):
        raise LinkError("degenerate truncation interval")
    if size is not None:
        shape = tuple(np.atleast_1d(size).astype(int))
        mean, sd, lower, upper = (np.broadcast_to(v, shape) for v in (mean, sd, lower, upper))
    shape = mean.shape
    z = kernels.trunc_norm_std((lower - mean) / sd, (upper - mean) / sd, _uniforms(rng, shape))
    x = mean + sd * z
    # Guard against rounding in the affine map.
    x = np.where(x <= lower, np.nextafter(lower, upper), x)
    x = np.where(x >= upper, np.nextafter(upper, lower), x)
    return float(x) if np.ndim(x) == 0 else x


def sample_trunc_bvn(mean, cov, lower, upper, rng, sweeps: int = 1, start=None):
    """Gibbs-within-rectangle draw for a truncated bivariate normal.

    Each sweep updates coordinate 0 then coordinate 1 from its conditional
    truncated normal. The result always lies inside the rectangle, even if
    ``start`` does not. Vectorized over leading dimensions of ``mean``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), mean.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), mean.shape)
    if start is None:
        x = np.clip(mean, lower, upper)
        x = np.where(np.isfinite(x), x, 0.0)
    else:
        x = np.array(start, dtype=float, copy=True)
    x = np.broadcast_to(x, mean.shape).copy()
    for _ in range(max(int(sweeps), 1)):
        for k in (0, 1):
            j = 1 - k
            slope = cov[..., k, j] / cov[..., j, j]
            cm = mean[..., k] + slope * (x[..., j] - mean[..., j])
            cs = np.sqrt(cov[..., k, k] - slope * cov[..., k, j])
            x[..., k] = sample_trunc_normal_1d(cm, cs * np.ones_like(cm), lower[..., k], upper[..., k], rng)
    return x


def _exact_bvn_inverse_cdf(a0, b0, a1, b1, r, u, v):
    """Exact draw by inverting the marginal cdf of the first coordinate.

    The marginal cdf is a rectangle probability, so bisection on it yields an
    exact (to tolerance) draw of coordinate 0; coordinate 1 then follows from
    its conditional truncated normal.
    """
    total = kernels.rect_prob_std(a0, b0, a1, b1, r)
    target = u * total
    lo = np.maximum(a0, -_ROOT_CLAMP)
    hi = np.minimum(b0, _ROOT_CLAMP)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = kernels.rect_prob_std(a0, mid, a1, b1, r) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    z0 = 0.5 * (lo + hi)
    s = np.sqrt(1.0 - r * r)
    z1 = r * z0 + s * kernels.trunc_norm_std((a1 - r * z0) / s, (b1 - r * z0) / s, v)
    return z0, z1


def sample_trunc_bvn_exact(mean, cov, lower, upper, rng, max_rounds: int = 25):
    """Independent exact draws from truncated bivariate normals.

    Vectorized over rows (``mean`` of shape ``(m, 2)``; ``cov`` either
    ``(2, 2)`` or ``(m, 2, 2)``). Each row is drawn by rejection: the
    coordinate with the smaller strip probability is drawn from its truncated
    marginal and accepted with the conditional probability that the other
    coordinate falls in its interval; the second coordinate is then drawn
    from its conditional. Rows still pending after ``max_rounds`` rounds are
    drawn by marginal cdf inversion.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    m = mean.shape[0]
    cov = np.broadcast_to(np.asarray(cov, dtype=float), (m, 2, 2))
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (m, 2))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (m, 2))
    a0, b0, a1, b1, r, s0, s1 = _standardize(mean, cov, lower, upper)
    # Propose the coordinate with less marginal mass in its interval.
    swap = log_interval_prob_std(a1, b1) < log_interval_prob_std(a0, b0)
    pa, pb = np.where(swap, a1, a0), np.where(swap, b1, b0)
    qa, qb = np.where(swap, a0, a1), np.where(swap, b0, b1)
    s = np.sqrt(1.0 - r * r)
    zp = np.empty(m)
    zq = np.empty(m)
    pending = np.arange(m)
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        k = pending.size
        cand = kernels.trunc_norm_std(pa[pending], pb[pending], _uniforms(rng, k))
        rr, ss = r[pending], s[pending]
        lacc = log_interval_prob_std((qa[pending] - rr * cand) / ss, (qb[pending] - rr * cand) / ss)
        ok = np.log(_uniforms(rng, k)) < lacc
        idx = pending[ok]
        zp[idx] = cand[ok]
        pending = pending[~ok]
    if pending.size:
        u = _uniforms(rng, pending.size)
        v = _uniforms(rng, pending.size)
        z0, z1 = _exact_bvn_inverse_cdf(
            pa[pending], pb[pending], qa[pending], qb[pending], r[pending], u, v
        )
        zp[pending] = z0
        zq_fallback = z1
    done = np.ones(m, dtype=bool)
    done[pending] = False
    if done.any():
        ii = np.flatnonzero(done)
        rr, ss = r[ii], s[ii]
        zq[ii] = rr * zp[ii] + ss * kernels.trunc_norm_std(
            (qa[ii] - rr * zp[ii]) / ss, (qb[ii] - rr * zp[ii]) / ss, _uniforms(rng, ii.size)
        )
    if pending.size:
        zq[pending] = zq_fallback
    z0 = np.where(swap, zq, zp)
    z1 = np.where(swap, zp, zq)
    x = np.column_stack([mean[:, 0] + s0 * z0, mean[:, 1] + s1 * z1])
    x = np.where(x <= lower, np.nextafter(lower, upper), x)
    x = np.where(x >= upper, np.nextafter(upper, lower), x)
    return x


def sample_latent_box(mean, cov, lower, upper, rng):
    """Exact draws of ``V ~ N(mean, cov)`` restricted to a box, ``L`` in {0, 1, 2}."""
    mean = np.asarray(mean, dtype=float)
    dim = mean.shape[-1]
    if dim == 0:
        return mean.copy()
    if dim == 1:
        sd = np.sqrt(cov[0, 0])
        return sample_trunc_normal_1d(mean[:, 0], sd, lower[:, 0], upper[:, 0], rng, size=mean.shape[:1])[:, None]
    if dim == 2:
        return sample_trunc_bvn_exact(mean, cov, lower, upper, rng)
    raise LinkError("at most two latent coordinates are supported")
