"""Mixture components for mixed-type areal responses.

Each area contributes a vector ``v_i = (latents, observed)`` where the
latents are the Gaussian variables behind the count and/or binomial
responses and the observed part stacks the continuous response and the
Gaussian-modelled covariates. Within a mixture component ``v_i`` is
multivariate normal with mean ``(0, X*_i xi)`` and covariance ``Sigma*``
whose latent diagonal entries are fixed at one. The regression coefficients
of the discrete responses enter through the cut points.

The covariance prior works on ``E = D^{1/2} Sigma* D^{1/2}``, a Wishart
matrix, where ``D`` holds non-identified variances for the latent
coordinates. Covariances may be restricted to a block-diagonal pattern
(local independence, diagonal variants); every block then carries its own
Wishart prior.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import expit, logsumexp, multigammaln

from .data import Dataset
from .link import (
    binomial_interval,
    latent_to_count,
    log_interval_prob_std,
    log_latent_prob,
    poisson_interval,
    log_rect_prob_bvn,
    CutPointRule,
)

LOG_2PI = np.log(2.0 * np.pi)
PREDICTOR_CLAMP = 35.0
JITTER = 1e-8


class ModelError(ValueError):
    """Raised for invalid model specifications or parameter values."""


# ---------------------------------------------------------------------------
# model variants


class Family(str, Enum):
    JOINT = "joint"            # confounders modelled jointly with the responses
    SPLIT = "split"            # confounders in the predictor and in a Gaussian block
    DIAGONAL = "diagonal"      # as SPLIT with a diagonal covariance
    ZERO_BETA = "zero_beta"    # as SPLIT without confounders in the predictor
    CONDITIONAL = "conditional"  # responses only, confounders in the predictor


_NAMED_VARIANTS = {
    "M1": (Family.JOINT, True, False),
    "M1A": (Family.JOINT, False, False),
    "M1B": (Family.JOINT, True, True),
    "M1C": (Family.JOINT, False, True),
    "M2": (Family.SPLIT, True, False),
    "M3": (Family.DIAGONAL, True, False),
    "M4": (Family.ZERO_BETA, True, False),
    "M5": (Family.CONDITIONAL, True, False),
    "NP": (Family.CONDITIONAL, True, False),
}


@dataclass(frozen=True)
class ModelVariant:
    family: Family = Family.JOINT
    spatial: bool = True
    local_independence: bool = False

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        key = name.strip().upper()
        if key not in _NAMED_VARIANTS:
            raise ModelError(f"unknown mixture model {name!r}; choose from {sorted(_NAMED_VARIANTS)}")
        fam, spatial, local = _NAMED_VARIANTS[key]
        return cls(fam, spatial, local)

    @staticmethod
    def names() -> list[str]:
        return sorted(_NAMED_VARIANTS)

    @property
    def structure(self) -> str:
        if self.family is Family.DIAGONAL:
            return "diagonal"
        if self.family in (Family.SPLIT, Family.ZERO_BETA):
            return "block"
        if self.family is Family.JOINT and self.local_independence:
            return "block"
        return "full"


# ---------------------------------------------------------------------------
# data layout


@dataclass
class ModelLayout:
    """Data arranged for a particular model variant.

    Attributes
    ----------
    latent_kinds : tuple of str
        ``"count"`` and/or ``"binomial"``, in that order.
    obs : ndarray (n, s_obs)
        Observed Gaussian coordinates: the continuous response (if any)
        followed by the Gaussian-modelled covariates.
    x1, x2, x3 : ndarray
        Designs of the count, binomial and continuous predictors (zero
        columns when the response is absent).
    xstar : ndarray (n, s_obs, r3 + q_g)
        Maps ``xi = (beta3, mu)`` to the mean of ``obs``.
    blocks : tuple of ndarray
        Index sets of the independent covariance blocks.
    """

    latent_kinds: tuple
    y1: np.ndarray | None
    E: np.ndarray | None
    y2: np.ndarray | None
    N: np.ndarray | None
    obs: np.ndarray
    obs_names: list
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x1_names: list
    x2_names: list
    x3_names: list
    xstar: np.ndarray
    blocks: tuple
    structure: str
    has_continuous: bool = False

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @property
    def n_latent(self) -> int:
        return len(self.latent_kinds)

    @property
    def s_obs(self) -> int:
        return self.obs.shape[1]

    @property
    def s(self) -> int:
        return self.n_latent + self.s_obs

    @property
    def r1(self) -> int:
        return self.x1.shape[1]

    @property
    def r2(self) -> int:
        return self.x2.shape[1]

    @property
    def r3(self) -> int:
        return self.x3.shape[1]

    @property
    def n_xi(self) -> int:
        return self.xstar.shape[2]

    def block_latent_count(self, b: int) -> int:
        return int(np.sum(self.blocks[b] < self.n_latent))

    def subset(self, idx) -> "ModelLayout":
        """Layout restricted to the areas ``idx`` (same model, same blocks)."""
        idx = np.atleast_1d(np.asarray(idx))
        take = lambda a: None if a is None else a[idx]  # noqa: E731
        return replace(
            self,
            y1=take(self.y1), E=take(self.E), y2=take(self.y2), N=take(self.N),
            obs=self.obs[idx], x1=self.x1[idx], x2=self.x2[idx], x3=self.x3[idx],
            xstar=self.xstar[idx],
        )

    def area(self, i: int) -> "ModelLayout":
        """Single-area view used by the scalar likelihood functions."""
        return self.subset([i])

    def with_observations(self, y1=None, y2=None, obs=None) -> "ModelLayout":
        return replace(
            self,
            y1=self.y1 if y1 is None else np.asarray(y1, dtype=np.int64),
            y2=self.y2 if y2 is None else np.asarray(y2, dtype=np.int64),
            obs=self.obs if obs is None else np.asarray(obs, dtype=float),
        )


def _standardize_columns(a):
    if a.shape[1] == 0:
        return a
    sd = a.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (a - a.mean(axis=0)) / sd


def build_layout(ds: Dataset, variant: ModelVariant, standardize_confounders: bool = True) -> ModelLayout:
    """Arrange a dataset for a model variant.

    Confounders entering a response predictor are standardized (when
    ``standardize_confounders``), which only reparametrizes the intercept and
    confounder slopes; the covariate slopes keep their meaning. Confounders
    in the Gaussian block are kept on their original scale.
    """
    n = ds.n
    fam = variant.family
    w_pred = _standardize_columns(ds.w) if standardize_confounders else ds.w
    x_names = [f"x_{nm}" for nm in ds.x_names]
    w_names = [f"w_{nm}" for nm in ds.w_names]
    if fam is Family.JOINT:
        pred, pred_names = ds.x, x_names
        gauss, gauss_names = ds.w, w_names
    elif fam in (Family.SPLIT, Family.DIAGONAL):
        pred, pred_names = np.hstack([ds.x, w_pred]), x_names + w_names
        gauss, gauss_names = np.hstack([ds.x, ds.w]), x_names + w_names
    elif fam is Family.ZERO_BETA:
        pred, pred_names = ds.x, x_names
        gauss, gauss_names = np.hstack([ds.x, ds.w]), x_names + w_names
    else:
        pred, pred_names = np.hstack([ds.x, w_pred]), x_names + w_names
        gauss, gauss_names = np.zeros((n, 0)), []
    design = np.hstack([np.ones((n, 1)), pred])
    design_names = ["intercept"] + pred_names
    empty = np.zeros((n, 0))

    kinds = tuple(k for k, present in (("count", ds.has_count), ("binomial", ds.has_binomial)) if present)
    x1 = design if ds.has_count else empty
    x2 = design if ds.has_binomial else empty
    x3 = design if ds.has_continuous else empty
    obs_cols, obs_names = [], []
    if ds.has_continuous:
        obs_cols.append(ds.y3[:, None])
        obs_names.append("y3")
    obs_cols.append(gauss)
    obs_names += gauss_names
    obs = np.hstack(obs_cols) if obs_cols else np.zeros((n, 0))

    r3, qg = x3.shape[1], gauss.shape[1]
    xstar = np.zeros((n, obs.shape[1], r3 + qg))
    row = 0
    if ds.has_continuous:
        xstar[:, 0, :r3] = x3
        row = 1
    for k in range(qg):
        xstar[:, row + k, r3 + k] = 1.0

    L = len(kinds)
    s = L + obs.shape[1]
    structure = variant.structure
    if structure == "full":
        blocks = (np.arange(s),)
    elif structure == "diagonal":
        blocks = tuple(np.array([j]) for j in range(s))
    else:
        resp = np.arange(L + int(ds.has_continuous))
        conf = np.arange(L + int(ds.has_continuous), s)
        blocks = tuple(b for b in (resp, conf) if b.size)
    if s == 0:
        raise ModelError("the model has no response coordinates")
    return ModelLayout(
        latent_kinds=kinds,
        y1=ds.y1, E=ds.E, y2=ds.y2, N=ds.N,
        obs=obs, obs_names=obs_names,
        x1=x1, x2=x2, x3=x3,
        x1_names=design_names if ds.has_count else [],
        x2_names=design_names if ds.has_binomial else [],
        x3_names=design_names if ds.has_continuous else [],
        xstar=xstar, blocks=blocks, structure=structure,
        has_continuous=ds.has_continuous,
    )


# ---------------------------------------------------------------------------
# priors and parameters


@dataclass
class BasePriorSpec:
    """Base-measure hyperparameters.

    ``wishart_df`` has one entry per covariance block; ``wishart_scale`` is
    the full ``s x s`` scale matrix, of which only the within-block entries
    are used.
    """

    tau2: float
    xi_mean: np.ndarray
    xi_var: np.ndarray
    wishart_df: np.ndarray
    wishart_scale: np.ndarray

    def validate(self, layout: ModelLayout) -> None:
        if not self.tau2 > 0:
            raise ModelError("coefficient prior variance must be positive")
        if self.xi_mean.shape != (layout.n_xi,) or self.xi_var.shape != (layout.n_xi,):
            raise ModelError("xi prior has the wrong dimension")
        if np.any(self.xi_var <= 0):
            raise ModelError("xi prior variances must be positive")
        for b, idx in enumerate(layout.blocks):
            if not self.wishart_df[b] > idx.size - 1:
                raise ModelError("Wishart degrees of freedom must exceed block size minus one")
            sub = self.wishart_scale[np.ix_(idx, idx)]
            try:
                linalg.cholesky(sub, lower=True)
            except linalg.LinAlgError as exc:
                raise ModelError("Wishart scale is not positive definite") from exc


def default_priors(
    layout: ModelLayout,
    tau2: float = 25.0,
    df_extra: float = 2.0,
    cross_damp: float = 0.5,
) -> BasePriorSpec:
    """Weakly informative base priors built from empirical moments.

    The Wishart scale of each block is chosen so the prior mean of ``E``
    equals the identity on latent coordinates and the empirical covariance
    of the observed coordinates, with off-diagonal entries multiplied by
    ``cross_damp``.
    """
    L = layout.n_latent
    gauss = layout.obs[:, int(layout.has_continuous):]
    xi_mean = np.concatenate([np.zeros(layout.r3), gauss.mean(axis=0)])
    gvar = gauss.var(axis=0) if gauss.shape[1] else np.zeros(0)
    xi_var = np.concatenate([np.full(layout.r3, tau2), np.maximum(gvar, 1e-8)])
    s = layout.s
    target = np.zeros((s, s))
    target[:L, :L] = np.eye(L)
    if layout.s_obs:
        cov = np.atleast_2d(np.cov(layout.obs, rowvar=False, bias=True))
        d = np.maximum(np.diag(cov), 1e-8)
        cov = cov * cross_damp
        cov[np.diag_indices_from(cov)] = d
        target[L:, L:] = cov
    mask = np.zeros((s, s), dtype=bool)
    for idx in layout.blocks:
        mask[np.ix_(idx, idx)] = True
    target = np.where(mask, target, 0.0)
    dfs = np.array([idx.size + df_extra for idx in layout.blocks], dtype=float)
    scale = np.zeros((s, s))
    for b, idx in enumerate(layout.blocks):
        scale[np.ix_(idx, idx)] = target[np.ix_(idx, idx)] / dfs[b]
    return BasePriorSpec(tau2=tau2, xi_mean=xi_mean, xi_var=xi_var, wishart_df=dfs, wishart_scale=scale)


@dataclass(frozen=True)
class ComponentParams:
    """One mixture atom.

    ``sigma`` is the constrained covariance (unit latent diagonal) and ``d2``
    the non-identified latent variances.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    d2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def e_matrix(self) -> np.ndarray:
        return combine_covariance(self.d2, self.sigma)

    def replace(self, **kw) -> "ComponentParams":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Wishart separation


def separate_covariance(e: np.ndarray, n_latent: int):
    """Split ``E`` into latent variances ``d2`` and ``Sigma*`` with unit latent diagonal."""
    e = np.asarray(e, dtype=float)
    d2 = np.diag(e)[:n_latent].copy()
    scale = np.ones(e.shape[0])
    scale[:n_latent] = 1.0 / np.sqrt(d2)
    sigma = e * np.outer(scale, scale)
    sigma[np.arange(n_latent), np.arange(n_latent)] = 1.0
    return d2, sigma


def combine_covariance(d2: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    scale = np.ones(sigma.shape[0])
    scale[: d2.size] = np.sqrt(d2)
    return sigma * np.outer(scale, scale)


def separation_log_jacobian(d2: np.ndarray, size: int) -> float:
    """``log |dE / d(D, Sigma*)| = (size - 1)/2 * sum(log d2)``."""
    return 0.5 * (size - 1) * float(np.sum(np.log(d2)))


def wishart_rvs(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Wishart draw by the Bartlett decomposition."""
    k = scale.shape[0]
    chol = linalg.cholesky(scale, lower=True)
    a = np.zeros((k, k))
    a[np.diag_indices(k)] = np.sqrt(rng.chisquare(df - np.arange(k)))
    il = np.tril_indices(k, -1)
    a[il] = rng.standard_normal(len(il[0]))
    la = chol @ a
    return la @ la.T


def wishart_rvs_many(df: float, scale: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent Wishart draws, shape ``(size, k, k)``."""
    k = scale.shape[0]
    chol = linalg.cholesky(scale, lower=True)
    a = np.zeros((size, k, k))
    d = np.arange(k)
    a[:, d, d] = np.sqrt(rng.chisquare(df - d, size=(size, k)))
    il = np.tril_indices(k, -1)
    a[:, il[0], il[1]] = rng.standard_normal((size, len(il[0])))
    la = chol @ a
    return la @ la.transpose(0, 2, 1)


def wishart_logpdf(x: np.ndarray, df: float, scale: np.ndarray) -> float:
    k = x.shape[0]
    try:
        cx = linalg.cholesky(x, lower=True)
        cs = linalg.cho_factor(scale, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    logdet_x = 2.0 * np.sum(np.log(np.diag(cx)))
    logdet_s = 2.0 * np.sum(np.log(np.diag(cs[0])))
    tr = np.trace(linalg.cho_solve(cs, x))
    return float(
        0.5 * (df - k - 1) * logdet_x
        - 0.5 * tr
        - 0.5 * df * k * np.log(2.0)
        - 0.5 * df * logdet_s
        - multigammaln(0.5 * df, k)
    )


def block_covariance_draw(priors: BasePriorSpec, layout: ModelLayout, rng):
    """Prior draw of ``(d2, Sigma*)`` assembled over the covariance blocks."""
    s, L = layout.s, layout.n_latent
    sigma = np.zeros((s, s))
    d2 = np.ones(L)
    for b, idx in enumerate(layout.blocks):
        sub = priors.wishart_scale[np.ix_(idx, idx)]
        e = wishart_rvs(priors.wishart_df[b], sub, rng)
        lb = layout.block_latent_count(b)
        d2b, sb = separate_covariance(e, lb)
        sigma[np.ix_(idx, idx)] = sb
        d2[idx[:lb]] = d2b
    return d2, sigma


def draw_from_base(priors: BasePriorSpec, layout: ModelLayout, rng: np.random.Generator) -> ComponentParams:
    sd = np.sqrt(priors.tau2)
    beta1 = sd * rng.standard_normal(layout.r1)
    beta2 = sd * rng.standard_normal(layout.r2)
    xi = priors.xi_mean + np.sqrt(priors.xi_var) * rng.standard_normal(layout.n_xi)
    d2, sigma = block_covariance_draw(priors, layout, rng)
    return ComponentParams(beta1=beta1, beta2=beta2, xi=xi, sigma=sigma, d2=d2)


def draw_from_base_many(priors: BasePriorSpec, layout: ModelLayout, rng: np.random.Generator, size: int) -> list:
    """``size`` independent base-prior draws (batched; cheaper than a loop)."""
    if size == 0:
        return []
    sd = np.sqrt(priors.tau2)
    beta1 = sd * rng.standard_normal((size, layout.r1))
    beta2 = sd * rng.standard_normal((size, layout.r2))
    xi = priors.xi_mean + np.sqrt(priors.xi_var) * rng.standard_normal((size, layout.n_xi))
    s, L = layout.s, layout.n_latent
    sigma = np.zeros((size, s, s))
    d2 = np.ones((size, L))
    for b, idx in enumerate(layout.blocks):
        e = wishart_rvs_many(priors.wishart_df[b], priors.wishart_scale[np.ix_(idx, idx)], rng, size)
        lb = layout.block_latent_count(b)
        dd = e[:, np.arange(lb), np.arange(lb)].copy()
        scale = np.ones((size, idx.size))
        scale[:, :lb] = 1.0 / np.sqrt(dd)
        sb = e * scale[:, :, None] * scale[:, None, :]
        sb[:, np.arange(lb), np.arange(lb)] = 1.0
        sigma[:, idx[:, None], idx[None, :]] = sb
        d2[:, idx[:lb]] = dd
    return [
        ComponentParams(beta1=beta1[t], beta2=beta2[t], xi=xi[t], sigma=sigma[t], d2=d2[t])
        for t in range(size)
    ]


def log_base_density(theta: ComponentParams, priors: BasePriorSpec, layout: ModelLayout) -> float:
    """Log density of the base prior at ``theta`` (with respect to ``(beta, xi, D, Sigma*)``)."""
    t2 = priors.tau2
    out = -0.5 * (np.sum(theta.beta1 ** 2) + np.sum(theta.beta2 ** 2)) / t2
    out -= 0.5 * (layout.r1 + layout.r2) * (LOG_2PI + np.log(t2))
    out -= 0.5 * np.sum((theta.xi - priors.xi_mean) ** 2 / priors.xi_var + np.log(priors.xi_var) + LOG_2PI)
    for b, idx in enumerate(layout.blocks):
        lb = layout.block_latent_count(b)
        e = combine_covariance(theta.d2[idx[:lb]], theta.sigma[np.ix_(idx, idx)])
        out += wishart_logpdf(e, priors.wishart_df[b], priors.wishart_scale[np.ix_(idx, idx)])
        out += separation_log_jacobian(theta.d2[idx[:lb]], idx.size)
    return float(out)


# ---------------------------------------------------------------------------
# likelihood


def clamp_predictor(eta):
    return np.clip(eta, -PREDICTOR_CLAMP, PREDICTOR_CLAMP)


def count_rates(layout: ModelLayout, beta1, idx=None):
    """Poisson means ``E_i exp(x1_i beta1)`` (predictor clamped to +-35)."""
    sl = slice(None) if idx is None else idx
    return layout.E[sl] * np.exp(clamp_predictor(layout.x1[sl] @ beta1))


def binomial_probs(layout: ModelLayout, beta2, idx=None):
    sl = slice(None) if idx is None else idx
    return expit(clamp_predictor(layout.x2[sl] @ beta2))


def linear_predictors(area: ModelLayout, theta: ComponentParams):
    """Per-area ``(gamma, pi, alpha)``: rate multiplier, probability, continuous mean.

    Entries are ``nan`` for responses the model does not include.
    """
    gamma = float(np.exp(clamp_predictor(area.x1[0] @ theta.beta1))) if "count" in area.latent_kinds else np.nan
    prob = float(expit(clamp_predictor(area.x2[0] @ theta.beta2))) if "binomial" in area.latent_kinds else np.nan
    alpha = float(area.x3[0] @ theta.xi[: area.r3]) if area.has_continuous else np.nan
    return gamma, prob, alpha


def latent_bounds(layout: ModelLayout, beta1, beta2, idx=None):
    """Lower and upper latent bounds, each of shape ``(m, n_latent)``."""
    sl = slice(None) if idx is None else idx
    lows, highs = [], []
    if "count" in layout.latent_kinds:
        lo, hi = poisson_interval(layout.y1[sl], count_rates(layout, beta1, idx))
        lows.append(lo)
        highs.append(hi)
    if "binomial" in layout.latent_kinds:
        lo, hi = binomial_interval(layout.y2[sl], layout.N[sl], binomial_probs(layout, beta2, idx))
        lows.append(lo)
        highs.append(hi)
    m = layout.obs[sl].shape[0]
    if not lows:
        return np.zeros((m, 0)), np.zeros((m, 0))
    return np.column_stack(lows), np.column_stack(highs)


def obs_mean(layout: ModelLayout, xi, idx=None):
    sl = slice(None) if idx is None else idx
    return np.einsum("nij,j->ni", layout.xstar[sl], xi)


@dataclass(frozen=True)
class LatentConditional:
    """Law of the latents given the observed block within one component."""

    mean: np.ndarray      # (m, L)
    cov: np.ndarray       # (L, L)
    obs_loglik: np.ndarray  # (m,) Gaussian log density of the observed block


def _chol_with_jitter(a):
    try:
        return linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError:
        return linalg.cho_factor(a + JITTER * np.eye(a.shape[0]), lower=True)


def latent_conditional(layout: ModelLayout, theta: ComponentParams, idx=None) -> LatentConditional:
    sl = slice(None) if idx is None else idx
    L = layout.n_latent
    resid = layout.obs[sl] - obs_mean(layout, theta.xi, idx)
    m = resid.shape[0]
    sig = theta.sigma
    r = sig[:L, :L]
    if layout.s_obs == 0:
        return LatentConditional(np.zeros((m, L)), r, np.zeros(m))
    g = sig[L:, L:]
    f = sig[:L, L:]
    cg = _chol_with_jitter(g)
    sol = linalg.cho_solve(cg, resid.T)  # (s_obs, m)
    logdet = 2.0 * np.sum(np.log(np.diag(cg[0])))
    obs_ll = -0.5 * (np.sum(resid.T * sol, axis=0) + logdet + layout.s_obs * LOG_2PI)
    if L == 0:
        return LatentConditional(np.zeros((m, 0)), r, obs_ll)
    k = linalg.cho_solve(cg, f.T).T  # F G^{-1}
    cmean = resid @ k.T
    ccov = r - k @ f.T
    ccov = 0.5 * (ccov + ccov.T)
    return LatentConditional(cmean, ccov, obs_ll)


def component_logliks(layout: ModelLayout, theta: ComponentParams, idx=None) -> np.ndarray:
    """Per-area log likelihood with the latents integrated out."""
    cond = latent_conditional(layout, theta, idx)
    if layout.n_latent == 0:
        return cond.obs_loglik
    lo, hi = latent_bounds(layout, theta.beta1, theta.beta2, idx)
    return cond.obs_loglik + log_latent_prob(cond.mean, cond.cov, lo, hi)


def all_component_logliks(layout: ModelLayout, components) -> np.ndarray:
    """Latent-integrated log likelihood of every area under every component.

    Vectorized over components; returns shape ``(T, n)``. Agrees with
    stacking :func:`component_logliks` over the components.
    """
    T, n, L, so = len(components), layout.n, layout.n_latent, layout.s_obs
    sig = np.array([th.sigma for th in components])
    out = np.zeros((T, n))
    cmean = np.zeros((T, n, L))
    ccov = sig[:, :L, :L]
    if so:
        xi = np.array([th.xi for th in components])
        resid = layout.obs[None] - np.einsum("nij,tj->tni", layout.xstar, xi)
        g = sig[:, L:, L:]
        try:
            cg = np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            cg = np.array([_chol_with_jitter(gt)[0] for gt in g])
            cg = np.tril(cg)
        # whitened residuals: solve cg u = resid^T
        u = np.linalg.solve(cg, resid.transpose(0, 2, 1))
        logdet = 2.0 * np.sum(np.log(np.diagonal(cg, axis1=1, axis2=2)), axis=1)
        out = -0.5 * (np.sum(u * u, axis=1) + logdet[:, None] + so * LOG_2PI)
        if L:
            f = sig[:, :L, L:]
            wf = np.linalg.solve(cg, f.transpose(0, 2, 1))  # cg^{-1} F^T
            cmean = np.einsum("tsn,tsl->tnl", u, wf)
            ccov = ccov - np.einsum("tsl,tsk->tlk", wf, wf)
            ccov = 0.5 * (ccov + ccov.transpose(0, 2, 1))
    if L == 0:
        return out
    lows, highs = [], []
    if "count" in layout.latent_kinds:
        b1 = np.array([th.beta1 for th in components])
        rate = layout.E[None] * np.exp(clamp_predictor(b1 @ layout.x1.T))
        lo, hi = poisson_interval(layout.y1[None], rate)
        lows.append(lo)
        highs.append(hi)
    if "binomial" in layout.latent_kinds:
        b2 = np.array([th.beta2 for th in components])
        prob = expit(clamp_predictor(b2 @ layout.x2.T))
        lo, hi = binomial_interval(layout.y2[None], layout.N[None], prob)
        lows.append(lo)
        highs.append(hi)
    lo = np.stack(lows, axis=-1)
    hi = np.stack(highs, axis=-1)
    if L == 1:
        sd = np.sqrt(ccov[:, 0, 0])[:, None]
        return out + log_interval_prob_std((lo[..., 0] - cmean[..., 0]) / sd, (hi[..., 0] - cmean[..., 0]) / sd)
    cov = np.broadcast_to(ccov[:, None], (T, n, 2, 2))
    return out + log_rect_prob_bvn(cmean, cov, lo, hi)


def component_loglik(area: ModelLayout, theta: ComponentParams) -> float:
    return float(component_logliks(area, theta)[0])


def truncated_mixture_logdensity(area: ModelLayout, components, weights) -> float:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-10):
        raise ModelError("weights must be nonnegative and sum to one")
    ll = np.array([component_loglik(area, th) for th in components])
    with np.errstate(divide="ignore"):
        terms = np.log(weights) + ll
    if np.all(terms == -np.inf):
        raise ModelError("every component assigns zero likelihood")
    return float(logsumexp(terms))


def sample_observations(layout: ModelLayout, theta: ComponentParams, idx, rng):
    """Simulate ``(y1, y2, obs)`` for areas ``idx`` from one component.

    Returns the full latent vector as well, so that callers can keep the
    imputed latents consistent with the simulated counts.
    """
    idx = np.atleast_1d(np.asarray(idx))
    m = idx.size
    L = layout.n_latent
    mean = np.zeros((m, layout.s))
    mean[:, L:] = obs_mean(layout, theta.xi, idx)
    chol = linalg.cholesky(theta.sigma, lower=True)
    v = mean + rng.standard_normal((m, layout.s)) @ chol.T
    y1 = y2 = None
    col = 0
    if "count" in layout.latent_kinds:
        y1 = latent_to_count(v[:, col], CutPointRule.poisson(count_rates(layout, theta.beta1, idx)))
        col += 1
    if "binomial" in layout.latent_kinds:
        y2 = latent_to_count(
            v[:, col], CutPointRule.binomial(layout.N[idx], binomial_probs(layout, theta.beta2, idx))
        )
    return y1, y2, v[:, L:], v[:, :L]
