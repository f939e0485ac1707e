"""Posterior simulation for the spatial probit stick-breaking mixture.

One sweep runs, in order:

1. ``xi`` of every occupied component (Gibbs, given the imputed latents)
2. the component covariances (Metropolis-Hastings on ``E`` with a Wishart
   proposal centred at the current value)
3. the count/binomial coefficients (random-walk Metropolis with the latents
   integrated out)
4. allocations (latents integrated out)
5. imputation of the latents given the new allocations
6. the two label-switching moves
7. the ``z`` augmentation
8. active scores, then ``alpha``, ``phi^2``, ``lam``, then inactive scores

Steps 3 and 4 marginalize the latents, so they are redrawn exactly in step 5
before anything conditions on them again. Empty components are refreshed
from the base prior, which is their full conditional.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import linalg
from scipy.cluster.vq import kmeans2
from scipy.special import logit

from .graph import AdjacencyMatrix
from .link import sample_latent_box, sample_trunc_bvn
from .model import (
    BasePriorSpec,
    ComponentParams,
    ModelLayout,
    all_component_logliks,
    combine_covariance,
    default_priors,
    draw_from_base_many,
    latent_bounds,
    latent_conditional,
    obs_mean,
    separate_covariance,
    wishart_logpdf,
    wishart_rvs,
)
from .stick import (
    StickPrior,
    StickState,
    impute_eta_inactive,
    label_switch_a,
    label_switch_b,
    log_stick_weights,
    update_alpha_phi_lambda,
    update_eta_active,
    update_z,
    z_consistent,
)
from .trace import ChainTrace

log = logging.getLogger(__name__)

SCALAR_NAMES = ("alpha", "phi2", "lam", "n_occupied", "loglik")


class NumericalFailure(RuntimeError):
    """Raised when the chain reaches an unusable numerical state."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class SamplerConfig:
    """Run length, proposal tuning and hyperparameters of a chain.

    Proposal scales are per-occupancy: the coefficient random walk has
    standard deviation ``beta_scale / sqrt(n_h + 1)`` and the Wishart
    proposal has ``psi = (block size - 1) + wishart_scale * (n_h + 1)``
    degrees of freedom. Both scales (and ``lambda_step``) adapt during
    burn-in only.
    """

    iterations: int = 2000
    burnin: int = 1000
    thin: int = 1
    truncation: int = 30
    seed: int = 0
    beta_scale: float = 0.5
    wishart_scale: float = 1.0
    lambda_step: float = 2.0
    adapt: bool = True
    adapt_target: float = 0.225
    mu_alpha: float = 0.0
    sigma2_alpha: float = 1.0
    a_phi: float = 1.0
    b_phi: float = 0.1
    lambda_max: float = 50.0
    tau2: float = 25.0
    wishart_df_extra: float = 2.0
    cross_damp: float = 0.5
    eta_marginal: str = "exact"
    latent_sampler: str = "exact"
    gibbs_sweeps: int = 1
    standardize_confounders: bool = True
    init_clusters: int = 5
    check_invariants: bool = False
    use_data: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.burnin < 0 or self.thin < 1:
            raise ValueError("iterations and burn-in must be nonnegative and thinning positive")
        if self.truncation < 1:
            raise ValueError("truncation level must be at least one")
        if self.beta_scale <= 0 or self.wishart_scale <= 0 or self.lambda_step <= 0:
            raise ValueError("proposal scales must be positive")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if self.eta_marginal not in ("exact", "subblock"):
            raise ValueError("eta_marginal must be 'exact' or 'subblock'")
        if self.latent_sampler not in ("exact", "gibbs"):
            raise ValueError("latent_sampler must be 'exact' or 'gibbs'")

    @property
    def stick_prior(self) -> StickPrior:
        return StickPrior(self.mu_alpha, self.sigma2_alpha, self.a_phi, self.b_phi, self.lambda_max)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# component updates


def _full_vectors(layout: ModelLayout, ystar: np.ndarray, idx) -> np.ndarray:
    return np.hstack([ystar[idx], layout.obs[idx]])


def update_xi(layout: ModelLayout, theta: ComponentParams, idx, ystar, priors: BasePriorSpec, rng) -> np.ndarray:
    """Gibbs draw of ``xi = (beta3, mu)`` given the component's latents."""
    k = layout.n_xi
    if k == 0:
        return theta.xi
    idx = np.asarray(idx)
    prior_prec = 1.0 / priors.xi_var
    if idx.size == 0:
        return priors.xi_mean + np.sqrt(priors.xi_var) * rng.standard_normal(k)
    L = layout.n_latent
    sig_inv = linalg.inv(theta.sigma)
    v = _full_vectors(layout, ystar, idx)
    xs = layout.xstar[idx]                       # (m, s_obs, k)
    w_obs = sig_inv[L:, L:]
    prec = np.einsum("msi,st,mtj->ij", xs, w_obs, xs) + np.diag(prior_prec)
    rhs = np.einsum("msi,st,mt->i", xs, sig_inv[L:, :], v) + prior_prec * priors.xi_mean
    c = linalg.cholesky(prec, lower=True)
    mean = linalg.cho_solve((c, True), rhs)
    return mean + linalg.solve_triangular(c, rng.standard_normal(k), lower=True, trans="T")


def xi_posterior_moments(layout, theta, idx, ystar, priors):
    """Closed-form mean and covariance of the ``xi`` full conditional (for tests)."""
    L = layout.n_latent
    sig_inv = linalg.inv(theta.sigma)
    b_inv = np.diag(1.0 / priors.xi_var)
    rhs = priors.xi_mean / priors.xi_var
    for i in np.asarray(idx):
        xfull = np.vstack([np.zeros((L, layout.n_xi)), layout.xstar[i]])
        v = np.concatenate([ystar[i], layout.obs[i]])
        b_inv = b_inv + xfull.T @ sig_inv @ xfull
        rhs = rhs + xfull.T @ sig_inv @ v
    cov = linalg.inv(b_inv)
    return cov @ rhs, cov


def _block_loglik(sigma_b, scatter, m):
    try:
        c = linalg.cho_factor(sigma_b, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return -0.5 * m * logdet - 0.5 * np.trace(linalg.cho_solve(c, scatter))


def sigma_log_acceptance(e_cur, e_prop, n_latent_block, df, scale, scatter, m, psi) -> float:
    """Log Metropolis-Hastings ratio for a covariance-block move.

    The target on ``(D, Sigma*)`` is the Wishart prior of ``E`` times the
    separation Jacobian times the Gaussian likelihood in ``Sigma*``; the
    proposal density on ``(D, Sigma*)`` carries the same Jacobian, so both
    Jacobians cancel and the ratio can be evaluated on ``E``.
    """
    _, s_cur = separate_covariance(e_cur, n_latent_block)
    _, s_prop = separate_covariance(e_prop, n_latent_block)
    lt_prop = wishart_logpdf(e_prop, df, scale) + _block_loglik(s_prop, scatter, m)
    if not np.isfinite(lt_prop):
        return -np.inf
    lt_cur = wishart_logpdf(e_cur, df, scale) + _block_loglik(s_cur, scatter, m)
    q_back = wishart_logpdf(e_cur, psi, e_prop / psi)
    q_fwd = wishart_logpdf(e_prop, psi, e_cur / psi)
    return float(lt_prop - lt_cur + q_back - q_fwd)


def update_sigma(layout, theta: ComponentParams, idx, ystar, priors: BasePriorSpec, rng, wishart_scale=1.0):
    """Metropolis-Hastings update of each covariance block of one component.

    ``wishart_scale`` is either one value or one value per block.

    Returns the updated parameters and a list of ``(block, accepted)`` for
    the blocks that used a Metropolis step. Blocks made of a single latent
    coordinate have no identified parameter and are drawn from the prior.
    """
    idx = np.asarray(idx)
    m = idx.size
    L = layout.n_latent
    sigma = theta.sigma.copy()
    d2 = theta.d2.copy()
    if m:
        mean = np.hstack([np.zeros((m, L)), obs_mean(layout, theta.xi, idx)])
        resid = _full_vectors(layout, ystar, idx) - mean
    scales = np.broadcast_to(np.asarray(wishart_scale, dtype=float), (len(layout.blocks),))
    outcomes = []
    for b, bidx in enumerate(layout.blocks):
        lb = layout.block_latent_count(b)
        df = priors.wishart_df[b]
        scale = priors.wishart_scale[np.ix_(bidx, bidx)]
        if bidx.size == 1 and lb == 1:
            e = wishart_rvs(df, scale, rng)
            d2[bidx[0]] = e[0, 0]
            continue
        e_cur = combine_covariance(d2[bidx[:lb]], sigma[np.ix_(bidx, bidx)])
        scatter = resid[:, bidx].T @ resid[:, bidx] if m else np.zeros((bidx.size, bidx.size))
        psi = (bidx.size - 1) + scales[b] * (m + 1)
        try:
            e_prop = wishart_rvs(psi, e_cur / psi, rng)
            ok = np.all(np.diag(e_prop) > 0)
        except linalg.LinAlgError:
            ok = False
        logu = np.log(rng.random())
        if ok and logu < sigma_log_acceptance(e_cur, e_prop, lb, df, scale, scatter, m, psi):
            d2b, sb = separate_covariance(e_prop, lb)
            sigma[np.ix_(bidx, bidx)] = sb
            d2[bidx[:lb]] = d2b
            outcomes.append((b, True))
        else:
            outcomes.append((b, False))
    return theta.replace(sigma=sigma, d2=d2), outcomes


def beta_log_target(layout, theta: ComponentParams, idx, beta1, beta2, tau2, cond=None) -> float:
    """Log of the prior times the latent-integrated likelihood of ``(beta1, beta2)``."""
    from .link import log_latent_prob

    idx = np.asarray(idx)
    lp = -0.5 * (beta1 @ beta1 + beta2 @ beta2) / tau2
    if idx.size == 0 or layout.n_latent == 0:
        return float(lp)
    if cond is None:
        cond = latent_conditional(layout, theta, idx)
    lo, hi = latent_bounds(layout, beta1, beta2, idx)
    return float(lp + np.sum(log_latent_prob(cond.mean, cond.cov, lo, hi)))


def update_beta12(layout, theta: ComponentParams, idx, tau2, rng, beta_scale=0.5):
    """Random-walk Metropolis on ``(beta1, beta2)`` with the latents integrated out."""
    idx = np.asarray(idx)
    r1, r2 = layout.r1, layout.r2
    if r1 + r2 == 0:
        return theta, None
    if idx.size == 0:
        sd = np.sqrt(tau2)
        return theta.replace(beta1=sd * rng.standard_normal(r1), beta2=sd * rng.standard_normal(r2)), None
    step = beta_scale / np.sqrt(idx.size + 1.0)
    delta = step * rng.standard_normal(r1 + r2)
    logu = np.log(rng.random())
    b1 = theta.beta1 + delta[:r1]
    b2 = theta.beta2 + delta[r1:]
    cond = latent_conditional(layout, theta, idx)
    cur = beta_log_target(layout, theta, idx, theta.beta1, theta.beta2, tau2, cond)
    new = beta_log_target(layout, theta, idx, b1, b2, tau2, cond)
    if np.isfinite(new) and (logu < new - cur or not np.isfinite(cur)):
        return theta.replace(beta1=b1, beta2=b2), True
    return theta, False


def impute_latents(layout, theta: ComponentParams, idx, rng, method="exact", current=None, sweeps=1):
    """Draw the latents of areas ``idx`` from their truncated conditional law."""
    idx = np.asarray(idx)
    L = layout.n_latent
    if idx.size == 0 or L == 0:
        return np.zeros((idx.size, L))
    cond = latent_conditional(layout, theta, idx)
    lo, hi = latent_bounds(layout, theta.beta1, theta.beta2, idx)
    if method == "gibbs" and L == 2:
        return sample_trunc_bvn(cond.mean, np.broadcast_to(cond.cov, (idx.size, 2, 2)), lo, hi, rng,
                                sweeps=sweeps, start=current)
    return sample_latent_box(cond.mean, cond.cov, lo, hi, rng)


def allocation_log_probs(layout, components, log_w, use_data=True):
    """Unnormalized log allocation probabilities, shape ``(T, n)``, and the log likelihoods."""
    T, n = log_w.shape
    if not use_data:
        return log_w.copy(), np.zeros((T, n))
    ll = all_component_logliks(layout, components)
    return ll + log_w, ll


def update_allocations(layout, components, log_w, rng, use_data=True):
    """Draw allocations with the latents integrated out.

    Returns ``(alloc, loglik, n_fallback)`` where ``loglik`` is the total
    log likelihood at the new allocations and ``n_fallback`` counts areas for
    which every component had zero likelihood (drawn from the weights alone).
    """
    logp, ll = allocation_log_probs(layout, components, log_w, use_data)
    T, n = logp.shape
    bad = ~np.isfinite(logp.max(axis=0))
    if bad.any():
        logp[:, bad] = log_w[:, bad]
    logp = logp - logp.max(axis=0)
    p = np.exp(logp)
    p /= p.sum(axis=0)
    cdf = np.cumsum(p, axis=0)
    u = rng.random(n)
    alloc = np.minimum((cdf < u).sum(axis=0), T - 1)
    total = float(np.sum(ll[alloc, np.arange(n)]))
    return alloc.astype(np.int64), total, int(bad.sum())


# ---------------------------------------------------------------------------
# chain


@dataclass
class ChainState:
    components: list
    stick: StickState
    ystar: np.ndarray
    loglik: float = float("nan")

    def members(self) -> list:
        order = np.argsort(self.stick.alloc, kind="stable")
        counts = np.bincount(self.stick.alloc, minlength=len(self.components))
        return np.split(order, np.cumsum(counts)[:-1])

    def dump(self) -> dict:
        return {
            "alloc": self.stick.alloc.tolist(),
            "alpha": self.stick.alpha,
            "phi2": self.stick.phi2,
            "lam": self.stick.lam,
            "components": [
                {k: np.asarray(v).tolist() for k, v in asdict(th).items()} for th in self.components
            ],
        }


class _Adapter:
    """Robbins-Monro adaptation of a log proposal scale toward a target rate.

    ``sign`` is +1 when a larger value means bolder proposals (a random-walk
    step) and -1 when it means more timid ones (proposal degrees of freedom).
    """

    def __init__(self, value: float, target: float, sign: float = 1.0):
        self.log_value = float(np.log(value))
        self.target = target
        self.sign = sign
        self.t = 0

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))

    def update(self, rate: float) -> None:
        self.t += 1
        self.log_value += self.sign * (rate - self.target) / (self.t ** 0.6)


class PSBPChain:
    """Markov chain for one dataset and one model layout.

    Parameters
    ----------
    layout : ModelLayout
    adj : AdjacencyMatrix
    config : SamplerConfig
    spatial : bool
        When false, ``lam`` is held at zero.
    priors : BasePriorSpec, optional
        Defaults to :func:`default_priors` built from the data.
    """

    def __init__(self, layout, adj: AdjacencyMatrix, config: SamplerConfig, spatial=True,
                 priors: BasePriorSpec | None = None, rng=None):
        if adj.n != layout.n:
            raise ValueError("graph and dataset disagree on the number of areas")
        self.layout = layout
        self.adj = adj
        self.config = config
        self.spatial = spatial
        self.priors = priors or default_priors(layout, config.tau2, config.wishart_df_extra, config.cross_damp)
        self.priors.validate(layout)
        self.stick_prior = config.stick_prior
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.beta_adapt = _Adapter(config.beta_scale, config.adapt_target)
        self.sigma_adapt = [_Adapter(config.wishart_scale, config.adapt_target, -1.0) for _ in layout.blocks]
        self.lambda_adapt = _Adapter(config.lambda_step, 0.3)
        self.counters = {k: [0, 0] for k in ("beta", "sigma", "lambda", "label_a", "label_b")}
        self.fallbacks = 0
        self.state = self._initial_state()

    # -- initialization -----------------------------------------------------

    def _init_features(self):
        lay = self.layout
        cols = [lay.obs]
        if lay.y1 is not None:
            cols.append(np.log((lay.y1 + 0.5) / lay.E)[:, None])
        if lay.y2 is not None:
            cols.append(logit((lay.y2 + 0.5) / (lay.N + 1.0))[:, None])
        f = np.hstack(cols)
        sd = f.std(axis=0)
        return (f - f.mean(axis=0)) / np.where(sd > 0, sd, 1.0)

    def _initial_state(self) -> ChainState:
        cfg, lay, rng = self.config, self.layout, self.rng
        T, n = cfg.truncation, lay.n
        comps = draw_from_base_many(self.priors, lay, rng, T)
        k = int(min(cfg.init_clusters, T, n))
        if cfg.use_data and k > 1:
            feats = self._init_features()
            _, lab = kmeans2(feats, k, minit="++", seed=rng)
            sizes = np.bincount(lab, minlength=k)
            rank = np.empty(k, dtype=np.int64)
            rank[np.argsort(-sizes, kind="stable")] = np.arange(k)
            alloc = rank[lab]
        else:
            alloc = np.zeros(n, dtype=np.int64)
        if cfg.use_data:
            for h in np.unique(alloc):
                comps[h] = self._init_component(comps[h], np.flatnonzero(alloc == h))
        lam = 1.0 if self.spatial else 0.0
        stick = StickState(
            eta=np.full((T, n), cfg.mu_alpha),
            z=np.full((T, n), np.nan),
            alloc=alloc.astype(np.int64),
            alpha=cfg.mu_alpha,
            phi2=1.0,
            lam=lam,
        )
        ystar = np.zeros((n, lay.n_latent))
        state = ChainState(comps, stick, ystar)
        if cfg.use_data:
            for h, idx in enumerate(state.members()):
                if idx.size:
                    state.ystar[idx] = impute_latents(lay, comps[h], idx, rng)
        return state

    def _init_component(self, theta: ComponentParams, idx) -> ComponentParams:
        lay = self.layout
        beta1 = np.zeros(lay.r1)
        beta2 = np.zeros(lay.r2)
        if lay.r1:
            beta1[0] = np.log((lay.y1[idx].sum() + 0.5) / lay.E[idx].sum())
        if lay.r2:
            beta2[0] = logit((lay.y2[idx].sum() + 0.5) / (lay.N[idx].sum() + 1.0))
        xi = theta.xi.copy()
        obs = lay.obs[idx]
        r3 = lay.r3
        if r3:
            coef, *_ = np.linalg.lstsq(lay.x3[idx], obs[:, 0], rcond=None)
            xi[:r3] = coef
        if lay.n_xi > r3:
            xi[r3:] = obs[:, int(lay.has_continuous):].mean(axis=0)
        sigma = theta.sigma.copy()
        L = lay.n_latent
        resid = obs - obs_mean(lay, xi, idx)
        if idx.size > lay.s_obs + 1 and lay.s_obs:
            cov = np.atleast_2d(np.cov(resid, rowvar=False, bias=True))
            prior_diag = np.diag(self.priors.wishart_scale)[L:] * self.priors.wishart_df.max()
            cov = cov + 1e-3 * np.diag(np.maximum(prior_diag, 1e-8))
            mask = np.zeros((lay.s, lay.s), dtype=bool)
            for b in lay.blocks:
                mask[np.ix_(b, b)] = True
            new = np.eye(lay.s)
            new[L:, L:] = cov
            sigma = np.where(mask, new, 0.0)
        theta = theta.replace(beta1=beta1, beta2=beta2, xi=xi, sigma=sigma, d2=np.ones(L))
        return theta

    # -- one sweep ----------------------------------------------------------

    def sweep(self, adapting: bool, record: bool) -> None:
        cfg, lay, rng, st = self.config, self.layout, self.rng, self.state
        comps = st.components
        beta_acc, sigma_acc = [], [[] for _ in lay.blocks]
        empty = []
        for h, idx in enumerate(st.members()):
            if idx.size == 0 or not cfg.use_data:
                empty.append(h)
                continue
            th = comps[h].replace(xi=update_xi(lay, comps[h], idx, st.ystar, self.priors, rng))
            th, outcomes = update_sigma(lay, th, idx, st.ystar, self.priors, rng,
                                        [a.value for a in self.sigma_adapt])
            for b, ok in outcomes:
                sigma_acc[b].append(ok)
            th, ok = update_beta12(lay, th, idx, self.priors.tau2, rng, self.beta_adapt.value)
            if ok is not None:
                beta_acc.append(ok)
            comps[h] = th
        for h, th in zip(empty, draw_from_base_many(self.priors, lay, rng, len(empty))):
            comps[h] = th

        log_w = log_stick_weights(st.stick.eta)
        alloc, loglik, nfb = update_allocations(lay, comps, log_w, rng, cfg.use_data)
        st.stick.alloc = alloc
        st.loglik = loglik
        self.fallbacks += nfb

        if cfg.use_data:
            for h, idx in enumerate(st.members()):
                if idx.size:
                    st.ystar[idx] = impute_latents(lay, comps[h], idx, rng, cfg.latent_sampler,
                                                   st.ystar[idx], cfg.gibbs_sweeps)

        res = label_switch_a(st.stick, rng)
        if res is not None:
            a, b, ok = res
            if ok:
                comps[a], comps[b] = comps[b], comps[a]
            self._count("label_a", ok, record)
        res = label_switch_b(st.stick, rng)
        if res is not None:
            a, ok = res
            if ok:
                comps[a], comps[a + 1] = comps[a + 1], comps[a]
            self._count("label_b", ok, record)

        update_z(st.stick, rng)
        update_eta_active(st.stick, self.adj, rng)
        lam_ok = update_alpha_phi_lambda(
            st.stick, self.adj, self.stick_prior, rng,
            lambda_step=self.lambda_adapt.value, spatial=self.spatial, mode=cfg.eta_marginal,
        )
        impute_eta_inactive(st.stick, self.adj, rng)

        for ok in beta_acc:
            self._count("beta", ok, record)
        for accs in sigma_acc:
            for ok in accs:
                self._count("sigma", ok, record)
        if self.spatial:
            self._count("lambda", lam_ok, record)
        if adapting and cfg.adapt:
            if beta_acc:
                self.beta_adapt.update(float(np.mean(beta_acc)))
            for b, accs in enumerate(sigma_acc):
                if accs:
                    self.sigma_adapt[b].update(float(np.mean(accs)))
            if self.spatial:
                self.lambda_adapt.update(float(lam_ok))
        if cfg.check_invariants:
            self.check_invariants()

    def _count(self, kernel, ok, record):
        if record:
            self.counters[kernel][0] += int(bool(ok))
            self.counters[kernel][1] += 1

    def check_invariants(self) -> None:
        st = self.state
        L = self.layout.n_latent
        w = np.exp(log_stick_weights(st.stick.eta))
        problems = []
        if np.any(w < 0) or np.any(w > 1) or np.max(np.abs(w.sum(axis=0) - 1.0)) > 1e-12:
            problems.append("weights off the simplex")
        if not z_consistent(st.stick):
            problems.append("z signs disagree with allocations")
        for h, th in enumerate(st.components):
            if L and np.any(np.diag(th.sigma)[:L] != 1.0):
                problems.append(f"component {h}: latent diagonal of Sigma* is not one")
            if np.any(th.d2 <= 0):
                problems.append(f"component {h}: non-positive latent variance")
        if problems:
            raise NumericalFailure("; ".join(problems), st.dump())

    # -- driver -------------------------------------------------------------

    def trace_names(self):
        lay = self.layout
        names = ["alloc"]
        names += [f"y1.{c}" for c in lay.x1_names]
        names += [f"y2.{c}" for c in lay.x2_names]
        names += [f"y3.{c}" for c in lay.x3_names]
        if "count" in lay.latent_kinds:
            names.append("lp.y1")
        if "binomial" in lay.latent_kinds:
            names.append("lp.y2")
        return SCALAR_NAMES, names

    def trace_row(self):
        st, lay = self.state, self.layout
        alloc = st.stick.alloc
        b1 = np.array([th.beta1 for th in st.components])[alloc]
        b2 = np.array([th.beta2 for th in st.components])[alloc]
        b3 = np.array([th.xi[: lay.r3] for th in st.components])[alloc]
        areas = {"alloc": alloc + 1}
        for j, c in enumerate(lay.x1_names):
            areas[f"y1.{c}"] = b1[:, j]
        for j, c in enumerate(lay.x2_names):
            areas[f"y2.{c}"] = b2[:, j]
        for j, c in enumerate(lay.x3_names):
            areas[f"y3.{c}"] = b3[:, j]
        if "count" in lay.latent_kinds:
            areas["lp.y1"] = np.einsum("ij,ij->i", lay.x1, b1)
        if "binomial" in lay.latent_kinds:
            areas["lp.y2"] = np.einsum("ij,ij->i", lay.x2, b2)
        scalars = {
            "alpha": st.stick.alpha,
            "phi2": st.stick.phi2,
            "lam": st.stick.lam,
            "n_occupied": np.unique(alloc).size,
            "loglik": st.loglik,
        }
        return scalars, areas

    def run(self, callback=None, area_ids=None) -> ChainTrace:
        """Run the configured number of sweeps and return the kept draws."""
        cfg = self.config
        snames, anames = self.trace_names()
        trace = ChainTrace(list(snames), anames, self.layout.n, area_ids=area_ids)
        for it in range(cfg.iterations):
            in_burn = it < cfg.burnin
            try:
                with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                    self.sweep(adapting=in_burn, record=not in_burn)
            except (linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                raise NumericalFailure(f"iteration {it}: {exc}", self.state.dump()) from exc
            if not in_burn and (it - cfg.burnin) % cfg.thin == 0:
                trace.append(it, *self.trace_row())
            if callback is not None:
                callback(it, self)
        return trace.finalize(
            acceptance=self.acceptance_rates(),
            tuning=self.tuning(),
            allocation_fallbacks=self.fallbacks,
            config=cfg.to_dict(),
        )

    def acceptance_rates(self) -> dict:
        return {k: (a / p if p else float("nan")) for k, (a, p) in self.counters.items()}

    def tuning(self) -> dict:
        return {
            "beta_scale": self.beta_adapt.value,
            "wishart_scale": [a.value for a in self.sigma_adapt],
            "lambda_step": self.lambda_adapt.value,
        }


def run_chain(data, graph, variant, config: SamplerConfig, rng=None, priors=None) -> ChainTrace:
    """Fit a mixture variant to a dataset.

    Parameters
    ----------
    data : Dataset or ModelLayout
    graph : SpatialGraph or AdjacencyMatrix
    variant : ModelVariant or str
    config : SamplerConfig
    rng : numpy Generator, optional
        Defaults to ``default_rng(config.seed)``.
    """
    from .data import Dataset
    from .graph import SpatialGraph, adjacency
    from .model import ModelVariant, build_layout

    if isinstance(variant, str):
        variant = ModelVariant.from_name(variant)
    area_ids = None
    if isinstance(data, Dataset):
        area_ids = data.area_ids
        layout = build_layout(data, variant, config.standardize_confounders)
    else:
        layout = data
    adj = adjacency(graph) if isinstance(graph, SpatialGraph) else graph
    chain = PSBPChain(layout, adj, config, spatial=variant.spatial, priors=priors, rng=rng)
    trace = chain.run(area_ids=area_ids)
    trace.meta["model"] = variant_label(variant)
    return trace


def variant_label(variant) -> str:
    from .model import ModelVariant

    for name in ModelVariant.names():
        if ModelVariant.from_name(name) == variant:
            return name
    return str(variant)
