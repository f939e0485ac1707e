"""Chain diagnostics and the joint-distribution ("getting it right") test.

The joint test compares two ways of sampling ``(parameters, data)`` from the
model:

* marginal-conditional: parameters from the prior, then data given them;
* successive-conditional: alternate one sweep of the posterior sampler with
  a fresh draw of the data given the current parameters.

Both target the same joint law, so the means of any test function must
agree. Disagreement beyond Monte Carlo error points at a kernel that does not
leave its conditional invariant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .graph import adjacency, grid_graph, sample_gmrf
from .model import (
    BasePriorSpec,
    ModelVariant,
    build_layout,
    draw_from_base_many,
    sample_observations,
)
from .sampler import ChainState, PSBPChain, SamplerConfig
from .stick import StickState, stick_weights


def batch_means_se(x, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean by non-overlapping batch means.

    ``x`` has shape ``(K,)`` or ``(K, p)``; trailing draws that do not fill a
    batch are dropped.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[0]
    size = k // n_batches
    if size < 1:
        raise ValueError("not enough draws for the requested number of batches")
    means = x[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return np.squeeze(means.std(axis=0, ddof=1) / np.sqrt(n_batches))


def effective_sample_size(x, n_batches: int = 50) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    se = np.atleast_1d(batch_means_se(x, n_batches))
    var = np.atleast_1d(x.var(axis=0, ddof=1))
    return np.squeeze(var / np.maximum(se ** 2, 1e-300))


def geweke_z(independent, chain, n_batches: int = 50) -> np.ndarray:
    """z-scores comparing iid draws with autocorrelated chain draws, per column."""
    a = np.atleast_2d(np.asarray(independent, dtype=float).T).T
    b = np.atleast_2d(np.asarray(chain, dtype=float).T).T
    se_a = a.std(axis=0, ddof=1) / np.sqrt(a.shape[0])
    se_b = np.atleast_1d(batch_means_se(b, n_batches))
    return (a.mean(axis=0) - b.mean(axis=0)) / np.sqrt(se_a ** 2 + se_b ** 2)


@dataclass
class GewekeSetup:
    """A small fully specified model for the joint-distribution test.

    The design (covariates, offsets, trials) is held fixed; every response
    is redrawn.
    """

    variant: str = "M1"
    rows: int = 3
    cols: int = 3
    truncation: int = 3
    lambda_max: float = 10.0
    tau2: float = 1.0
    responses: tuple = ("count", "binomial", "continuous")
    n_confounders: int = 1
    seed: int = 0
    config: SamplerConfig = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed + 991)
        n = self.rows * self.cols
        self.graph = grid_graph(self.rows, self.cols)
        self.adj = adjacency(self.graph)
        x = rng.uniform(-1.0, 1.0, (n, 1))
        w = rng.standard_normal((n, self.n_confounders))
        kw = {}
        if "count" in self.responses:
            kw.update(y1=np.zeros(n), E=rng.uniform(1.0, 3.0, n))
        if "binomial" in self.responses:
            kw.update(y2=np.zeros(n), N=rng.integers(1, 5, n).astype(float))
        if "continuous" in self.responses:
            kw.update(y3=np.zeros(n))
        ds = Dataset(**kw, w=w, x=x)
        var = ModelVariant.from_name(self.variant)
        self.spatial = var.spatial
        self.layout = build_layout(ds, var, standardize_confounders=False)
        lay = self.layout
        s = lay.s
        dfs = np.array([b.size + 2.0 for b in lay.blocks])
        scale = np.zeros((s, s))
        for b, idx in enumerate(lay.blocks):
            scale[np.ix_(idx, idx)] = np.eye(idx.size) / dfs[b]
        self.priors = BasePriorSpec(
            tau2=self.tau2,
            xi_mean=np.zeros(lay.n_xi),
            xi_var=np.ones(lay.n_xi),
            wishart_df=dfs,
            wishart_scale=scale,
        )
        self.config = SamplerConfig(
            iterations=0, burnin=0, truncation=self.truncation, lambda_max=self.lambda_max,
            adapt=False, beta_scale=1.0, wishart_scale=4.0, lambda_step=3.0, init_clusters=1,
        )

    # -- the two simulators ----------------------------------------------------

    def prior_state(self, rng) -> tuple:
        """Parameters from the prior; returns ``(ChainState, layout with data)``."""
        cfg, lay = self.config, self.layout
        T, n = cfg.truncation, lay.n
        alpha = cfg.mu_alpha + np.sqrt(cfg.sigma2_alpha) * rng.standard_normal()
        phi2 = rng.gamma(cfg.a_phi, 1.0 / cfg.b_phi)
        lam = rng.uniform(0.0, cfg.lambda_max) if self.spatial else 0.0
        eta = alpha + sample_gmrf(self.adj, lam, rng, size=T) / np.sqrt(phi2)
        w = stick_weights(eta)
        alloc = (np.cumsum(w, axis=0) < rng.random(n)).sum(axis=0)
        alloc = np.minimum(alloc, T - 1).astype(np.int64)
        comps = draw_from_base_many(self.priors, lay, rng, T)
        stick = StickState(eta, np.full((T, n), np.nan), alloc, float(alpha), float(phi2), float(lam))
        state = ChainState(comps, stick, np.zeros((n, lay.n_latent)))
        return state, self.redraw_data(state, lay, rng)

    def redraw_data(self, state: ChainState, layout, rng):
        """Draw responses and latents given the parameters; updates ``state.ystar``."""
        n = layout.n
        y1 = np.zeros(n, dtype=np.int64)
        y2 = np.zeros(n, dtype=np.int64)
        obs = np.zeros((n, layout.s_obs))
        for h, idx in enumerate(state.members()):
            if idx.size == 0:
                continue
            a, b, o, lat = sample_observations(layout, state.components[h], idx, rng)
            if a is not None:
                y1[idx] = a
            if b is not None:
                y2[idx] = b
            obs[idx] = o
            state.ystar[idx] = lat
        return layout.with_observations(
            y1=y1 if layout.y1 is not None else None,
            y2=y2 if layout.y2 is not None else None,
            obs=obs,
        )

    def statistics(self, state: ChainState) -> np.ndarray:
        """Test functions: first and second moments of label-invariant quantities."""
        st = state.stick
        th = state.components[st.alloc[0]]
        base = [st.alpha, st.phi2, st.lam]
        base += list(th.beta1) + list(th.beta2) + list(th.xi)
        lay = self.layout
        L = lay.n_latent
        iu = np.triu_indices(lay.s)
        base += list(th.sigma[iu][np.array([not (i == j and i < L) for i, j in zip(*iu)], dtype=bool)])
        base = np.array(base, dtype=float)
        extra = [np.log(st.phi2), float(np.unique(st.alloc).size), float(st.alloc[0] == st.alloc[-1])]
        return np.concatenate([base, base ** 2, extra])

    def statistic_names(self) -> list:
        lay = self.layout
        L = lay.n_latent
        names = ["alpha", "phi2", "lam"]
        names += [f"beta1[{c}]" for c in lay.x1_names] + [f"beta2[{c}]" for c in lay.x2_names]
        names += [f"xi[{j}]" for j in range(lay.n_xi)]
        iu = np.triu_indices(lay.s)
        names += [f"sigma[{i},{j}]" for i, j in zip(*iu) if not (i == j and i < L)]
        return names + [f"{nm}^2" for nm in names] + ["log phi2", "n_occupied", "same_label(1,n)"]

    def marginal_conditional(self, draws: int, rng) -> np.ndarray:
        return np.array([self.statistics(self.prior_state(rng)[0]) for _ in range(draws)])

    def successive_conditional(self, sweeps: int, rng) -> np.ndarray:
        state, layout = self.prior_state(rng)
        chain = PSBPChain(layout, self.adj, self.config, spatial=self.spatial, priors=self.priors, rng=rng)
        chain.state = state
        out = np.empty((sweeps, len(self.statistic_names())))
        for t in range(sweeps):
            chain.sweep(adapting=False, record=True)
            chain.layout = self.redraw_data(chain.state, chain.layout, rng)
            out[t] = self.statistics(chain.state)
        self.last_chain = chain
        return out


def geweke_test(setup: GewekeSetup, sweeps: int = 20000, draws: int | None = None, seed: int = 1,
                n_batches: int = 50):
    """Run both simulators and return ``(names, z-scores)``."""
    rng = np.random.default_rng(seed)
    mc = setup.marginal_conditional(draws or sweeps, rng)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        sc = setup.successive_conditional(sweeps, rng)
    return setup.statistic_names(), geweke_z(mc, sc, n_batches)
