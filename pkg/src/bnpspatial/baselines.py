"""Comparator models: BYM-type Poisson CAR, MCAR varying coefficients, and the
conditional Poisson mixture.

Both CAR samplers use single-site Metropolis sweeps over areas (compiled
kernels), conjugate updates for the variance parameters, and re-centre the
intrinsic fields to sum to zero within each connected component after every
sweep, moving the removed mean into the intercept.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .data import Dataset
from .graph import SpatialGraph
from .sampler import SamplerConfig, run_chain
from .trace import ChainTrace


@dataclass
class CarConfig:
    """Run length and hyperparameters of the CAR samplers.

    ``tau2 ~ InvGamma(tau2_shape, tau2_rate)``; the MCAR precision has a
    ``Wishart(omega_df, omega_scale * I)`` prior (for the diagonal variant,
    independent ``Gamma(omega_df / 2, rate=1 / (2 omega_scale))`` entries,
    the marginal law of a Wishart diagonal).
    """

    iterations: int = 2000
    burnin: int = 1000
    thin: int = 1
    seed: int = 0
    tau2_shape: float = 1.0
    tau2_rate: float = 0.1
    omega_df: float = 4.0
    omega_scale: float = 1.0
    step_scale: float = 1.0
    fixed_step: float = 1.0
    adapt: bool = True
    adapt_target: float = 0.35

    def __post_init__(self):
        if self.iterations < 0 or self.burnin < 0 or self.thin < 1:
            raise ValueError("iterations and burn-in must be nonnegative and thinning positive")
        if self.tau2_shape <= 0 or self.tau2_rate <= 0:
            raise ValueError("inverse-gamma hyperparameters must be positive")
        if self.omega_df <= 2 or self.omega_scale <= 0:
            raise ValueError("Wishart prior needs df > 2 and a positive scale")

    def to_dict(self) -> dict:
        return asdict(self)


class _Adapt:
    def __init__(self, value, target):
        self.log_value = float(np.log(value))
        self.target = target
        self.t = 0

    @property
    def value(self):
        return float(np.exp(self.log_value))

    def update(self, rate):
        self.t += 1
        self.log_value += (rate - self.target) / self.t ** 0.6


class _GraphArrays:
    def __init__(self, graph: SpatialGraph):
        self.offsets, self.indices = graph.csr()
        self.n_nb = graph.n_neighbors.astype(float)
        labels = graph.connected_components()
        sizes = np.bincount(labels)
        self.groups = [np.flatnonzero(labels == k) for k in np.flatnonzero(sizes > 1)]
        self.isolated = self.n_nb == 0
        # rank of the intrinsic precision: one null direction per non-trivial component
        self.rank = graph.n - len(self.groups)
        self.edges = graph.edges

    def recentre(self, b):
        """Sum-to-zero within each component; returns the mean removed from the largest."""
        shift = np.zeros(b.shape[1:]) if b.ndim > 1 else 0.0
        largest = max(self.groups, key=len) if self.groups else None
        for g in self.groups:
            m = b[g].mean(axis=0)
            b[g] -= m
            if g is largest:
                shift = m
        return shift

    def pair_scatter(self, b):
        if b.ndim == 1:
            d = b[self.edges[:, 0]] - b[self.edges[:, 1]]
            return float(d @ d + np.sum(b[self.isolated] ** 2))
        d = b[self.edges[:, 0]] - b[self.edges[:, 1]]
        iso = b[self.isolated]
        return d.T @ d + iso.T @ iso


def fit_bym(counts, offsets, graph: SpatialGraph, config: CarConfig, rng=None, area_ids=None) -> ChainTrace:
    """Poisson log-linear model with an intrinsic CAR random effect.

    ``log rate_i = log E_i + mu + b_i`` with ``b`` intrinsic CAR (neighbour
    mean, variance ``tau2 / n_i``), a flat prior on ``mu``. Areas without
    neighbours get an ``N(0, tau2)`` effect.

    The trace holds ``mu``, ``tau2`` and the area log relative risks
    ``mu + b_i`` (keys ``y1.intercept`` and ``lp.y1``).
    """
    y = np.asarray(counts, dtype=float)
    e = np.asarray(offsets, dtype=float)
    n = graph.n
    if y.shape != (n,) or e.shape != (n,):
        raise ValueError("counts and offsets must have one entry per area")
    if np.any(e <= 0) or np.any(y < 0):
        raise ValueError("offsets must be positive and counts nonnegative")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ga = _GraphArrays(graph)
    b = np.log((y + 0.5) / e)
    mu = float(np.log(y.sum() / e.sum())) if y.sum() > 0 else float(np.log(0.5 / e.sum()))
    b -= mu
    mu += ga.recentre(b)
    tau2 = 1.0
    adapt = _Adapt(config.step_scale, config.adapt_target)
    trace = ChainTrace(["mu", "tau2"], ["y1.intercept", "lp.y1"], n, area_ids=area_ids)
    acc = [0, 0]
    for it in range(config.iterations):
        burn = it < config.burnin
        step = adapt.value / np.sqrt(ga.n_nb / tau2 + np.maximum(y, 1.0))
        step = np.where(ga.isolated, adapt.value / np.sqrt(1.0 / tau2 + np.maximum(y, 1.0)), step)
        normals = rng.standard_normal(n)
        logu = np.log(rng.random(n))
        e_base = e * np.exp(mu)
        got = kernels.car_sweep(b, y, e_base, ga.offsets, ga.indices, ga.n_nb, tau2, step, normals, logu)
        mu += ga.recentre(b)
        # exp(mu) | b is Gamma(sum y, sum E exp(b)) under a flat prior on mu
        mu = float(np.log(rng.gamma(max(y.sum(), 1e-8), 1.0 / np.sum(e * np.exp(b)))))
        shape = config.tau2_shape + 0.5 * ga.rank
        rate = config.tau2_rate + 0.5 * ga.pair_scatter(b)
        tau2 = float(1.0 / rng.gamma(shape, 1.0 / rate))
        if burn and config.adapt:
            adapt.update(got / n)
        elif not burn:
            acc[0] += got
            acc[1] += n
            if (it - config.burnin) % config.thin == 0:
                lp = mu + b
                trace.append(it, {"mu": mu, "tau2": tau2}, {"y1.intercept": lp, "lp.y1": lp})
    return trace.finalize(
        model="BYM",
        acceptance={"area": acc[0] / acc[1] if acc[1] else float("nan")},
        tuning={"step_scale": adapt.value},
        config=config.to_dict(),
    )


def omega_posterior_params(b, ga_or_graph, df0: float, scale0: float):
    """Degrees of freedom and scale of the Wishart full conditional of ``Omega``."""
    ga = ga_or_graph if isinstance(ga_or_graph, _GraphArrays) else _GraphArrays(ga_or_graph)
    p = b.shape[1]
    s_inv = np.eye(p) / scale0 + ga.pair_scatter(b)
    return df0 + ga.rank, linalg.inv(s_inv)


def fit_mcar(ds: Dataset, graph: SpatialGraph, config: CarConfig, rng=None, diagonal: bool = False) -> ChainTrace:
    """Poisson spatially varying coefficient model with a multivariate CAR prior.

    ``log rate_i = log E_i + d_i (beta + b_i)`` with ``d_i = (1, x_i, w_i)``
    using the raw covariates, ``b`` multivariate intrinsic CAR with
    precision ``Omega`` (full, or diagonal when ``diagonal``), and a flat
    prior on ``beta``.
    """
    if not ds.has_count:
        raise ValueError("the MCAR model needs a count response")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n = ds.n
    y = ds.y1.astype(float)
    e = ds.E.astype(float)
    design = np.ascontiguousarray(np.hstack([np.ones((n, 1)), ds.x, ds.w]))
    names = ["intercept"] + [f"x_{nm}" for nm in ds.x_names] + [f"w_{nm}" for nm in ds.w_names]
    p = design.shape[1]
    ga = _GraphArrays(graph)
    beta = np.zeros(p)
    beta[0] = np.log((y.sum() + 0.5) / e.sum())
    b = np.zeros((n, p))
    omega = np.eye(p) * config.omega_df * config.omega_scale
    area_adapt = _Adapt(config.step_scale, config.adapt_target)
    beta_adapt = _Adapt(config.fixed_step, 0.3)
    scalar_names = [f"beta.{c}" for c in names] + [f"omega_{i + 1}{j + 1}" for i in range(p) for j in range(i, p)]
    area_names = [f"y1.{c}" for c in names] + ["lp.y1"]
    trace = ChainTrace(scalar_names, area_names, n, area_ids=ds.area_ids)
    acc = {"area": [0, 0], "beta": [0, 0]}
    yfloor = np.maximum(y, 1.0)
    xxt = design[:, :, None] * design[:, None, :]
    iu = np.triu_indices(p)

    def loglik(bt):
        eta = design @ bt + np.einsum("ij,ij->i", design, b)
        return float(np.sum(y * eta - e * np.exp(eta)))

    cur_ll = loglik(beta)
    for it in range(config.iterations):
        burn = it < config.burnin
        # per-area proposals ~ scaled inverse of (prior precision + Poisson curvature)
        w_nb = np.where(ga.isolated, 1.0, ga.n_nb)
        hess = w_nb[:, None, None] * omega[None] + yfloor[:, None, None] * xxt
        cov = np.linalg.inv(hess)
        chol = np.ascontiguousarray(area_adapt.value * np.linalg.cholesky(cov))
        normals = np.ascontiguousarray(rng.standard_normal((n, p)))
        logu = np.log(rng.random(n))
        got = kernels.mcar_sweep(b, beta, design, y, e, ga.offsets, ga.indices, ga.n_nb,
                                 np.ascontiguousarray(omega), chol, normals, logu)
        beta = beta + ga.recentre(b)
        cur_ll = loglik(beta)
        # fixed effects: random walk scaled by the Fisher information at the current fit
        info = design.T @ (yfloor[:, None] * design)
        prop = beta + beta_adapt.value * linalg.solve_triangular(
            linalg.cholesky(info, lower=True), rng.standard_normal(p), lower=True, trans="T")
        new_ll = loglik(prop)
        ok = np.log(rng.random()) < new_ll - cur_ll
        if ok:
            beta, cur_ll = prop, new_ll
        if diagonal:
            scat = np.diag(ga.pair_scatter(b))
            shape = 0.5 * config.omega_df + 0.5 * ga.rank
            rate = 0.5 / config.omega_scale + 0.5 * scat
            omega = np.diag(rng.gamma(shape, 1.0 / rate))
        else:
            df, scale = omega_posterior_params(b, ga, config.omega_df, config.omega_scale)
            from .model import wishart_rvs

            omega = wishart_rvs(df, 0.5 * (scale + scale.T), rng)
        if burn and config.adapt:
            area_adapt.update(got / n)
            beta_adapt.update(float(ok))
        elif not burn:
            acc["area"][0] += got
            acc["area"][1] += n
            acc["beta"][0] += int(ok)
            acc["beta"][1] += 1
            if (it - config.burnin) % config.thin == 0:
                coef = beta[None] + b
                scal = {f"beta.{c}": beta[j] for j, c in enumerate(names)}
                scal.update({f"omega_{i + 1}{j + 1}": omega[i, j] for i, j in zip(*iu)})
                areas = {f"y1.{c}": coef[:, j] for j, c in enumerate(names)}
                areas["lp.y1"] = np.einsum("ij,ij->i", design, coef)
                trace.append(it, scal, areas)
    return trace.finalize(
        model="M6A" if diagonal else "M6",
        acceptance={k: (a / t if t else float("nan")) for k, (a, t) in acc.items()},
        tuning={"step_scale": area_adapt.value, "fixed_step": beta_adapt.value},
        config=config.to_dict(),
    )


def fit_m5(ds: Dataset, graph: SpatialGraph, config: SamplerConfig, rng=None, covariates: bool = True) -> ChainTrace:
    """Spatial probit stick-breaking mixture of Poisson regressions.

    With ``covariates=False`` the components have intercepts only (the
    nonparametric relative-risk model).
    """
    if not ds.has_count:
        raise ValueError("the Poisson mixture needs a count response")
    if covariates:
        data = Dataset(y1=ds.y1, E=ds.E, w=ds.w, x=ds.x, w_names=ds.w_names, x_names=ds.x_names,
                       area_ids=ds.area_ids)
        name = "M5"
    else:
        data = Dataset(y1=ds.y1, E=ds.E, area_ids=ds.area_ids)
        name = "NP"
    trace = run_chain(data, graph, name, config, rng)
    trace.meta["model"] = name
    return trace
