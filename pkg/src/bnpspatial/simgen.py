"""Synthetic data for the two simulation designs, and error metrics.

Design 1 places areas in clusters. Within a cluster the latent count
variable, a risk-factor score and a confounder are trivariate normal; the
risk factor is mapped to Uniform(-1.5, 1.5) through the normal cdf and the
latent variable is discretized with Poisson cut points at rate
``E exp(b0 + b1 x + b2 x^2 + b3 w)``.

Design 2 draws log relative risks from the spatial field
``eta = u / phi``, ``u ~ N(0, (lam A + I)^{-1})``, and Poisson counts at
rate ``E exp(eta)``.

Expected counts are Uniform(10, 20) in both.
"""
from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from .data import Dataset
from .graph import SpatialGraph, adjacency, grid_graph, sample_gmrf
from .link import CutPointRule, latent_to_count

PRESET_DIR = Path(__file__).parent / "data"


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSpec:
    """Generating parameters of one cluster (design 1).

    The latent and risk-factor scores have mean 0, variance 1 and are
    uncorrelated with each other; ``rho_yw`` and ``rho_xw`` are their
    correlations with the confounder.
    """

    name: str
    mu_w: float
    var_w: float
    rho_yw: float = 0.0
    rho_xw: float = 0.0
    beta: tuple = (0.0, 0.0, 0.0, 0.0)
    status: str = "reconstruction"

    def __post_init__(self):
        if not self.var_w > 0:
            raise SpecError(f"cluster {self.name}: var_w must be positive")
        if len(self.beta) != 4:
            raise SpecError(f"cluster {self.name}: beta needs four entries (b0, b1, b2, b3)")
        try:
            linalg.cholesky(self.correlation(), lower=True)
        except linalg.LinAlgError:
            raise SpecError(f"cluster {self.name}: implied correlation matrix is not positive definite") from None

    def correlation(self) -> np.ndarray:
        return np.array([
            [1.0, 0.0, self.rho_yw],
            [0.0, 1.0, self.rho_xw],
            [self.rho_yw, self.rho_xw, 1.0],
        ])

    def covariance(self) -> np.ndarray:
        sd = np.array([1.0, 1.0, np.sqrt(self.var_w)])
        return self.correlation() * np.outer(sd, sd)

    def log_rate(self, x, w):
        b0, b1, b2, b3 = self.beta
        return b0 + b1 * x + b2 * x * x + b3 * w

    def slope(self, x):
        """Derivative of the log relative risk with respect to the risk factor."""
        return self.beta[1] + 2.0 * self.beta[2] * np.asarray(x, dtype=float)


def read_cluster_specs(path) -> list:
    """Read a cluster-spec file: one ``[name]`` section per cluster."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise SpecError(f"cannot read cluster specs from {path}: {exc}") from exc
    specs = []
    for name in cp.sections():
        sec = cp[name]
        try:
            beta = tuple(float(v) for v in sec.get("beta", "0, 0, 0, 0").split(","))
            specs.append(ClusterSpec(
                name=name,
                mu_w=sec.getfloat("mu_w"),
                var_w=sec.getfloat("var_w", 1.0),
                rho_yw=sec.getfloat("rho_yw", 0.0),
                rho_xw=sec.getfloat("rho_xw", 0.0),
                beta=beta,
                status=sec.get("status", "reconstruction"),
            ))
        except (TypeError, ValueError) as exc:
            raise SpecError(f"cluster {name}: {exc}") from exc
    if not specs:
        raise SpecError(f"{path}: no clusters defined")
    return specs


def write_cluster_specs(specs, path, header: str = "") -> None:
    cp = configparser.ConfigParser()
    for s in specs:
        cp[s.name] = {
            "mu_w": repr(s.mu_w),
            "var_w": repr(s.var_w),
            "rho_yw": repr(s.rho_yw),
            "rho_xw": repr(s.rho_xw),
            "beta": ", ".join(repr(float(b)) for b in s.beta),
            "status": s.status,
        }
    with open(path, "w") as fh:
        if header:
            fh.write("".join(f"# {line}\n" for line in header.splitlines()))
        cp.write(fh)


def default_cluster_specs() -> list:
    return read_cluster_specs(PRESET_DIR / "study1_clusters.ini")


def quadrant_labels(rows: int, cols: int, names=("NW", "NE", "SW", "SE")) -> np.ndarray:
    """Cluster names of a grid split into four quadrants (row-major areas)."""
    r = np.arange(rows * cols) // cols
    c = np.arange(rows * cols) % cols
    south = r >= rows // 2
    east = c >= cols // 2
    out = np.empty(rows * cols, dtype=object)
    out[~south & ~east] = names[0]
    out[~south & east] = names[1]
    out[south & ~east] = names[2]
    out[south & east] = names[3]
    return out


@dataclass
class Truth:
    """True area-level quantities behind a synthetic dataset."""

    area_ids: np.ndarray
    cluster: np.ndarray
    beta1: np.ndarray
    eta: np.ndarray

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["area", "cluster", "beta1", "eta"])
            for a, c, b, e in zip(self.area_ids, self.cluster, self.beta1, self.eta):
                wr.writerow([int(a), c, repr(float(b)), repr(float(e))])

    @classmethod
    def read(cls, path) -> "Truth":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise SpecError(f"{path}: empty truth file")
        return cls(
            area_ids=np.array([int(r["area"]) for r in rows]),
            cluster=np.array([r["cluster"] for r in rows], dtype=object),
            beta1=np.array([float(r["beta1"]) for r in rows]),
            eta=np.array([float(r["eta"]) for r in rows]),
        )


def gen_study1(graph: SpatialGraph, labels, specs, rng) -> tuple:
    """Clustered data with one risk factor ``x`` and one confounder ``w``.

    Returns ``(Dataset, Truth)``; the true ``beta1`` of an area is the local
    slope of its log relative risk in ``x``.
    """
    labels = np.asarray(labels, dtype=object)
    n = graph.n
    if labels.shape != (n,):
        raise SpecError("one cluster label per area is required")
    by_name = {s.name: s for s in specs}
    missing = set(labels) - set(by_name)
    if missing:
        raise SpecError(f"no spec for clusters {sorted(missing)}")
    ystar = np.zeros(n)
    xstar = np.zeros(n)
    w = np.zeros(n)
    for name in sorted(set(labels)):
        idx = np.flatnonzero(labels == name)
        spec = by_name[name]
        mean = np.array([0.0, 0.0, spec.mu_w])
        draws = mean + rng.standard_normal((idx.size, 3)) @ linalg.cholesky(spec.covariance(), lower=True).T
        ystar[idx], xstar[idx], w[idx] = draws.T
    x = 3.0 * ndtr(xstar) - 1.5
    E = rng.uniform(10.0, 20.0, n)
    log_rate = np.zeros(n)
    slope = np.zeros(n)
    for name in set(labels):
        idx = labels == name
        log_rate[idx] = by_name[name].log_rate(x[idx], w[idx])
        slope[idx] = by_name[name].slope(x[idx])
    y = latent_to_count(ystar, CutPointRule.poisson(E * np.exp(log_rate)))
    ds = Dataset(y1=y, E=E, w=w[:, None], x=x[:, None], w_names=["w"], x_names=["x"])
    return ds, Truth(ds.area_ids, labels, slope, log_rate)


def gen_study2(graph: SpatialGraph, lam: float, inv_phi: float, rng, adj=None) -> tuple:
    """Spatially smooth relative risks: ``eta = inv_phi * u`` with ``u`` from the field."""
    if inv_phi < 0:
        raise SpecError("inv_phi must be nonnegative")
    adj = adj if adj is not None else adjacency(graph)
    u = sample_gmrf(adj, lam, rng)
    eta = inv_phi * u
    E = rng.uniform(10.0, 20.0, graph.n)
    y = rng.poisson(E * np.exp(eta))
    ds = Dataset(y1=y, E=E)
    labels = np.array(["all"] * graph.n, dtype=object)
    return ds, Truth(ds.area_ids, labels, np.zeros(graph.n), eta)


def study1_layout(rows: int = 10, cols: int = 10):
    g = grid_graph(rows, cols)
    return g, quadrant_labels(rows, cols)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricReport:
    mse: np.ndarray           # per area
    ramse: dict               # cluster name -> RAMSE
    overall: float

    def __post_init__(self):
        if np.any(self.mse < 0):
            raise ValueError("mean squared errors must be nonnegative")


def posterior_mse(draws, truth) -> np.ndarray:
    """Per-area posterior mean of ``(truth - draw)^2``; ``draws`` is ``(K, n)``."""
    draws = np.asarray(draws, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if draws.ndim != 2 or draws.shape[0] == 0:
        raise ValueError("need a non-empty (draws, areas) array")
    if draws.shape[1] != truth.size:
        raise ValueError("draws and truth disagree on the number of areas")
    return np.mean((draws - truth[None]) ** 2, axis=0)


def ramse(draws, truth, clusters=None) -> MetricReport:
    """Root averaged posterior mean squared error, overall and per cluster.

    ``draws`` is an array ``(K, n)`` of area-level coefficient draws (or a
    trace together with a key, see :func:`trace_ramse`).
    """
    mse = posterior_mse(draws, truth)
    per = {}
    if clusters is not None:
        clusters = np.asarray(clusters, dtype=object)
        for c in sorted(set(clusters)):
            per[c] = float(np.sqrt(np.mean(mse[clusters == c])))
    return MetricReport(mse, per, float(np.sqrt(np.mean(mse))))


def trace_ramse(trace, truth: Truth, key: str = "y1.x_x") -> MetricReport:
    return ramse(trace.area(key), truth.beta1, truth.cluster)


def eta_ramse(estimates, truths) -> float:
    """Pooled root mean squared error of point estimates over datasets.

    ``estimates`` and ``truths`` are sequences (one entry per dataset) of
    length-``n`` arrays.
    """
    est = [np.asarray(e, dtype=float) for e in estimates]
    tru = [np.asarray(t, dtype=float) for t in truths]
    if len(est) != len(tru) or not est:
        raise ValueError("need one truth per estimate and at least one dataset")
    if any(e.shape != t.shape for e, t in zip(est, tru)):
        raise ValueError("estimate and truth dimensions differ")
    sq = np.concatenate([(e - t) ** 2 for e, t in zip(est, tru)])
    return float(np.sqrt(np.mean(sq)))
