"""Spatially indexed probit stick-breaking weights.

Level ``h`` of the stick process carries a score field ``eta_h`` over the
areas, ``eta_h = alpha + u_h / phi`` with ``u_h`` a GMRF with precision
``Q = lam * A + I``. Area ``i`` receives weight

    pi_hi = Phi(eta_hi) * prod_{l < h} (1 - Phi(eta_li))

and the last level absorbs the remaining mass. Allocations are augmented
with Gaussian variables ``z_li ~ N(eta_li, 1)``: negative for levels below
the allocation, positive at it.

Level ``h`` is *active* for the areas allocated to ``h`` or beyond; only
those areas carry ``z`` information about ``eta_h``. The final level never
does, because its stick is forced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr

from .graph import AdjacencyMatrix, SpatialGraph
from .link import sample_trunc_normal_1d


@dataclass
class StickPrior:
    """Hyperpriors of the weight process.

    ``alpha ~ N(mu_alpha, sigma2_alpha)``, ``phi^2 ~ Gamma(a_phi, rate=b_phi)``
    and ``lam ~ Uniform(0, lambda_max)``.
    """

    mu_alpha: float = 0.0
    sigma2_alpha: float = 1.0
    a_phi: float = 1.0
    b_phi: float = 0.1
    lambda_max: float = 50.0


@dataclass
class StickState:
    eta: np.ndarray      # (T, n)
    z: np.ndarray        # (T, n), nan where no augmentation variable exists
    alloc: np.ndarray    # (n,), 0-based labels
    alpha: float
    phi2: float
    lam: float

    @property
    def T(self) -> int:
        return self.eta.shape[0]

    @property
    def n(self) -> int:
        return self.eta.shape[1]

    def copy(self) -> "StickState":
        return StickState(self.eta.copy(), self.z.copy(), self.alloc.copy(), self.alpha, self.phi2, self.lam)


# ---------------------------------------------------------------------------
# weights


def log_stick_weights(eta: np.ndarray) -> np.ndarray:
    """Log weights for every level and area; ``eta`` has shape ``(T, ...)``."""
    eta = np.asarray(eta, dtype=float)
    T = eta.shape[0]
    log_up = log_ndtr(eta[: T - 1])
    log_down = log_ndtr(-eta[: T - 1])
    out = np.empty_like(eta)
    before = np.zeros(eta.shape[1:])
    for h in range(T - 1):
        out[h] = log_up[h] + before
        before = before + log_down[h]
    out[T - 1] = before
    return out


def stick_weights(eta: np.ndarray) -> np.ndarray:
    return np.exp(log_stick_weights(eta))


def weights_from_eta(eta_column) -> np.ndarray:
    """Weights of one area from its ``T`` scores (final stick forced)."""
    return stick_weights(np.asarray(eta_column, dtype=float)[:, None])[:, 0]


def active_mask(alloc: np.ndarray, T: int) -> np.ndarray:
    """``(T, n)`` mask of areas allocated at or beyond each level (none at the last)."""
    levels = np.arange(T)[:, None]
    mask = alloc[None, :] >= levels
    mask[T - 1] = False
    return mask


# ---------------------------------------------------------------------------
# z augmentation (allocation-consistent truncated normals)


def update_z(state: StickState, rng: np.random.Generator) -> np.ndarray:
    """Draw ``z_li`` for ``l <= alloc_i`` (no positive draw at the forced level)."""
    T, n = state.eta.shape
    levels = np.arange(T)[:, None]
    neg = levels < state.alloc[None, :]
    pos = (levels == state.alloc[None, :]) & (levels < T - 1)
    z = np.full((T, n), np.nan)
    lo = np.where(pos, 0.0, -np.inf)
    hi = np.where(pos, np.inf, 0.0)
    use = neg | pos
    z[use] = sample_trunc_normal_1d(state.eta[use], 1.0, lo[use], hi[use], rng)
    state.z = z
    return z


def z_consistent(state: StickState) -> bool:
    T = state.T
    for i in range(state.n):
        k = state.alloc[i]
        col = state.z[:, i]
        if np.any(~(col[:k] < 0)):
            return False
        if k < T - 1 and not col[k] > 0:
            return False
        if np.any(~np.isnan(col[k + 1:])) or (k == T - 1 and not np.isnan(col[k])):
            return False
    return True


# ---------------------------------------------------------------------------
# marginal Gaussian terms of the active scores


class EtaMarginal:
    """Precision of the active scores of one level, at a fixed ``lam``.

    ``mode="exact"`` uses the marginal precision of ``eta_A`` under the GMRF,
    ``(Sigma_AA)^{-1}`` with ``Sigma = Q^{-1}``. ``mode="subblock"`` uses the
    sub-block ``Q_AA = lam * A_AA + I`` instead, which is the conditional
    precision given the inactive scores rather than the marginal one.
    """

    def __init__(self, adj: AdjacencyMatrix, lam: float, mode: str = "exact"):
        if mode not in ("exact", "subblock"):
            raise ValueError(f"unknown marginal mode {mode!r}")
        self.adj = adj
        self.lam = float(lam)
        self.mode = mode
        if mode == "exact":
            u, e = adj.eigvecs, adj.eigvals
            self._cov = (u / (self.lam * e + 1.0)) @ u.T
        else:
            self._q = self.lam * adj.matrix + np.eye(adj.n)

    def precision(self, active: np.ndarray) -> np.ndarray:
        """Dense precision matrix of the active scores (for tests)."""
        if self.mode == "exact":
            return linalg.inv(self._cov[np.ix_(active, active)])
        return self._q[np.ix_(active, active)]

    def terms(self, active: np.ndarray, eta_row: np.ndarray):
        """Return ``(logdet P, 1'P1, 1'P eta, eta'P eta)`` for ``eta`` restricted to ``active``."""
        x = np.column_stack([np.ones(active.size), eta_row[active]])
        if self.mode == "exact":
            c = linalg.cho_factor(self._cov[np.ix_(active, active)], lower=True)
            px = linalg.cho_solve(c, x)
            logdet = -2.0 * np.sum(np.log(np.diag(c[0])))
        else:
            q = self._q[np.ix_(active, active)]
            c = linalg.cholesky(q, lower=True)
            px = q @ x
            logdet = 2.0 * np.sum(np.log(np.diag(c)))
        g = x.T @ px
        return logdet, g[0, 0], g[0, 1], g[1, 1]


def _level_terms(adj, lam, mode, state):
    marg = EtaMarginal(adj, lam, mode)
    mask = active_mask(state.alloc, state.T)
    rows = []
    for h in range(state.T - 1):
        act = np.flatnonzero(mask[h])
        if act.size:
            rows.append((act.size,) + marg.terms(act, state.eta[h]))
    if not rows:
        return np.zeros((0, 5))
    return np.array(rows, dtype=float)


def log_lambda_target(terms: np.ndarray, alpha: float, phi2: float) -> float:
    """Log density of the active scores as a function of ``lam`` (through ``terms``).

    Constant factors in ``lam`` are dropped; ``terms`` rows hold
    ``(n_active, logdet P, 1'P1, 1'P eta, eta'P eta)``.
    """
    if terms.shape[0] == 0:
        return 0.0
    _, logdet, a, b, c = terms.T
    quad = c - 2.0 * alpha * b + alpha * alpha * a
    return float(np.sum(0.5 * logdet - 0.5 * phi2 * quad))


def active_log_density(adj, lam, state, mode="exact") -> float:
    """Full log density of all active scores given ``(alpha, phi2, lam)``."""
    terms = _level_terms(adj, lam, mode, state)
    if terms.shape[0] == 0:
        return 0.0
    n_tot = terms[:, 0].sum()
    return (
        log_lambda_target(terms, state.alpha, state.phi2)
        + 0.5 * n_tot * np.log(state.phi2)
        - 0.5 * n_tot * np.log(2.0 * np.pi)
    )


def lambda_log_acceptance(adj, state, lam_new, mode="exact") -> float:
    """Log Metropolis ratio for moving ``lam`` to ``lam_new`` (uniform prior, symmetric proposal)."""
    old = log_lambda_target(_level_terms(adj, state.lam, mode, state), state.alpha, state.phi2)
    new = log_lambda_target(_level_terms(adj, lam_new, mode, state), state.alpha, state.phi2)
    return new - old


# closed-form expansion of the sub-block quadratic form and determinant


def boundary_counts(graph: SpatialGraph, active: np.ndarray) -> np.ndarray:
    """Number of neighbours of each active area that are not active."""
    mask = np.zeros(graph.n, dtype=bool)
    mask[active] = True
    r = np.zeros(graph.n, dtype=np.int64)
    e = graph.edges
    if e.size:
        i, j = e[:, 0], e[:, 1]
        np.add.at(r, i[mask[i] & ~mask[j]], 1)
        np.add.at(r, j[mask[j] & ~mask[i]], 1)
    return r[active]


def subblock_quadratic_expansion(graph: SpatialGraph, active, eta_active, alpha, lam) -> float:
    """``lam * sum_{i~j in A} (eta_i - eta_j)^2 + sum (eta_i - alpha)^2 + lam * sum r_i (eta_i - alpha)^2``."""
    active = np.asarray(active)
    eta_active = np.asarray(eta_active, dtype=float)
    pos = -np.ones(graph.n, dtype=np.int64)
    pos[active] = np.arange(active.size)
    e = graph.edges
    inside = (pos[e[:, 0]] >= 0) & (pos[e[:, 1]] >= 0) if e.size else np.zeros(0, dtype=bool)
    d = eta_active[pos[e[inside, 0]]] - eta_active[pos[e[inside, 1]]] if e.size else np.zeros(0)
    dev = eta_active - alpha
    r = boundary_counts(graph, active)
    return float(lam * d @ d + dev @ dev + lam * np.sum(r * dev * dev))


def subblock_eigvals(adj: AdjacencyMatrix, active) -> np.ndarray:
    return np.clip(linalg.eigvalsh(adj.matrix[np.ix_(active, active)]), 0.0, None)


def lambda_log_acceptance_expanded(adj: AdjacencyMatrix, state: StickState, lam_new: float) -> float:
    """Sub-block log ratio written with eigenvalues and neighbour-pair sums."""
    mask = active_mask(state.alloc, state.T)
    out = 0.0
    for h in range(state.T - 1):
        act = np.flatnonzero(mask[h])
        if not act.size:
            continue
        e = subblock_eigvals(adj, act)
        out += 0.5 * np.sum(np.log1p(lam_new * e) - np.log1p(state.lam * e))
        q_new = subblock_quadratic_expansion(adj.graph, act, state.eta[h, act], state.alpha, lam_new)
        q_old = subblock_quadratic_expansion(adj.graph, act, state.eta[h, act], state.alpha, state.lam)
        out -= 0.5 * state.phi2 * (q_new - q_old)
    return float(out)


# ---------------------------------------------------------------------------
# Gibbs / Metropolis updates


def eta_active_moments(adj, lam, alpha, phi2, active, z_active):
    """Mean and covariance of ``eta_A`` given ``z_A`` (closed form, for tests)."""
    sigma = (adj.eigvecs / (lam * adj.eigvals + 1.0)) @ adj.eigvecs.T
    p = linalg.inv(sigma[np.ix_(active, active)])
    b = linalg.inv(phi2 * p + np.eye(active.size))
    mean = b @ (alpha * phi2 * p @ np.ones(active.size) + z_active)
    return mean, b


def update_eta_active(state: StickState, adj: AdjacencyMatrix, rng: np.random.Generator) -> None:
    """Gibbs update of the active scores of every level, in place.

    The draw is made jointly over all areas of a level, from the posterior
    of the full field given the active ``z``; its active part has exactly the
    marginal-conditional law ``N(B(alpha phi2 P 1 + z), B)``.
    """
    T, n = state.eta.shape
    mask = active_mask(state.alloc, T)
    q = state.lam * adj.matrix + np.eye(n)
    base = state.phi2 * q
    for h in range(T - 1):
        act = mask[h]
        if not act.any():
            continue
        prec = base.copy()
        prec[np.diag_indices(n)] += act
        rhs = np.full(n, state.phi2 * state.alpha)  # phi2 * alpha * Q 1, as Q 1 = 1
        rhs[act] += state.z[h, act]
        c = linalg.cholesky(prec, lower=True)
        mean = linalg.cho_solve((c, True), rhs)
        draw = mean + linalg.solve_triangular(c, rng.standard_normal(n), lower=True, trans="T")
        state.eta[h, act] = draw[act]


def update_alpha_phi_lambda(
    state: StickState,
    adj: AdjacencyMatrix,
    prior: StickPrior,
    rng: np.random.Generator,
    lambda_step: float = 2.0,
    spatial: bool = True,
    mode: str = "exact",
) -> bool:
    """Update ``alpha`` (Gibbs), ``phi^2`` (Gibbs) and ``lam`` (Metropolis), in place.

    Returns whether the ``lam`` proposal was accepted.
    """
    terms = _level_terms(adj, state.lam, mode, state)
    if terms.shape[0]:
        n_tot = terms[:, 0].sum()
        s_a, s_b = terms[:, 2].sum(), terms[:, 3].sum()
    else:
        n_tot = s_a = s_b = 0.0
    prec = 1.0 / prior.sigma2_alpha + state.phi2 * s_a
    mean = (prior.mu_alpha / prior.sigma2_alpha + state.phi2 * s_b) / prec
    state.alpha = float(mean + rng.standard_normal() / np.sqrt(prec))
    if terms.shape[0]:
        quad = np.sum(terms[:, 4] - 2.0 * state.alpha * terms[:, 3] + state.alpha ** 2 * terms[:, 2])
    else:
        quad = 0.0
    shape = prior.a_phi + 0.5 * n_tot
    rate = prior.b_phi + 0.5 * quad
    state.phi2 = float(rng.gamma(shape, 1.0 / rate))
    if not spatial:
        return False
    prop = state.lam + lambda_step * (2.0 * rng.random() - 1.0)
    if prop < 0:
        prop = -prop
    logu = np.log(rng.random())
    if prop > prior.lambda_max:
        return False
    old = log_lambda_target(terms, state.alpha, state.phi2)
    new = log_lambda_target(_level_terms(adj, prop, mode, state), state.alpha, state.phi2)
    if logu < new - old:
        state.lam = float(prop)
        return True
    return False


def impute_eta_inactive(state: StickState, adj: AdjacencyMatrix, rng: np.random.Generator) -> None:
    """Draw the inactive scores of every level given the active ones, in place."""
    T, n = state.eta.shape
    mask = active_mask(state.alloc, T)
    q = state.lam * adj.matrix + np.eye(n)
    sd = 1.0 / np.sqrt(state.phi2)
    free_scale = 1.0 / np.sqrt(state.lam * adj.eigvals + 1.0)
    for h in range(T):
        act = mask[h]
        if not act.any():
            eps = rng.standard_normal(n)
            state.eta[h] = state.alpha + sd * (adj.eigvecs @ (free_scale * eps))
            continue
        ina = ~act
        if not ina.any():
            continue
        q_dd = q[np.ix_(ina, ina)]
        q_da = q[np.ix_(ina, act)]
        c = linalg.cholesky(q_dd, lower=True)
        shift = -linalg.cho_solve((c, True), q_da @ (state.eta[h, act] - state.alpha))
        noise = linalg.solve_triangular(c, rng.standard_normal(int(ina.sum())), lower=True, trans="T")
        state.eta[h, ina] = state.alpha + shift + sd * noise


def inactive_moments(adj, lam, alpha, phi2, active, eta_active):
    """Conditional mean and covariance of the inactive scores (covariance form)."""
    sigma = (adj.eigvecs / (lam * adj.eigvals + 1.0)) @ adj.eigvecs.T / phi2
    ina = np.setdiff1d(np.arange(adj.n), active)
    s_aa = sigma[np.ix_(active, active)]
    s_da = sigma[np.ix_(ina, active)]
    s_dd = sigma[np.ix_(ina, ina)]
    k = s_da @ linalg.inv(s_aa)
    return alpha + k @ (eta_active - alpha), s_dd - k @ s_da.T


# ---------------------------------------------------------------------------
# label switching


def _swap_labels(alloc, a, b):
    out = alloc.copy()
    out[alloc == a] = b
    out[alloc == b] = a
    return out


def label_switch_a_log_ratio(log_w: np.ndarray, alloc: np.ndarray, a: int, b: int) -> float:
    ia = alloc == a
    ib = alloc == b
    return float(np.sum(log_w[b, ia] - log_w[a, ia]) + np.sum(log_w[a, ib] - log_w[b, ib]))


def label_switch_a(state: StickState, rng: np.random.Generator):
    """Swap two occupied labels (parameters and allocations, scores unchanged).

    Returns ``(a, b, accepted)`` or ``None`` when fewer than two labels are occupied.
    """
    occupied = np.unique(state.alloc)
    if occupied.size < 2:
        return None
    a, b = rng.choice(occupied, size=2, replace=False)
    logu = np.log(rng.random())
    log_w = log_stick_weights(state.eta)
    if logu < label_switch_a_log_ratio(log_w, state.alloc, a, b):
        state.alloc = _swap_labels(state.alloc, a, b)
        return int(a), int(b), True
    return int(a), int(b), False


def label_switch_b_log_ratio(eta: np.ndarray, alloc: np.ndarray, a: int) -> float:
    """Log ratio of swapping levels ``a`` and ``a + 1`` together with their scores.

    Computed from the full weights, so it is also valid when ``a + 1`` is the
    forced final level. Returns ``-inf`` when the move cannot be reversed
    (the largest occupied label would drop, shrinking the reverse proposal
    range).
    """
    n_star = int(alloc.max()) + 1
    new_alloc = _swap_labels(alloc, a, a + 1)
    if int(new_alloc.max()) + 1 < n_star:
        return -np.inf
    eta_new = eta.copy()
    eta_new[[a, a + 1]] = eta[[a + 1, a]]
    sel = (alloc == a) | (alloc == a + 1)
    cols = np.flatnonzero(sel)
    old = log_stick_weights(eta[:, cols])[alloc[cols], np.arange(cols.size)]
    new = log_stick_weights(eta_new[:, cols])[new_alloc[cols], np.arange(cols.size)]
    return float(np.sum(new) - np.sum(old))


def label_switch_b_closed_form(eta: np.ndarray, alloc: np.ndarray, a: int) -> float:
    """Closed-form log ratio for ``a + 1`` below the final level."""
    ia = alloc == a
    ib = alloc == a + 1
    return float(np.sum(log_ndtr(-eta[a + 1, ia])) - np.sum(log_ndtr(-eta[a, ib])))


def label_switch_b(state: StickState, rng: np.random.Generator):
    """Swap adjacent labels ``a, a + 1`` and their score rows.

    Returns ``(a, accepted)`` or ``None`` when only label 0 is occupied.
    """
    n_star = int(state.alloc.max()) + 1
    if n_star < 2:
        return None
    a = int(rng.integers(0, n_star - 1))
    logu = np.log(rng.random())
    if logu < label_switch_b_log_ratio(state.eta, state.alloc, a):
        state.alloc = _swap_labels(state.alloc, a, a + 1)
        state.eta[[a, a + 1]] = state.eta[[a + 1, a]]
        return a, True
    return a, False
