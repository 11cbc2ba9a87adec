"""Simulated-tempering sampler: coordinate-flip Gibbs for the support,
block MALA for the loadings, reflected random-walk temperature moves.

Hot loops run on python scalars against the QuadraticCache; full-matrix
work is confined to the selected block and one O(p) commit per flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import GepPair
from .errors import DomainError
from .model import (
    ChainState,
    PriorConfig,
    QuadraticCache,
    TemperingLadder,
    rayleigh_selected,
)

DEFAULT_SUBSET_SIZE = 100


def _sigmoid(x: float) -> float:
    # evaluate exp only on the negative-magnitude side; never overflows
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def draw_subset(p: int, size: int, rng) -> np.ndarray:
    """Uniform without-replacement subset via partial Fisher-Yates, O(size)."""
    if size < 0:
        raise DomainError("subset size must be nonnegative")
    size = min(size, p)
    idx = np.arange(p)
    for i in range(size):
        j = i + int(rng.integers(p - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:size].copy()


def _flip_log_odds(
    cache: QuadraticCache,
    j: int,
    theta_j: float,
    selected: bool,
    prior: PriorConfig,
    quot_coef: float,
    t_k: float,
) -> float:
    """Log odds of delta_j = 1 against 0, everything else held fixed."""
    r_off, r_on = cache.branch_rayleigh(j, theta_j, selected)
    if r_on == -np.inf:
        return -np.inf
    if r_off == -np.inf:
        return np.inf
    base = prior.a + 0.5 * (prior.rho0 - prior.rho1) * theta_j * theta_j
    return (base + quot_coef * (r_on - r_off)) / t_k


def gibbs_success_prob(
    j: int,
    state: ChainState,
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    cache: QuadraticCache | None = None,
) -> float:
    """Conditional probability that coordinate j is selected."""
    if gep.n is None:
        raise DomainError("GepPair has no sample count n")
    if cache is None:
        cache = QuadraticCache(gep, state)
    quot_coef = 2.0 * gep.n / prior.sigma**2
    t_k = float(ladder.temperatures[state.k - 1])
    ell = _flip_log_odds(
        cache, j, float(state.theta[j]), bool(state.delta[j]), prior, quot_coef, t_k
    )
    return _sigmoid(ell)


def gibbs_update_delta(
    state: ChainState,
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    subset: np.ndarray,
    rng,
    cache: QuadraticCache | None = None,
    uniforms: np.ndarray | None = None,
) -> None:
    """One sweep of single-coordinate flips over `subset`, in place.

    Each coordinate consumes exactly one uniform, drawn here unless supplied
    (the coupled kernel feeds both chains the same array).
    """
    if gep.n is None:
        raise DomainError("GepPair has no sample count n")
    if cache is None:
        cache = QuadraticCache(gep, state)
    quot_coef = 2.0 * gep.n / prior.sigma**2
    t_k = float(ladder.temperatures[state.k - 1])
    delta = state.delta
    theta = state.theta
    for i, j in enumerate(subset):
        j = int(j)
        theta_j = float(theta[j])
        selected = delta[j] == 1
        ell = _flip_log_odds(cache, j, theta_j, selected, prior, quot_coef, t_k)
        q_j = _sigmoid(ell)
        u = float(uniforms[i]) if uniforms is not None else float(rng.random())
        now = u <= q_j
        if now != selected:
            delta[j] = 1 if now else 0
            cache.commit_flip(j, theta_j, now)


def _quad_parts(v: np.ndarray, A_ss: np.ndarray, B_ss: np.ndarray):
    Bv = B_ss @ v
    qb = float(v @ Bv)
    Av = A_ss @ v
    qa = float(v @ Av)
    return Av, Bv, qa, qb


def _log_w(qa: float, qb: float, v: np.ndarray, prior, quot_coef: float, t_k: float):
    r = qa / qb
    return (-0.5 * prior.rho1 * float(v @ v) + quot_coef * r) / t_k, r


def _grad_w(v, Av, Bv, qa, qb, prior, quot_coef: float, t_k: float):
    r = qa / qb
    g_r = 2.0 * (Av - r * Bv) / qb
    return (-prior.rho1 * v + quot_coef * g_r) / t_k


def _mala_drift(u: np.ndarray, A_ss, B_ss, eta: float, t_k: float, prior, quot_coef):
    """Proposal mean and current-point log density: (mu, lw_u, r_u)."""
    Au, Bu, qa_u, qb_u = _quad_parts(u, A_ss, B_ss)
    lw_u, r_u = _log_w(qa_u, qb_u, u, prior, quot_coef, t_k)
    g_u = _grad_w(u, Au, Bu, qa_u, qb_u, prior, quot_coef, t_k)
    return u + eta * g_u, lw_u, r_u


def _mala_accept(
    u: np.ndarray,
    prop: np.ndarray,
    forward_half_sq: float,
    lw_u: float,
    r_u: float,
    A_ss,
    B_ss,
    eta: float,
    t_k: float,
    prior,
    quot_coef: float,
    accept_u: float,
):
    """Metropolis correction for a precomputed proposal.

    forward_half_sq is -log of the forward proposal density up to its
    normalizing constant. Returns (u_new, alpha, r_new, accepted); a proposal
    outside the quotient's domain is a certain rejection.
    """
    Ap, Bp, qa_p, qb_p = _quad_parts(prop, A_ss, B_ss)
    if not qb_p > 0.0:
        return u, 0.0, r_u, False
    lw_p, r_p = _log_w(qa_p, qb_p, prop, prior, quot_coef, t_k)
    g_p = _grad_w(prop, Ap, Bp, qa_p, qb_p, prior, quot_coef, t_k)
    back = u - prop - eta * g_p
    log_alpha = lw_p - lw_u - float(back @ back) / (4.0 * eta) + forward_half_sq
    alpha = math.exp(log_alpha) if log_alpha < 0.0 else 1.0
    if accept_u < alpha:
        return prop, alpha, r_p, True
    return u, alpha, r_u, False


def _mala_block(
    u: np.ndarray,
    A_ss: np.ndarray,
    B_ss: np.ndarray,
    eta: float,
    t_k: float,
    prior: PriorConfig,
    quot_coef: float,
    xi: np.ndarray,
    accept_u: float,
):
    """One MALA step on the selected block.

    Returns (u_new, alpha, r_new, accepted); alpha is the acceptance
    probability actually used, which the adaptive layer consumes.
    """
    mu, lw_u, r_u = _mala_drift(u, A_ss, B_ss, eta, t_k, prior, quot_coef)
    prop = mu + math.sqrt(2.0 * eta) * xi
    return _mala_accept(
        u, prop, 0.5 * float(xi @ xi), lw_u, r_u,
        A_ss, B_ss, eta, t_k, prior, quot_coef, accept_u,
    )


def mala_update_theta(
    state: ChainState,
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    rng,
    unselected_z: np.ndarray | None = None,
    xi: np.ndarray | None = None,
    accept_u: float | None = None,
):
    """Redraw unselected coordinates from their exact Gaussian conditional and
    advance the selected block by one MALA step, in place.

    Returns (accepted, alpha, r_selected). Draw order when sampling here:
    unselected normals, then proposal noise, then the acceptance uniform.
    """
    if gep.n is None:
        raise DomainError("GepPair has no sample count n")
    k = state.k
    t_k = float(ladder.temperatures[k - 1])
    eta = float(ladder.step_sizes[k - 1])
    sel = np.flatnonzero(state.delta)
    unsel = np.flatnonzero(state.delta == 0)

    if unselected_z is None:
        unselected_z = rng.standard_normal(unsel.size)
    state.theta[unsel] = math.sqrt(t_k / prior.rho0) * unselected_z

    if xi is None:
        xi = rng.standard_normal(sel.size)
    if accept_u is None:
        accept_u = float(rng.random())

    u = state.theta[sel].copy()
    A_ss = gep.A[np.ix_(sel, sel)]
    B_ss = gep.B[np.ix_(sel, sel)]
    quot_coef = 2.0 * gep.n / prior.sigma**2
    u_new, alpha, r_new, accepted = _mala_block(
        u, A_ss, B_ss, eta, t_k, prior, quot_coef, xi, accept_u
    )
    state.theta[sel] = u_new
    return accepted, alpha, r_new


def temperature_update(
    state: ChainState,
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    rng,
    log_post: float | None = None,
    w: float | None = None,
    u: float | None = None,
) -> int:
    """Reflected +-1 random walk on the temperature index with the
    Hastings asymmetry correction at the boundaries, in place.

    K=1 is the identity and consumes no randomness. Otherwise exactly two
    uniforms (direction, acceptance) are consumed even when the proposal is
    forced, so coupled chains can share them.
    """
    K = ladder.K
    if K == 1:
        return state.k
    if w is None:
        w = float(rng.random())
    if u is None:
        u = float(rng.random())
    k = state.k
    if k == 1:
        k_new = 2
        log_q_fwd = 0.0
    elif k == K:
        k_new = K - 1
        log_q_fwd = 0.0
    else:
        k_new = k - 1 if w <= 0.5 else k + 1
        log_q_fwd = math.log(0.5)
    log_q_rev = 0.0 if k_new in (1, K) else math.log(0.5)

    if log_post is None:
        from .model import log_quasi_posterior

        log_post = log_quasi_posterior(state, gep, prior)
    lw = ladder.log_weights
    t = ladder.temperatures
    log_ratio = (
        (-lw[k_new - 1] + log_post / t[k_new - 1])
        - (-lw[k - 1] + log_post / t[k - 1])
        + log_q_rev
        - log_q_fwd
    )
    if math.log(u) < log_ratio:
        state.k = k_new
    return state.k


def initial_state(p: int, rng) -> ChainState:
    """Algorithm start: k=1, fair-coin support (redrawn if empty), standard
    normal loadings. Support is drawn before the loadings."""
    delta = rng.integers(0, 2, size=p).astype(np.uint8)
    while delta.sum() == 0:
        delta = rng.integers(0, 2, size=p).astype(np.uint8)
    theta = rng.standard_normal(p)
    return ChainState(delta=delta, theta=theta, k=1)


@dataclass
class ChainTrace:
    """Full recording of a chain run: every state plus per-iteration
    diagnostics. Row 0 is the initial state."""

    delta: np.ndarray
    theta: np.ndarray
    k: np.ndarray
    rayleigh: np.ndarray
    n_iters: int
    seed: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.delta.shape[1]

    def support_sizes(self) -> np.ndarray:
        return self.delta.sum(axis=1).astype(np.int64)


def _log_post_from_pieces(state: ChainState, prior, quot_coef: float, r_sel: float) -> float:
    """Log quasi-posterior reassembled from quantities the iteration already
    produced, avoiding a fresh O(p^2) evaluation."""
    sel_mask = state.delta.astype(bool)
    u = state.theta[sel_mask]
    th_unsel = state.theta[~sel_mask]
    return (
        prior.a * float(sel_mask.sum())
        - 0.5 * prior.rho1 * float(u @ u)
        - 0.5 * prior.rho0 * float(th_unsel @ th_unsel)
        + quot_coef * r_sel
    )


def advance_chain(
    state: ChainState,
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    subset_size: int,
    rng,
    adapt=None,
    mala_steps: int = 1,
):
    """One full sampler iteration in place: support sweep over a fresh random
    subset, loading update, temperature move, then the optional adaptation
    hook (which consumes no randomness, so a frozen hook leaves the
    trajectory bit-identical).

    Returns (alpha, k_mala, r_selected) where k_mala is the temperature the
    loading move ran under.
    """
    subset = draw_subset(gep.p, subset_size, rng)
    cache = QuadraticCache(gep, state)
    gibbs_update_delta(state, gep, prior, ladder, subset, rng, cache=cache)

    k_mala = state.k
    alpha = 0.0
    r_sel = -np.inf
    for _ in range(mala_steps):
        _, alpha, r_sel = mala_update_theta(state, gep, prior, ladder, rng)

    log_post = _log_post_from_pieces(state, prior, 2.0 * gep.n / prior.sigma**2, r_sel)
    temperature_update(state, gep, prior, ladder, rng, log_post=log_post)

    if adapt is not None:
        adapt.after_iteration(state, k_mala, alpha)
    return alpha, k_mala, r_sel


def run_chain(
    gep: GepPair,
    prior: PriorConfig,
    ladder: TemperingLadder,
    n_iters: int,
    subset_size: int | None = None,
    seed=None,
    rng=None,
    adapt=None,
    mala_steps: int = 1,
) -> ChainTrace:
    """Run the full sampler for n_iters iterations, recording every state."""
    if gep.n is None:
        raise DomainError("GepPair has no sample count n")
    if n_iters < 0:
        raise DomainError("n_iters must be nonnegative")
    p = gep.p
    if subset_size is None:
        subset_size = min(DEFAULT_SUBSET_SIZE, p)
    if rng is None:
        rng = np.random.default_rng(seed)

    state = initial_state(p, rng)
    delta_tr = np.empty((n_iters + 1, p), dtype=np.uint8)
    theta_tr = np.empty((n_iters + 1, p))
    k_tr = np.empty(n_iters + 1, dtype=np.int64)
    r_tr = np.empty(n_iters + 1)
    alpha_tr = np.empty(n_iters)
    k_mala_tr = np.empty(n_iters, dtype=np.int64)

    delta_tr[0] = state.delta
    theta_tr[0] = state.theta
    k_tr[0] = state.k
    r_tr[0] = rayleigh_selected(state, gep)

    for it in range(n_iters):
        alpha, k_mala, r_sel = advance_chain(
            state, gep, prior, ladder, subset_size, rng,
            adapt=adapt, mala_steps=mala_steps,
        )
        delta_tr[it + 1] = state.delta
        theta_tr[it + 1] = state.theta
        k_tr[it + 1] = state.k
        r_tr[it + 1] = r_sel
        alpha_tr[it] = alpha
        k_mala_tr[it] = k_mala

    return ChainTrace(
        delta=delta_tr,
        theta=theta_tr,
        k=k_tr,
        rayleigh=r_tr,
        n_iters=n_iters,
        seed=seed,
        diagnostics={"alpha": alpha_tr, "k_mala": k_mala_tr},
    )
