"""
Average-reward variant of the primal-dual solver.

Adds the scalar gain variable rho, kept in [0, 1], and the anchor vector
varrho with Phi varrho = 1. Each outer round consumes K inner records and
one outer record; next actions a' ~ pi_t(.|x') are drawn from the solver's
own random stream.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from tqdm import tqdm

from . import AVERAGE
from .exceptions import AssumptionViolated, ConfigInvalid
from .linmdp import policy_return, policy_values, seeded_rng
from .log import PKG_LOGGER, log_stream_quiet
from .numerics import (BallDomain, clamped_path, project_ball, projected_path)
from .pd_discounted import (DiscountedGapTracker, Iterate, Oracle, SolverConfig,
                            SolverResult, SoftmaxPolicy, TraceRow, TunedConstants,
                            _check_dataset, _is_row, _largest_T, _one, _ratio,
                            _norm_factor, _scaled, _smallest_T, _trace_factor,
                            lambda_power, state_values, support_records)
from .sampling import SOLVER_STREAM, TransitionBatch, as_source

VARRHO_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class VarrhoVector:
    varrho: np.ndarray
    residual: float


def solve_varrho(features):
    """Minimum-norm least-squares solution of Phi varrho = 1."""
    features = np.asarray(getattr(features, 'features', features), dtype=float)
    if features.ndim == 3:
        features = features.reshape(-1, features.shape[-1])
    ones = np.ones(features.shape[0])
    varrho = scipy.linalg.lstsq(features, ones)[0]
    residual = float(np.max(np.abs(features @ varrho - ones)))
    if residual > VARRHO_TOL:
        raise AssumptionViolated(
            "the constant function is not in the feature span (residual %.3g)" % residual)
    return VarrhoVector(varrho=varrho, residual=residual)


@dataclass(frozen=True)
class AvgSolverConfig(SolverConfig):
    xi: float = 0.0

    @classmethod
    def step_names(cls):
        return ['alpha', 'zeta', 'eta', 'xi']

    @property
    def samples_needed(self):
        return self.T * (self.K + 1)


def _sample_actions(probs, rng):
    uniforms = rng.random(probs.shape[0])
    drawn = (uniforms[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
    return np.minimum(drawn, probs.shape[1] - 1)


def inner_grads_batch(batch, policy, beta, features, lam_c_minus_one, rng=None,
                      next_actions=None):
    """
    g_rho = 1 - <phi, Lambda^{c-1} beta>
    g_theta = (phi(x', a') - phi(x, a)) <phi, Lambda^{c-1} beta>
    with a' ~ pi(.|x') unless `next_actions` is given.
    """
    fbs = features.features_by_state
    phi = fbs[batch.x, batch.a]
    weight = _scaled(phi, lam_c_minus_one) @ beta
    if next_actions is None:
        next_actions = _sample_actions(policy.action_probs(batch.x_next), rng)
    phi_next = fbs[batch.x_next, next_actions]
    return 1.0 - weight, (phi_next - phi) * weight[:, None]


def outer_grad_beta_batch(batch, policy, theta, rho, features, lam_c_minus_one):
    fbs = features.features_by_state
    phi = fbs[batch.x, batch.a]
    probs = policy.action_probs(batch.x_next)
    next_values = np.einsum('ma,mad->md', probs, fbs[batch.x_next]) @ theta
    td_error = batch.r + next_values - phi @ theta - rho
    return _scaled(phi, lam_c_minus_one) * td_error[:, None]


def inner_grads_avg(sample, policy, beta, covariance, features, c, rng):
    lam = lambda_power(covariance, float(c) - 1)
    g_rho, g_theta = inner_grads_batch(
        _one(sample), policy, np.asarray(beta, dtype=float), features, lam, rng)
    return float(g_rho[0]), g_theta[0]


def outer_grad_beta_avg(sample, policy, theta, rho, covariance, features, c):
    """Lambda^{c-1} phi (r + v_t(x') - <theta, phi> - rho)."""
    lam = lambda_power(covariance, float(c) - 1)
    return outer_grad_beta_batch(
        _one(sample), policy, np.asarray(theta, dtype=float), rho, features, lam)[0]


# Exact, oracle-side quantities

def occupancy_from_beta_avg(mdp, policy, beta, lam_c):
    state_mass = mdp.next_state_factor.T @ (lam_c @ beta)
    return (policy.probs * state_mass[:, None]).reshape(-1)


def exact_grad_theta_avg(mdp, policy, beta, lam_c):
    return mdp.features.T @ occupancy_from_beta_avg(mdp, policy, beta, lam_c) - lam_c @ beta


def exact_grad_rho(beta, lam_c, varrho):
    return float(1.0 - beta @ (lam_c @ varrho))


def exact_grad_beta_avg(mdp, policy, theta, rho, lam_c, varrho):
    values = state_values(mdp, policy, theta)
    return lam_c @ (mdp.reward_factor + mdp.next_state_factor @ values - theta - rho * varrho)


def lagrangian_avg(mdp, policy, beta, rho, theta, lam_c, varrho):
    """f(beta, pi; rho, theta) = rho + <beta, Lambda^c [omega + Psi v - theta - rho varrho]>."""
    return float(rho + beta @ exact_grad_beta_avg(mdp, policy, theta, rho, lam_c, varrho))


def expected_estimates_avg(mdp, behavior, policy, beta, theta, rho, covariance, c):
    """Exact expectations of the rho, theta and beta estimators over the behavior data."""
    batch, weights = support_records(mdp, behavior, AVERAGE)
    features = mdp.feature_map()
    lam = lambda_power(covariance, float(c) - 1)
    probs = policy.action_probs(batch.x_next)
    rows, next_actions = np.nonzero(probs > 0)
    expanded = TransitionBatch(
        x0=batch.x0[rows], x=batch.x[rows], a=batch.a[rows], r=batch.r[rows],
        x_next=batch.x_next[rows])
    expanded_weights = weights[rows] * probs[rows, next_actions]
    g_rho, g_theta = inner_grads_batch(
        expanded, policy, beta, features, lam, next_actions=next_actions)
    g_beta = outer_grad_beta_batch(batch, policy, theta, rho, features, lam)
    return (float(expanded_weights @ g_rho), expanded_weights @ g_theta, weights @ g_beta)


def estimator_bias_avg(mdp, behavior, policy, beta, theta, rho, covariance, c):
    g_rho, g_theta, g_beta = expected_estimates_avg(
        mdp, behavior, policy, beta, theta, rho, covariance, c)
    lam_c = covariance.power(c)
    varrho = solve_varrho(mdp.features).varrho
    return {
        'rho': abs(g_rho - exact_grad_rho(beta, lam_c, varrho)),
        'theta': float(np.max(np.abs(g_theta - exact_grad_theta_avg(mdp, policy, beta, lam_c)))),
        'beta': float(np.max(np.abs(
            g_beta - exact_grad_beta_avg(mdp, policy, theta, rho, lam_c, varrho)))),
    }


class AverageGapTracker(DiscountedGapTracker):
    """
    Comparators: rho*_t = rho^{pi_t} and theta*_t = theta^{pi_t} shifted along
    varrho so that min over (x, a) of <phi, theta*_t> is 0.
    """
    setting = AVERAGE

    def __init__(self, oracle, c, with_gap=True):
        super().__init__(oracle, c, with_gap)
        self.sums['term_rho'] = 0.0
        self.varrho = solve_varrho(self.mdp.features).varrho if self.with_gap else None

    def comparator_point(self, policy):
        values = policy_values(self.mdp, policy, AVERAGE)
        shift = float(np.min(self.mdp.features @ values.theta))
        return values.rho, values.theta - shift * self.varrho

    def add(self, iterate):
        policy, theta, beta, rho = iterate.policy, iterate.theta, iterate.beta, iterate.rho
        self.returns.append(policy_return(self.mdp, policy, AVERAGE))
        if not self.with_gap:
            return
        mdp, lam_c, varrho = self.mdp, self.lam_c, self.varrho
        rho_star, theta_star = self.comparator_point(policy)
        self.sums['term_rho'] += (rho - rho_star) * exact_grad_rho(beta, lam_c, varrho)
        self.sums['term_theta'] += float(
            (theta - theta_star) @ exact_grad_theta_avg(mdp, policy, beta, lam_c))
        self.sums['term_beta'] += float(
            (self.beta_star - beta) @ exact_grad_beta_avg(mdp, policy, theta, rho, lam_c, varrho))
        self.sums['term_pi'] += self.policy_term(policy, theta)
        self.sums['gap'] += (
            lagrangian_avg(mdp, self.comparator, self.beta_star, rho, theta, lam_c, varrho)
            - lagrangian_avg(mdp, policy, beta, rho_star, theta_star, lam_c, varrho))


def duality_gap_report_avg(mdp, behavior, iterates, comparator, c, covariance=None):
    oracle = Oracle(mdp, behavior, comparator, AVERAGE, covariance)
    oracle.covariance.power(-c)
    tracker = AverageGapTracker(oracle, c)
    for iterate in iterates:
        tracker.add(iterate)
    return tracker.report()


# Tuning

def average_constants(bounds, D_theta, D_beta, c, lambda_norm=None, lambda_trace=None):
    d_phi = bounds.phi_bound
    norm = _norm_factor(bounds, c, lambda_norm)
    return TunedConstants(
        phi_bound=d_phi,
        num_actions=bounds.num_actions,
        G2_beta=_trace_factor(bounds, c, lambda_trace) * (1 + 2 * D_theta * d_phi) ** 2,
        G2_rho=2 * (1 + D_beta ** 2 * norm),
        G2_theta=4 * d_phi ** 2 * D_beta ** 2 * norm,
    )


def _inner_ratio(constants, D_theta, D_beta):
    log_actions = math.log(constants.num_actions)
    return (4 * D_beta ** 2 * constants.G2_beta
            + 2 * D_theta ** 2 * constants.phi_bound ** 2 * log_actions) \
        / (constants.G2_rho + 4 * D_theta ** 2 * constants.G2_theta)


def _config_for(constants, D_theta, D_beta, c, T, K, **kwargs):
    log_actions = math.log(constants.num_actions)
    return AvgSolverConfig(
        T=T, K=K, c=c, D_theta=D_theta, D_beta=D_beta, constants=constants,
        zeta=2 * D_beta / (math.sqrt(constants.G2_beta) * math.sqrt(T)),
        alpha=math.sqrt(2 * log_actions) / (D_theta * constants.phi_bound * math.sqrt(T)),
        xi=1 / (math.sqrt(constants.G2_rho) * math.sqrt(K)),
        eta=2 * D_theta / (math.sqrt(constants.G2_theta) * math.sqrt(K)),
        **kwargs)


def regret_bounds_avg(config):
    """Closed-form bounds on the summed beta, policy, rho and theta regret terms."""
    k = config.constants
    T, K = config.T, config.K
    return {
        'term_beta': _ratio(2 * config.D_beta ** 2, config.zeta)
        + config.zeta * T * k.G2_beta / 2,
        'term_pi': _ratio(math.log(k.num_actions), config.alpha)
        + config.alpha * T * config.D_theta ** 2 * k.phi_bound ** 2 / 2,
        'term_rho': T * (_ratio(1.0, 2 * config.xi * K) + config.xi * k.G2_rho / 2),
        'term_theta': T * (_ratio(2 * config.D_theta ** 2, config.eta * K)
                           + config.eta * k.G2_theta / 2),
    }


def theoretical_bound_avg(config):
    return sum(regret_bounds_avg(config).values()) / config.T


def tune_average(bounds, D_theta, D_beta, c, lambda_norm=None, lambda_trace=None,
                 T=None, epsilon=None, **kwargs):
    c = float(c)
    constants = average_constants(bounds, D_theta, D_beta, c, lambda_norm, lambda_trace)
    ratio = _inner_ratio(constants, D_theta, D_beta)

    def inner(T):
        return max(1, int(math.ceil(T * ratio)))

    if T is None:
        if not epsilon or epsilon <= 0:
            raise ConfigInvalid("tune needs either T or a positive epsilon")
        T = _smallest_T(
            lambda T: theoretical_bound_avg(
                _config_for(constants, D_theta, D_beta, c, T, inner(T))),
            epsilon)
    config = _config_for(constants, D_theta, D_beta, c, int(T), inner(T), **kwargs)
    PKG_LOGGER.info("tuned average-reward solver: T=%d K=%d eta=%.4g zeta=%.4g xi=%.4g alpha=%.4g",
                    config.T, config.K, config.eta, config.zeta, config.xi, config.alpha)
    return config.validate()


def tune_average_for_budget(bounds, D_theta, D_beta, c, budget, lambda_norm=None,
                            lambda_trace=None, **kwargs):
    """Largest tuned T whose T * (K + 1) samples fit in `budget`."""
    c = float(c)
    constants = average_constants(bounds, D_theta, D_beta, c, lambda_norm, lambda_trace)
    ratio = _inner_ratio(constants, D_theta, D_beta)

    def inner(T):
        return max(1, int(math.ceil(T * ratio)))

    T = _largest_T(lambda T: T * (inner(T) + 1), int(budget))
    if T is None:
        T, K = 1, max(1, int(budget) - 1)
    else:
        K = inner(T)
    config = _config_for(constants, D_theta, D_beta, c, T, K, **kwargs)
    PKG_LOGGER.info("tuned average-reward solver for %d samples: T=%d K=%d", budget, T, K)
    return config.validate()


# Solver loop

def run_average(features, dataset_or_sampler, config, oracle=None, covariance=None):
    """
    Run the average-reward solver on a fixed dataset (at least T * (K + 1)
    records) or a streaming sampler.
    """
    config.validate()
    c = float(config.c)
    source = as_source(dataset_or_sampler)
    _check_dataset(source, config.samples_needed)
    lam = lambda_power(covariance, c - 1)
    rng = seeded_rng(config.seed, SOLVER_STREAM)
    fbs = features.features_by_state
    dim = features.dim
    K = config.K
    beta_ball = BallDomain(config.D_beta)
    theta_ball = BallDomain(config.D_theta)

    theta = np.zeros(dim)
    beta = np.zeros(dim)
    accum = np.zeros(dim)
    rho = 0.0
    policies = np.empty((config.T, dim))
    thetas = np.empty((config.T, dim))
    betas = np.empty((config.T, dim))
    rhos = np.empty(config.T)
    tracker = AverageGapTracker(oracle, c, config.gap_diagnostics) if oracle else None
    trace = []
    samples = 0
    started = time.time()

    PKG_LOGGER.info("average-reward solver: T=%d K=%d c=%s d=%d", config.T, K, c, dim)
    for t in tqdm(range(1, config.T + 1), disable=log_stream_quiet(), desc='outer rounds'):
        policy = SoftmaxPolicy(fbs, accum.copy(), config.alpha)
        inner = source.take(K)
        g_rho, g_theta = inner_grads_batch(inner, policy, beta, features, lam, rng)
        rho_path = clamped_path(rho, -config.xi * g_rho)
        theta_path = projected_path(theta, -config.eta * g_theta, config.D_theta)
        rho_t = float(np.clip(rho_path[:K].mean(), 0.0, 1.0))
        theta_t = project_ball(theta_path[:K].mean(axis=0), theta_ball)
        outer = source.take(1)
        g_beta = outer_grad_beta_batch(outer, policy, theta_t, rho_t, features, lam)[0]
        samples += K + 1

        policies[t - 1] = policy.logit_accum
        thetas[t - 1] = theta_t
        betas[t - 1] = beta
        rhos[t - 1] = rho_t
        if tracker:
            tracker.add(Iterate(policy.table(), theta_t, beta, rho_t))

        beta = project_ball(beta + config.zeta * g_beta, beta_ball)
        accum = accum + theta_t
        theta, rho = theta_t, rho_t
        if _is_row(t, config):
            q_values = fbs @ theta_t
            extra = {'rho_t': rho_t, 'q_span': float(q_values.max() - q_values.min())}
            PKG_LOGGER.debug("round %d: rho=%.4f span(Phi theta)=%.4f",
                             t, rho_t, extra['q_span'])
            trace.append(tracker.row(t, samples, **extra) if tracker
                         else TraceRow(t=t, samples=samples, **extra))

    metadata = {
        'wall_clock': time.time() - started,
        'lambda': 'none' if lam is None else (
            'empirical (approximate)' if covariance.approximate else 'exact'),
    }
    if covariance is not None and covariance.approximate and lam is not None:
        PKG_LOGGER.warning("running with an empirical covariance; results are approximate")
    result = SolverResult(
        setting=AVERAGE, config=config, policies=policies, thetas=thetas, betas=betas,
        rhos=rhos, trace=trace, samples_used=samples, metadata=metadata,
        mixture_return=tracker.mixture_return if tracker else None,
        optimal_return=tracker.optimum if tracker else None,
        gap_report=tracker.report() if tracker and tracker.with_gap else None,
    )
    PKG_LOGGER.info("average-reward solver done: %d samples in %.2fs",
                    samples, metadata['wall_clock'])
    return result
