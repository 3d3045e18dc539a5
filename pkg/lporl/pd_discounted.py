"""
Double-loop primal-dual solver for discounted linear MDPs.

The dual variable is reparametrized as beta = Lambda^{-c} lambda with c in
{1/2, 1}. Per outer round t the learner runs K - 1 projected descent steps on
theta, averages the K inner iterates, takes one projected ascent step on
beta and adds theta_t to the softmax policy logits. Only the features are
needed to learn; the exact MDP is used for diagnostics.
"""

import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from . import DISCOUNTED
from .exceptions import ConfigInvalid, DatasetExhausted
from .linmdp import (Policy, occupancy, optimal_policy, policy_return,
                     policy_values)
from .log import PKG_LOGGER, log_stream_quiet
from .numerics import BallDomain, project_ball, projected_path, softmax_rows
from .sampling import (DatasetCursor, TransitionBatch, as_source,
                       behavior_occupancy)

VALID_EXPONENTS = (0.5, 1.0)
GRAD_CHUNK = 1 << 14
MAX_TUNE_T = 1 << 40


@dataclass(frozen=True)
class TunedConstants:
    """Problem constants the learning rates were derived from."""
    phi_bound: float
    num_actions: int
    G2_theta: float
    G2_beta: float
    G2_rho: Optional[float] = None


@dataclass(frozen=True)
class SolverConfig:
    T: int
    K: int
    c: float
    alpha: float
    zeta: float
    eta: float
    D_theta: float
    D_beta: float
    eval_every: int = 1
    seed: int = 0
    gap_diagnostics: bool = True
    constants: Optional[TunedConstants] = None

    def validate(self):
        if self.T < 1 or self.K < 1:
            raise ConfigInvalid("T and K must be at least 1, got T=%r K=%r" % (self.T, self.K))
        if float(self.c) not in VALID_EXPONENTS:
            raise ConfigInvalid("c must be 1/2 or 1, got %r" % (self.c,))
        for name in self.step_names():
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigInvalid("learning rate %s must be finite and >= 0, got %r" % (
                    name, value))
        if not (self.D_theta > 0 and self.D_beta > 0):
            raise ConfigInvalid("ball radii must be positive")
        if self.eval_every < 1:
            raise ConfigInvalid("eval_every must be at least 1")
        return self

    @classmethod
    def step_names(cls):
        return ['alpha', 'zeta', 'eta']

    @property
    def samples_needed(self):
        return self.T * self.K

    def to_dict(self):
        return asdict(self)


class SoftmaxPolicy(object):
    """pi(.|x) = softmax(alpha * Phi_x @ logit_accum), evaluated on demand."""

    def __init__(self, features_by_state, logit_accum, alpha):
        self.features_by_state = features_by_state
        self.logit_accum = logit_accum
        self.alpha = alpha

    def action_probs(self, states):
        logits = self.alpha * (self.features_by_state[states] @ self.logit_accum)
        return softmax_rows(logits)

    def table(self):
        return Policy(self.action_probs(np.arange(self.features_by_state.shape[0])))


def expected_features(features_by_state, policy, states):
    """sum_a pi(a|x) phi(x, a) for every x in `states`."""
    probs = policy.action_probs(states)
    return np.einsum('ma,mad->md', probs, features_by_state[states])


def lambda_power(covariance, p):
    """Lambda^p, or None when p == 0 (identity, Lambda not needed)."""
    if p == 0:
        return None
    if covariance is None:
        raise ConfigInvalid("c=%s needs a covariance matrix (exact or empirical)" % (1 + p))
    return covariance.power(p)


def _scaled(phi, lam):
    return phi if lam is None else phi @ lam


def grad_theta_batch(batch, policy, beta, features, lam_c_minus_one):
    """Rows of the theta-gradient estimator, one per transition."""
    gamma = features.discount
    fbs = features.features_by_state
    out = np.empty((len(batch), fbs.shape[2]))
    for start in range(0, len(batch), GRAD_CHUNK):
        block = batch.slice(start, start + GRAD_CHUNK)
        phi = fbs[block.x, block.a]
        scaled = _scaled(phi, lam_c_minus_one)
        start_features = expected_features(fbs, policy, block.x0)
        next_features = expected_features(fbs, policy, block.x_next)
        out[start:start + len(block)] = (
            (1 - gamma) * start_features
            + gamma * (scaled @ beta)[:, None] * next_features
            - scaled * (phi @ beta)[:, None]
        )
    return out


def grad_beta_batch(batch, policy, theta, features, lam_c_minus_one):
    gamma = features.discount
    fbs = features.features_by_state
    phi = fbs[batch.x, batch.a]
    next_values = expected_features(fbs, policy, batch.x_next) @ theta
    td_error = batch.r + gamma * next_values - phi @ theta
    return _scaled(phi, lam_c_minus_one) * td_error[:, None]


def _one(sample):
    if isinstance(sample, TransitionBatch):
        return sample
    return TransitionBatch.from_transitions([sample])


def grad_theta_estimate(sample, policy, beta, covariance, features, c):
    """
    (1 - gamma) sum_a pi(a|x0) phi(x0, a)
    + gamma <phi, Lambda^{c-1} beta> sum_a pi(a|x') phi(x', a)
    - Lambda^{c-1} phi <phi, beta>
    """
    lam = lambda_power(covariance, float(c) - 1)
    return grad_theta_batch(_one(sample), policy, np.asarray(beta, dtype=float), features, lam)[0]


def grad_beta_estimate(sample, policy, theta, covariance, features, c):
    """Lambda^{c-1} phi (r + gamma v_t(x') - <phi, theta>)."""
    lam = lambda_power(covariance, float(c) - 1)
    return grad_beta_batch(_one(sample), policy, np.asarray(theta, dtype=float), features, lam)[0]


# Exact, oracle-side quantities

def state_values(mdp, policy, theta):
    """v_{theta,pi}(x) = sum_a pi(a|x) <phi(x, a), theta>."""
    q = (mdp.features @ theta).reshape(mdp.num_states, mdp.num_actions)
    return (policy.probs * q).sum(axis=1)


def occupancy_from_beta(mdp, policy, beta, lam_c):
    """mu_{beta,pi}(x, a) = pi(a|x) [(1 - gamma) nu0(x) + gamma psi(x)^T Lambda^c beta]."""
    state_mass = (1 - mdp.discount) * mdp.init_dist \
        + mdp.discount * mdp.next_state_factor.T @ (lam_c @ beta)
    return (policy.probs * state_mass[:, None]).reshape(-1)


def exact_grad_theta(mdp, policy, beta, lam_c):
    return mdp.features.T @ occupancy_from_beta(mdp, policy, beta, lam_c) - lam_c @ beta


def exact_grad_beta(mdp, policy, theta, lam_c):
    values = state_values(mdp, policy, theta)
    return lam_c @ (mdp.reward_factor + mdp.discount * mdp.next_state_factor @ values - theta)


def lagrangian(mdp, policy, beta, theta, lam_c):
    """f(beta, pi; theta) = <beta, Lambda^c omega> + <theta, Phi^T mu_{beta,pi} - Lambda^c beta>."""
    return float(beta @ (lam_c @ mdp.reward_factor)
                 + theta @ exact_grad_theta(mdp, policy, beta, lam_c))


def support_records(mdp, behavior, setting=DISCOUNTED):
    """Every record with positive probability under the behavior data, and that probability."""
    mu_b = occupancy(mdp, behavior, setting).mu
    pairs, next_states = np.nonzero(mu_b[:, None] * mdp.transition > 0)
    weights = mu_b[pairs] * mdp.transition[pairs, next_states]
    if setting == DISCOUNTED:
        starts = np.flatnonzero(mdp.init_dist > 0)
        x0 = np.tile(starts, len(pairs))
        weights = np.repeat(weights, len(starts)) * np.tile(mdp.init_dist[starts], len(pairs))
        pairs = np.repeat(pairs, len(starts))
        next_states = np.repeat(next_states, len(starts))
    else:
        x0 = np.full(len(pairs), -1, dtype=np.int64)
    batch = TransitionBatch(
        x0=x0, x=pairs // mdp.num_actions, a=pairs % mdp.num_actions,
        r=mdp.reward[pairs], x_next=next_states)
    return batch, weights


def expected_estimates(mdp, behavior, policy, beta, theta, covariance, c):
    """Exact expectations of the theta and beta estimators over the behavior data."""
    batch, weights = support_records(mdp, behavior, DISCOUNTED)
    features = mdp.feature_map()
    lam = lambda_power(covariance, float(c) - 1)
    g_theta = weights @ grad_theta_batch(batch, policy, beta, features, lam)
    g_beta = weights @ grad_beta_batch(batch, policy, theta, features, lam)
    return g_theta, g_beta


def estimator_bias(mdp, behavior, policy, beta, theta, covariance, c):
    g_theta, g_beta = expected_estimates(mdp, behavior, policy, beta, theta, covariance, c)
    lam_c = covariance.power(c)
    return {
        'theta': float(np.max(np.abs(g_theta - exact_grad_theta(mdp, policy, beta, lam_c)))),
        'beta': float(np.max(np.abs(g_beta - exact_grad_beta(mdp, policy, theta, lam_c)))),
    }


@dataclass(frozen=True, eq=False)
class Iterate:
    policy: Policy
    theta: np.ndarray
    beta: np.ndarray
    rho: Optional[float] = None


@dataclass(frozen=True)
class GapReport:
    gap: float
    term_theta: float
    term_beta: float
    term_pi: float
    suboptimality: float
    T: int
    term_rho: Optional[float] = None

    @property
    def terms_total(self):
        return self.term_theta + self.term_beta + self.term_pi + (self.term_rho or 0.0)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TraceRow:
    t: int
    samples: int
    exact_return: Optional[float] = None
    subopt: Optional[float] = None
    gap: Optional[float] = None
    term_theta: Optional[float] = None
    term_beta: Optional[float] = None
    term_pi: Optional[float] = None
    rho_t: Optional[float] = None
    term_rho: Optional[float] = None
    q_span: Optional[float] = None

    def flatten(self):
        return asdict(self)


class Oracle(object):
    """Exact MDP access for diagnostics. The learner never touches it."""

    def __init__(self, mdp, behavior=None, comparator=None, setting=DISCOUNTED,
                 covariance=None):
        self.mdp = mdp
        self.behavior = behavior
        self.setting = setting
        if comparator is None:
            comparator, _ = optimal_policy(mdp, setting)
        self.comparator = comparator
        if covariance is None and behavior is not None:
            _, covariance = behavior_occupancy(mdp, behavior, setting)
        self.covariance = covariance


class DiscountedGapTracker(object):
    """
    Running exact returns and, when Lambda^{-c} exists, the dynamic duality
    gap against the comparators theta*_t = theta^{pi_t} and
    beta* = Lambda^{-c} Phi^T mu*.
    """
    setting = DISCOUNTED

    def __init__(self, oracle, c, with_gap=True):
        self.mdp = oracle.mdp
        self.comparator = oracle.comparator
        comparator_measure = occupancy(self.mdp, self.comparator, self.setting)
        self.nu_star = comparator_measure.nu
        self.mu_star = comparator_measure.mu
        self.optimum = float(self.mu_star @ self.mdp.reward)
        self.returns = []
        self.sums = {'gap': 0.0, 'term_theta': 0.0, 'term_beta': 0.0, 'term_pi': 0.0}
        self.with_gap = False
        if with_gap and oracle.covariance is not None:
            if oracle.covariance.invertible:
                self.lam_c = oracle.covariance.power(c)
                self.beta_star = oracle.covariance.power(-c) @ (self.mdp.features.T @ self.mu_star)
                self.with_gap = True
            else:
                PKG_LOGGER.warning("Lambda is not invertible; duality gap columns left empty")

    def policy_term(self, policy, theta):
        q = (self.mdp.features @ theta).reshape(self.mdp.num_states, self.mdp.num_actions)
        return float(self.nu_star @ ((self.comparator.probs - policy.probs) * q).sum(axis=1))

    def add(self, iterate):
        policy, theta, beta = iterate.policy, iterate.theta, iterate.beta
        self.returns.append(policy_return(self.mdp, policy, self.setting))
        if not self.with_gap:
            return
        mdp, lam_c = self.mdp, self.lam_c
        theta_star = policy_values(mdp, policy, DISCOUNTED).theta
        self.sums['term_theta'] += float(
            (theta - theta_star) @ exact_grad_theta(mdp, policy, beta, lam_c))
        self.sums['term_beta'] += float(
            (self.beta_star - beta) @ exact_grad_beta(mdp, policy, theta, lam_c))
        self.sums['term_pi'] += self.policy_term(policy, theta)
        self.sums['gap'] += (
            lagrangian(mdp, self.comparator, self.beta_star, theta, lam_c)
            - lagrangian(mdp, policy, beta, theta_star, lam_c))

    @property
    def count(self):
        return len(self.returns)

    @property
    def mixture_return(self):
        return float(np.mean(self.returns))

    def averages(self):
        if not self.with_gap or not self.count:
            return {}
        return {key: value / self.count for key, value in self.sums.items()}

    def row(self, t, samples, **extra):
        return TraceRow(
            t=t, samples=samples,
            exact_return=self.mixture_return,
            subopt=self.optimum - self.mixture_return,
            **self.averages(), **extra)

    def report(self):
        averages = self.averages()
        return GapReport(
            gap=averages.get('gap', float('nan')),
            term_theta=averages.get('term_theta', float('nan')),
            term_beta=averages.get('term_beta', float('nan')),
            term_pi=averages.get('term_pi', float('nan')),
            term_rho=averages.get('term_rho'),
            suboptimality=self.optimum - self.mixture_return,
            T=self.count,
        )


@dataclass(frozen=True, eq=False)
class SolverResult:
    setting: str
    config: SolverConfig
    policies: np.ndarray
    thetas: np.ndarray
    betas: np.ndarray
    trace: List[TraceRow]
    samples_used: int
    rhos: Optional[np.ndarray] = None
    mixture_return: Optional[float] = None
    optimal_return: Optional[float] = None
    gap_report: Optional[GapReport] = None
    metadata: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.policies)

    def policy(self, features, t):
        """Policy table of outer round t (0-based)."""
        return SoftmaxPolicy(features.features_by_state, self.policies[t], self.config.alpha).table()

    def iterates(self, features):
        for t in range(self.T):
            yield Iterate(
                policy=self.policy(features, t),
                theta=self.thetas[t],
                beta=self.betas[t],
                rho=None if self.rhos is None else float(self.rhos[t]),
            )

    def sample_output_policy(self, features, rng):
        return self.policy(features, int(rng.integers(self.T)))

    @property
    def suboptimality(self):
        if self.mixture_return is None or self.optimal_return is None:
            return None
        return self.optimal_return - self.mixture_return


def duality_gap_report(mdp, behavior, iterates, comparator, c, covariance=None):
    """
    Exact-expectation dynamic duality gap of an iterate trace and its three
    regret terms. Raises NearSingular when Lambda^{-c} does not exist.
    """
    oracle = Oracle(mdp, behavior, comparator, DISCOUNTED, covariance)
    oracle.covariance.power(-c)
    tracker = DiscountedGapTracker(oracle, c)
    for iterate in iterates:
        tracker.add(iterate)
    return tracker.report()


# Tuning

@dataclass(frozen=True)
class ProblemBounds:
    phi_bound: float
    discount: float
    num_actions: int
    dim: int

    @classmethod
    def from_features(cls, features):
        return cls(features.phi_bound, features.discount, features.num_actions, features.dim)


def _norm_factor(bounds, c, lambda_norm):
    """||Lambda||_2^{2c-1}, bounded by D_phi^{2(2c-1)} when Lambda is unknown."""
    if c == 0.5:
        return 1.0
    if lambda_norm is None:
        return bounds.phi_bound ** (2 * (2 * c - 1))
    return lambda_norm ** (2 * c - 1)


def _trace_factor(bounds, c, lambda_trace):
    """Tr(Lambda^{2c-1}): d at c=1/2, at most D_phi^2 at c=1."""
    if c == 0.5:
        return float(bounds.dim)
    if lambda_trace is None:
        return bounds.phi_bound ** (2 * (2 * c - 1))
    return lambda_trace


def discounted_constants(bounds, D_theta, D_beta, c, lambda_norm=None, lambda_trace=None):
    gamma, d_phi = bounds.discount, bounds.phi_bound
    G2_theta = 3 * d_phi ** 2 * (
        (1 - gamma) ** 2 + (1 + gamma ** 2) * D_beta ** 2 * _norm_factor(bounds, c, lambda_norm))
    G2_beta = 3 * (1 + (1 + gamma ** 2) * d_phi ** 2 * D_theta ** 2) \
        * _trace_factor(bounds, c, lambda_trace)
    return TunedConstants(d_phi, bounds.num_actions, G2_theta, G2_beta)


def _inner_ratio(constants, D_theta, D_beta):
    log_actions = math.log(constants.num_actions)
    return (2 * D_beta ** 2 * constants.G2_beta
            + D_theta ** 2 * constants.phi_bound ** 2 * log_actions) \
        / (2 * D_theta ** 2 * constants.G2_theta)


def _rates(constants, D_theta, D_beta, T, K):
    log_actions = math.log(constants.num_actions)
    return {
        'eta': 2 * D_theta / (math.sqrt(constants.G2_theta) * math.sqrt(K)),
        'zeta': 2 * D_beta / (math.sqrt(constants.G2_beta) * math.sqrt(T)),
        'alpha': math.sqrt(2 * log_actions) / (constants.phi_bound * D_theta * math.sqrt(T)),
    }


def _ratio(num, den):
    return num / den if den > 0 else math.inf


def regret_bounds(config):
    """Closed-form bounds on the summed theta, beta and policy regret terms."""
    k = config.constants
    T, K = config.T, config.K
    return {
        'term_theta': T * (_ratio(2 * config.D_theta ** 2, config.eta * K)
                           + config.eta * k.G2_theta / 2),
        'term_beta': _ratio(2 * config.D_beta ** 2, config.zeta)
        + config.zeta * T * k.G2_beta / 2,
        'term_pi': _ratio(math.log(k.num_actions), config.alpha)
        + config.alpha * T * k.phi_bound ** 2 * config.D_theta ** 2 / 2,
    }


def theoretical_bound(config):
    """Suboptimality bound implied by the rates: the regret bounds divided by T."""
    return sum(regret_bounds(config).values()) / config.T


def _config_for(constants, D_theta, D_beta, c, T, K, **kwargs):
    return SolverConfig(T=T, K=K, c=c, D_theta=D_theta, D_beta=D_beta,
                        constants=constants, **_rates(constants, D_theta, D_beta, T, K),
                        **kwargs)


def _smallest_T(bound_at, epsilon):
    T = 1
    while bound_at(T) > epsilon:
        T *= 2
        if T > MAX_TUNE_T:
            raise ConfigInvalid("target accuracy %g is out of reach" % epsilon)
    lo, hi = T // 2 + 1, T
    while lo < hi:
        mid = (lo + hi) // 2
        if bound_at(mid) <= epsilon:
            hi = mid
        else:
            lo = mid + 1
    return hi


def _largest_T(cost_at, budget):
    if cost_at(1) > budget:
        return None
    lo, hi = 1, budget
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if cost_at(mid) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def tune(bounds, D_theta, D_beta, c, lambda_norm=None, lambda_trace=None,
         T=None, epsilon=None, **kwargs):
    """
    Learning rates and inner loop length from the problem constants, for a
    given number of outer rounds T or for a target accuracy epsilon.
    """
    c = float(c)
    constants = discounted_constants(bounds, D_theta, D_beta, c, lambda_norm, lambda_trace)
    ratio = _inner_ratio(constants, D_theta, D_beta)

    def inner(T):
        return max(1, int(math.ceil(T * ratio)))

    if T is None:
        if not epsilon or epsilon <= 0:
            raise ConfigInvalid("tune needs either T or a positive epsilon")
        T = _smallest_T(
            lambda T: theoretical_bound(_config_for(constants, D_theta, D_beta, c, T, inner(T))),
            epsilon)
    config = _config_for(constants, D_theta, D_beta, c, int(T), inner(T), **kwargs)
    PKG_LOGGER.info("tuned discounted solver: T=%d K=%d eta=%.4g zeta=%.4g alpha=%.4g",
                    config.T, config.K, config.eta, config.zeta, config.alpha)
    return config.validate()


def tune_for_budget(bounds, D_theta, D_beta, c, budget, lambda_norm=None,
                    lambda_trace=None, **kwargs):
    """Largest tuned T whose T * K samples fit in `budget`."""
    c = float(c)
    constants = discounted_constants(bounds, D_theta, D_beta, c, lambda_norm, lambda_trace)
    ratio = _inner_ratio(constants, D_theta, D_beta)

    def inner(T):
        return max(1, int(math.ceil(T * ratio)))

    T = _largest_T(lambda T: T * inner(T), int(budget))
    if T is None:
        T, K = 1, max(1, int(budget))
    else:
        K = inner(T)
    config = _config_for(constants, D_theta, D_beta, c, T, K, **kwargs)
    PKG_LOGGER.info("tuned discounted solver for %d samples: T=%d K=%d", budget, T, K)
    return config.validate()


# Solver loop

def _check_dataset(source, needed):
    if isinstance(source, DatasetCursor) and source.remaining < needed:
        raise DatasetExhausted("solver needs %d records, dataset has %d" % (
            needed, source.remaining))


def _is_row(t, config):
    return t % config.eval_every == 0 or t == config.T


def run(features, dataset_or_sampler, config, oracle=None, covariance=None):
    """
    Run the discounted solver on a fixed dataset (at least T * K records) or
    a streaming sampler. `oracle` enables exact returns and gap columns in the
    trace. `covariance` is required when c = 1/2.
    """
    config.validate()
    c = float(config.c)
    source = as_source(dataset_or_sampler)
    _check_dataset(source, config.samples_needed)
    lam = lambda_power(covariance, c - 1)
    fbs = features.features_by_state
    dim = features.dim
    theta_ball = BallDomain(config.D_theta)
    beta_ball = BallDomain(config.D_beta)

    theta = np.zeros(dim)
    beta = np.zeros(dim)
    accum = np.zeros(dim)
    policies = np.empty((config.T, dim))
    thetas = np.empty((config.T, dim))
    betas = np.empty((config.T, dim))
    tracker = DiscountedGapTracker(oracle, c, config.gap_diagnostics) if oracle else None
    trace = []
    samples = 0
    started = time.time()

    PKG_LOGGER.info("discounted solver: T=%d K=%d c=%s d=%d", config.T, config.K, c, dim)
    for t in tqdm(range(1, config.T + 1), disable=log_stream_quiet(), desc='outer rounds'):
        policy = SoftmaxPolicy(fbs, accum.copy(), config.alpha)
        inner = source.take(config.K - 1)
        grads = grad_theta_batch(inner, policy, beta, features, lam)
        path = projected_path(theta, -config.eta * grads, config.D_theta)
        theta_t = project_ball(path.mean(axis=0), theta_ball)
        outer = source.take(1)
        g_beta = grad_beta_batch(outer, policy, theta_t, features, lam)[0]
        samples += config.K

        policies[t - 1] = policy.logit_accum
        thetas[t - 1] = theta_t
        betas[t - 1] = beta
        if tracker:
            tracker.add(Iterate(policy.table(), theta_t, beta))

        beta = project_ball(beta + config.zeta * g_beta, beta_ball)
        accum = accum + theta_t
        theta = theta_t
        if _is_row(t, config):
            trace.append(tracker.row(t, samples) if tracker else TraceRow(t=t, samples=samples))

    metadata = {
        'wall_clock': time.time() - started,
        'lambda': 'none' if lam is None else (
            'empirical (approximate)' if covariance.approximate else 'exact'),
    }
    if covariance is not None and covariance.approximate and lam is not None:
        PKG_LOGGER.warning("running with an empirical covariance; results are approximate")
    result = SolverResult(
        setting=DISCOUNTED, config=config, policies=policies, thetas=thetas, betas=betas,
        trace=trace, samples_used=samples, metadata=metadata,
        mixture_return=tracker.mixture_return if tracker else None,
        optimal_return=tracker.optimum if tracker else None,
        gap_report=tracker.report() if tracker and tracker.with_gap else None,
    )
    PKG_LOGGER.info("discounted solver done: %d samples in %.2fs", samples, metadata['wall_clock'])
    return result
