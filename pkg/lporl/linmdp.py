"""
Linear MDP model, validation and exact small-scale oracles.

State-action pairs are indexed by z = x * num_actions + a throughout, so the
feature matrix has one row per pair and `features_by_state` is a plain
reshape of it.
"""

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from . import AVERAGE, DISCOUNTED, SETTINGS
from .exceptions import (AssumptionViolated, InvalidDistribution, InvalidMDP,
                         InvalidPolicy, NoConvergence, NotUnichain,
                         RankDeficient, RewardOutOfRange, SingularSystem)
from .log import PKG_LOGGER
from .numerics import softmax_rows

NEG_CLAMP_TOL = 1e-12
ROW_SUM_TOL = 1e-9
INIT_SUM_TOL = 1e-12
POLICY_SUM_TOL = 1e-12
RANK_TOL = 1e-10
REALIZABILITY_TOL = 1e-6
STATIONARY_TOL = 1e-10
STATIONARY_MAX_ITER = 100000
RANK_RETRIES = 20


def check_setting(setting):
    if setting not in SETTINGS:
        raise ValueError("setting must be one of %s, got %r" % (SETTINGS, setting))
    return setting


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise InvalidPolicy("policy table must be 2-d, got shape %s" % (probs.shape,))
        if not np.all(np.isfinite(probs)) or probs.min() < 0:
            raise InvalidPolicy("policy probabilities must be finite and non-negative")
        row_error = np.max(np.abs(probs.sum(axis=1) - 1.0))
        if row_error > POLICY_SUM_TOL:
            raise InvalidPolicy("policy rows must sum to 1 (max error %.3g)" % row_error)
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    @property
    def num_states(self):
        return self.probs.shape[0]

    @property
    def num_actions(self):
        return self.probs.shape[1]

    def action_probs(self, states):
        return self.probs[states]

    @classmethod
    def uniform(cls, num_states, num_actions):
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def eps_mix(cls, target, epsilon):
        """(1 - epsilon) * target + epsilon * uniform."""
        if not 0 <= epsilon <= 1:
            raise InvalidPolicy("eps_mix epsilon must be in [0, 1], got %r" % (epsilon,))
        uniform = np.full(target.probs.shape, 1.0 / target.num_actions)
        probs = (1 - epsilon) * target.probs + epsilon * uniform
        return cls(probs / probs.sum(axis=1, keepdims=True))

    @classmethod
    def softmax(cls, logits):
        return cls(softmax_rows(logits))

    def to_dict(self):
        return {'probs': self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    mu: np.ndarray
    nu: np.ndarray
    setting: str

    def flow_residual(self, mdp):
        inflow = mdp.transition.T @ self.mu
        outflow = self.mu.reshape(mdp.num_states, mdp.num_actions).sum(axis=1)
        if self.setting == DISCOUNTED:
            target = (1 - mdp.discount) * mdp.init_dist + mdp.discount * inflow
        else:
            target = inflow
        return float(np.max(np.abs(outflow - target)))


@dataclass(frozen=True, eq=False)
class ValueSolution:
    theta: np.ndarray
    q: np.ndarray
    v: np.ndarray
    rho: Optional[float] = None
    q_span: float = 0.0


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """What the learner is allowed to see of an MDP."""
    features_by_state: np.ndarray
    discount: float
    phi_bound: float

    @property
    def num_states(self):
        return self.features_by_state.shape[0]

    @property
    def num_actions(self):
        return self.features_by_state.shape[1]

    @property
    def dim(self):
        return self.features_by_state.shape[2]

    def phi(self, states, actions):
        return self.features_by_state[states, actions]

    def state_features(self, states):
        return self.features_by_state[states]


@dataclass(frozen=True, eq=False)
class LinearMDP:
    num_states: int
    num_actions: int
    features: np.ndarray
    next_state_factor: np.ndarray
    reward_factor: np.ndarray
    init_dist: np.ndarray
    discount: float

    def __post_init__(self):
        for name in ['features', 'next_state_factor', 'reward_factor', 'init_dist']:
            value = np.array(getattr(self, name), dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'discount', float(self.discount))
        self.validate()

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_pairs(self):
        return self.num_states * self.num_actions

    @cached_property
    def transition(self):
        raw = self.features @ self.next_state_factor
        clamped = np.clip(raw, 0.0, None)
        transition = clamped / clamped.sum(axis=1, keepdims=True)
        transition.setflags(write=False)
        return transition

    @cached_property
    def reward(self):
        reward = np.clip(self.features @ self.reward_factor, 0.0, 1.0)
        reward.setflags(write=False)
        return reward

    @cached_property
    def features_by_state(self):
        return self.features.reshape(self.num_states, self.num_actions, self.dim)

    @property
    def phi_bound(self):
        return float(np.max(np.linalg.norm(self.features, axis=1)))

    @property
    def psi_bound(self):
        return float(np.linalg.norm(self.next_state_factor.sum(axis=1)))

    @property
    def omega_bound(self):
        return float(np.linalg.norm(self.reward_factor))

    @property
    def theta_bound(self):
        """Bound on ||theta^pi|| over all policies (discounted)."""
        return self.omega_bound + self.psi_bound / (1 - self.discount)

    def feature_map(self):
        return FeatureMap(self.features_by_state, self.discount, self.phi_bound)

    def validate(self):
        num_pairs = self.num_states * self.num_actions
        if self.num_states < 1 or self.num_actions < 1:
            raise InvalidMDP("num_states and num_actions must be positive")
        if self.features.ndim != 2 or self.features.shape[0] != num_pairs:
            raise InvalidMDP("features must have shape (%d, d), got %s" % (
                num_pairs, self.features.shape))
        dim = self.features.shape[1]
        if self.next_state_factor.shape != (dim, self.num_states):
            raise InvalidMDP("next_state_factor must have shape (%d, %d), got %s" % (
                dim, self.num_states, self.next_state_factor.shape))
        if self.reward_factor.shape != (dim,):
            raise InvalidMDP("reward_factor must have length %d" % dim)
        if self.init_dist.shape != (self.num_states,):
            raise InvalidMDP("init_dist must have length %d" % self.num_states)
        if not 0 <= self.discount < 1:
            raise InvalidMDP("discount must be in [0, 1), got %r" % self.discount)
        for name in ['features', 'next_state_factor', 'reward_factor', 'init_dist']:
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidMDP("%s has non-finite entries" % name)

        raw = self.features @ self.next_state_factor
        if raw.min() < -NEG_CLAMP_TOL:
            raise InvalidDistribution(
                "transition entry %.3g is negative beyond tolerance" % raw.min())
        row_error = np.max(np.abs(np.clip(raw, 0.0, None).sum(axis=1) - 1.0))
        if row_error > ROW_SUM_TOL:
            raise InvalidDistribution(
                "transition rows must sum to 1 (max error %.3g)" % row_error)
        reward = self.features @ self.reward_factor
        if reward.min() < -ROW_SUM_TOL or reward.max() > 1 + ROW_SUM_TOL:
            raise RewardOutOfRange("rewards must lie in [0, 1], got range [%.3g, %.3g]" % (
                reward.min(), reward.max()))
        if self.init_dist.min() < -NEG_CLAMP_TOL or \
                abs(self.init_dist.sum() - 1.0) > INIT_SUM_TOL:
            raise InvalidDistribution("init_dist must be a probability distribution")
        sigma_min = scipy.linalg.svdvals(self.features).min()
        if sigma_min <= RANK_TOL:
            raise RankDeficient(
                "features are not full column rank (smallest singular value %.3g)" % sigma_min)

    def to_dict(self):
        return {
            'num_states': self.num_states,
            'num_actions': self.num_actions,
            'dim': self.dim,
            'phi': self.features.tolist(),
            'psi': self.next_state_factor.tolist(),
            'omega': self.reward_factor.tolist(),
            'nu0': self.init_dist.tolist(),
            'gamma': self.discount,
        }

    @classmethod
    def from_dict(cls, data):
        if 'P' in data:
            return tabular_to_linear(
                data['P'], data['r'], data['nu0'], data.get('gamma', 0.9))
        try:
            num_states = int(data['num_states'])
            num_actions = int(data['num_actions'])
            dim = int(data['dim'])
            return cls(
                num_states=num_states,
                num_actions=num_actions,
                features=np.reshape(np.asarray(data['phi'], dtype=float),
                                    (num_states * num_actions, dim)),
                next_state_factor=np.reshape(np.asarray(data['psi'], dtype=float),
                                             (dim, num_states)),
                reward_factor=np.asarray(data['omega'], dtype=float),
                init_dist=np.asarray(data['nu0'], dtype=float),
                discount=float(data['gamma']),
            )
        except KeyError as exc:
            raise InvalidMDP("MDP definition is missing field %s" % exc)
        except ValueError as exc:
            raise InvalidMDP("MDP definition has malformed arrays: %s" % exc)

    def digest(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def load_mdp(path):
    with open(path) as mdp_file:
        data = json.load(mdp_file)
    return LinearMDP.from_dict(data)


def dump_mdp(mdp, path):
    with open(path, 'w') as mdp_file:
        json.dump(mdp.to_dict(), mdp_file, indent=1, sort_keys=True)
        mdp_file.write('\n')


def tabular_to_linear(transition, reward, init_dist, discount):
    """Embed a tabular MDP as a linear MDP with one-hot features."""
    transition = np.asarray(transition, dtype=float)
    reward = np.asarray(reward, dtype=float)
    if transition.ndim == 3:
        num_states, num_actions, _ = transition.shape
        transition = transition.reshape(num_states * num_actions, num_states)
    elif transition.ndim == 2:
        num_states = transition.shape[1]
        num_actions = transition.shape[0] // num_states
    else:
        raise InvalidMDP("transition table must be 2-d or 3-d")
    num_pairs = num_states * num_actions
    if transition.shape != (num_pairs, num_states):
        raise InvalidMDP("transition table has inconsistent shape %s" % (transition.shape,))
    reward = reward.reshape(-1)
    if reward.shape != (num_pairs,):
        raise InvalidMDP("reward table must have %d entries" % num_pairs)
    if transition.min() < 0 or np.max(np.abs(transition.sum(axis=1) - 1)) > ROW_SUM_TOL:
        raise InvalidDistribution("every transition row must be a probability distribution")
    if reward.min() < 0 or reward.max() > 1:
        raise RewardOutOfRange("rewards must lie in [0, 1]")
    return LinearMDP(
        num_states=num_states,
        num_actions=num_actions,
        features=np.eye(num_pairs),
        next_state_factor=transition,
        reward_factor=reward,
        init_dist=np.asarray(init_dist, dtype=float),
        discount=discount,
    )


def seeded_rng(seed, stream=None):
    seed = int(seed) % 2 ** 64
    if stream is None:
        return np.random.default_rng(np.random.SeedSequence(seed))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def random_linear_mdp(num_states, num_actions, dim, seed, discount=0.9):
    """
    Soft state aggregation: feature rows and latent next-state rows live on
    simplices, which makes P = Phi Psi row-stochastic by construction.
    """
    num_pairs = num_states * num_actions
    if dim > num_pairs:
        raise InvalidMDP("dim %d exceeds the number of state-action pairs %d" % (dim, num_pairs))
    rng = seeded_rng(seed)
    features = rng.dirichlet(np.ones(dim), size=num_pairs)
    next_state_factor = rng.dirichlet(np.ones(num_states), size=dim)
    reward_factor = rng.uniform(0.0, 1.0, size=dim)
    init_dist = rng.dirichlet(np.ones(num_states))
    for attempt in range(RANK_RETRIES):
        if scipy.linalg.svdvals(features).min() > RANK_TOL:
            break
        PKG_LOGGER.debug("perturbing rank deficient features (attempt %d)", attempt + 1)
        features = features + 1e-3 * rng.random(features.shape)
        features = features / features.sum(axis=1, keepdims=True)
    else:
        raise RankDeficient(
            "could not draw full rank features for %d pairs in %d dims" % (num_pairs, dim))
    return LinearMDP(
        num_states=num_states,
        num_actions=num_actions,
        features=features,
        next_state_factor=next_state_factor,
        reward_factor=reward_factor,
        init_dist=init_dist,
        discount=discount,
    )


def random_tabular_mdp(num_states, num_actions, seed, discount=0.9):
    rng = seeded_rng(seed)
    transition = rng.dirichlet(np.ones(num_states), size=num_states * num_actions)
    reward = rng.uniform(0.0, 1.0, size=num_states * num_actions)
    init_dist = rng.dirichlet(np.ones(num_states))
    return tabular_to_linear(transition, reward, init_dist, discount)


def cycle2(discount=0.5):
    """Two states, one action, 0 -> 1 -> 0, reward 1 in state 0."""
    return tabular_to_linear(
        [[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0], [1.0, 0.0], discount)


def _check_policy(mdp, policy):
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidPolicy("policy shape %s does not match MDP (%d, %d)" % (
            policy.probs.shape, mdp.num_states, mdp.num_actions))


def policy_transition(mdp, policy):
    """State-to-state transition matrix P_pi."""
    by_state = mdp.transition.reshape(mdp.num_states, mdp.num_actions, mdp.num_states)
    return np.einsum('xa,xay->xy', policy.probs, by_state)


def policy_pair_matrix(mdp, policy):
    """The |X| x |X||A| matrix mapping q to v = sum_a pi(a|x) q(x, a)."""
    pairs = np.zeros((mdp.num_states, mdp.num_pairs))
    for x in range(mdp.num_states):
        pairs[x, x * mdp.num_actions:(x + 1) * mdp.num_actions] = policy.probs[x]
    return pairs


def discounted_occupancy(mdp, policy):
    _check_policy(mdp, policy)
    system = np.eye(mdp.num_states) - mdp.discount * policy_transition(mdp, policy).T
    try:
        nu = (1 - mdp.discount) * scipy.linalg.solve(system, mdp.init_dist)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystem("discounted flow system is singular: %s" % exc)
    nu = np.clip(nu, 0.0, None)
    mu = (policy.probs * nu[:, None]).reshape(-1)
    return OccupancyMeasure(mu=mu, nu=nu, setting=DISCOUNTED)


def stationary_distribution(mdp, policy):
    """
    Unique stationary distribution of P_pi.

    Power iteration on the lazy chain (I + P_pi) / 2 must converge and the
    stationary equations must have a one-dimensional solution space,
    otherwise NotUnichain is raised.
    """
    _check_policy(mdp, policy)
    chain = policy_transition(mdp, policy)
    lazy = (np.eye(mdp.num_states) + chain) / 2
    nu = np.full(mdp.num_states, 1.0 / mdp.num_states)
    for _ in range(STATIONARY_MAX_ITER):
        nxt = nu @ lazy
        if np.abs(nxt - nu).sum() < STATIONARY_TOL:
            nu = nxt
            break
        nu = nxt
    else:
        raise NotUnichain("stationary distribution did not converge in %d iterations"
                          % STATIONARY_MAX_ITER)
    singular = scipy.linalg.svdvals(np.eye(mdp.num_states) - chain.T)
    nullity = int(np.sum(singular < 1e-9))
    if nullity > 1:
        raise NotUnichain("policy induces %d recurrent classes" % nullity)
    system = np.eye(mdp.num_states) - chain.T
    system[-1, :] = 1.0
    rhs = np.zeros(mdp.num_states)
    rhs[-1] = 1.0
    try:
        refined = scipy.linalg.solve(system, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        refined = nu
    refined = np.clip(refined, 0.0, None)
    return refined / refined.sum()


def average_occupancy(mdp, policy):
    nu = stationary_distribution(mdp, policy)
    mu = (policy.probs * nu[:, None]).reshape(-1)
    return OccupancyMeasure(mu=mu, nu=nu, setting=AVERAGE)


def occupancy(mdp, policy, setting):
    if check_setting(setting) == DISCOUNTED:
        return discounted_occupancy(mdp, policy)
    return average_occupancy(mdp, policy)


def policy_values(mdp, policy, setting=DISCOUNTED):
    _check_policy(mdp, policy)
    check_setting(setting)
    pairs = policy_pair_matrix(mdp, policy)
    if setting == DISCOUNTED:
        system = np.eye(mdp.num_pairs) - mdp.discount * mdp.transition @ pairs
        try:
            q = scipy.linalg.solve(system, mdp.reward)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SingularSystem("Bellman system is singular: %s" % exc)
        v = pairs @ q
        theta = mdp.reward_factor + mdp.discount * mdp.next_state_factor @ v
        return ValueSolution(theta=theta, q=q, v=v, q_span=float(q.max() - q.min()))

    nu = stationary_distribution(mdp, policy)
    reward_pi = pairs @ mdp.reward
    rho = float(nu @ reward_pi)
    chain = policy_transition(mdp, policy)
    system = np.vstack([np.eye(mdp.num_states) - chain, nu[None, :]])
    rhs = np.concatenate([reward_pi - rho, [0.0]])
    v = scipy.linalg.lstsq(system, rhs)[0]
    q = mdp.reward - rho + mdp.transition @ v
    theta, residual = realize_theta(mdp, q)
    if residual > REALIZABILITY_TOL:
        raise AssumptionViolated(
            "q is not realizable in the feature span (residual %.3g)" % residual)
    return ValueSolution(theta=theta, q=q, v=v, rho=rho, q_span=float(q.max() - q.min()))


def realize_theta(mdp, q):
    theta = scipy.linalg.lstsq(mdp.features, q)[0]
    return theta, float(np.max(np.abs(mdp.features @ theta - q)))


def policy_return(mdp, policy, setting=DISCOUNTED):
    """<mu^pi, r>: normalized discounted return or average reward."""
    measure = occupancy(mdp, policy, setting)
    return float(measure.mu @ mdp.reward)


def mixture_return(mdp, policies, setting=DISCOUNTED):
    policies = list(policies)
    if not policies:
        raise InvalidPolicy("mixture_return needs at least one policy")
    return float(np.mean([policy_return(mdp, policy, setting) for policy in policies]))


def _improve(mdp, q, actions, tol):
    q_by_state = q.reshape(mdp.num_states, mdp.num_actions)
    best = q_by_state.argmax(axis=1)
    current = q_by_state[np.arange(mdp.num_states), actions]
    keep = current >= q_by_state.max(axis=1) - tol
    return np.where(keep, actions, best)


def optimal_policy(mdp, setting=DISCOUNTED, tol=1e-10, max_iter=1000):
    """
    Policy iteration (Howard's for the average setting) from the all-zeros
    deterministic policy. Returns the greedy fixed point and its return.
    """
    check_setting(setting)
    actions = np.zeros(mdp.num_states, dtype=int)
    for iteration in range(max_iter):
        policy = Policy.deterministic(actions, mdp.num_actions)
        values = policy_values(mdp, policy, setting)
        if setting == DISCOUNTED:
            q = values.q
        else:
            q = mdp.reward + mdp.transition @ values.v
        improved = _improve(mdp, q, actions, tol)
        if np.array_equal(improved, actions):
            PKG_LOGGER.debug("policy iteration converged after %d iterations", iteration + 1)
            return policy, policy_return(mdp, policy, setting)
        actions = improved
    raise NoConvergence("policy iteration did not converge in %d iterations" % max_iter)
