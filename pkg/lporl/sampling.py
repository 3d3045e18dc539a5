"""
Offline data generation: behavior occupancy, feature covariance and i.i.d.
transition datasets.

Random streams are split from one seed with `numpy.random.SeedSequence`
spawn keys: DATASET_STREAM feeds dataset draws, SOLVER_STREAM the solver's own
draws (next actions in the average setting) and OUTPUT_STREAM the final
uniform draw of the output policy.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import DISCOUNTED
from .exceptions import DatasetExhausted, NotSymmetric
from .linmdp import check_setting, occupancy, seeded_rng
from .log import PKG_LOGGER
from .numerics import EIG_FLOOR, psd_power, symmetrize

DATASET_STREAM = 0
SOLVER_STREAM = 1
OUTPUT_STREAM = 2

EXACT_CATEGORICAL = 'exact-categorical'
ROLLOUT = 'rollout'
SOURCES = (EXACT_CATEGORICAL, ROLLOUT)

DRAW_CHUNK = 1 << 16


class Covariance(object):
    """Lambda = E[phi phi^T] with a per-instance cache of its powers."""

    def __init__(self, matrix, eig_floor=EIG_FLOOR, approximate=False):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise NotSymmetric("covariance must be square, got %s" % (matrix.shape,))
        if np.max(np.abs(matrix - matrix.T)) > 1e-12:
            raise NotSymmetric("covariance is not symmetric")
        self.matrix = symmetrize(matrix)
        self.matrix.setflags(write=False)
        self.eig_floor = eig_floor
        self.approximate = approximate
        self.eigvals = np.linalg.eigvalsh(self.matrix)
        if self.eigvals.min() < -1e-12:
            raise NotSymmetric("covariance has eigenvalue %.3g < 0" % self.eigvals.min())
        self.powers = {}

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def invertible(self):
        return bool(self.eigvals.min() >= self.eig_floor)

    @property
    def spectral_norm(self):
        return float(max(self.eigvals.max(), 0.0))

    def power(self, p):
        p = float(p)
        if p not in self.powers:
            self.powers[p] = psd_power(self.matrix, p, self.eig_floor)
            self.powers[p].setflags(write=False)
        return self.powers[p]

    def norm_power(self, p):
        """||Lambda||_2 ** p."""
        if p == 0:
            return 1.0
        return self.spectral_norm ** p

    def trace_power(self, p):
        return float(np.trace(self.power(p)))

    @classmethod
    def from_weights(cls, features, weights, **kwargs):
        return cls(features.T @ (weights[:, None] * features), **kwargs)


@dataclass(frozen=True)
class Transition:
    x0: Optional[int]
    x: int
    a: int
    r: float
    x_next: int


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    """Columnar block of transitions. x0 is -1 in the average setting."""
    x0: np.ndarray
    x: np.ndarray
    a: np.ndarray
    r: np.ndarray
    x_next: np.ndarray

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_transitions(cls, transitions):
        transitions = list(transitions)
        return cls(
            x0=np.array([-1 if t.x0 is None else t.x0 for t in transitions], dtype=np.int64),
            x=np.array([t.x for t in transitions], dtype=np.int64),
            a=np.array([t.a for t in transitions], dtype=np.int64),
            r=np.array([t.r for t in transitions], dtype=float),
            x_next=np.array([t.x_next for t in transitions], dtype=np.int64),
        )

    def slice(self, start, stop):
        return TransitionBatch(
            self.x0[start:stop], self.x[start:stop], self.a[start:stop],
            self.r[start:stop], self.x_next[start:stop])


@dataclass(frozen=True, eq=False)
class Dataset:
    records: TransitionBatch
    setting: str
    seed: int
    source: str = EXACT_CATEGORICAL
    behavior_spec: Optional[dict] = None
    mdp_digest: Optional[str] = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        x0 = int(self.records.x0[index])
        return Transition(
            x0=None if x0 < 0 else x0,
            x=int(self.records.x[index]),
            a=int(self.records.a[index]),
            r=float(self.records.r[index]),
            x_next=int(self.records.x_next[index]),
        )

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    @property
    def transitions(self):
        return list(self)

    def sidecar(self):
        return {
            'mdp_hash': self.mdp_digest,
            'behavior': self.behavior_spec,
            'seed': self.seed,
            'setting': self.setting,
            'source': self.source,
            'n': len(self),
        }


def behavior_occupancy(mdp, behavior_policy, setting=DISCOUNTED):
    measure = occupancy(mdp, behavior_policy, setting)
    covariance = Covariance.from_weights(mdp.features, measure.mu)
    if not covariance.invertible:
        PKG_LOGGER.info(
            "behavior covariance is singular (smallest eigenvalue %.3g); only c=1 is usable",
            covariance.eigvals.min())
    return measure, covariance


def empirical_lambda(dataset, mdp):
    pairs = dataset.records.x * mdp.num_actions + dataset.records.a
    counts = np.bincount(pairs, minlength=mdp.num_pairs)
    return Covariance.from_weights(mdp.features, counts / len(dataset), approximate=True)


def empirical_occupancy(dataset, mdp):
    pairs = dataset.records.x * mdp.num_actions + dataset.records.a
    return np.bincount(pairs, minlength=mdp.num_pairs) / len(dataset)


def _sample_categorical(cdf_rows, rows, rng):
    """Draw one index per entry of `rows` from the distribution cdf_rows[row]."""
    out = np.empty(len(rows), dtype=np.int64)
    width = cdf_rows.shape[1]
    for start in range(0, len(rows), DRAW_CHUNK):
        block = rows[start:start + DRAW_CHUNK]
        uniforms = rng.random(len(block))
        drawn = (uniforms[:, None] >= cdf_rows[block]).sum(axis=1)
        out[start:start + DRAW_CHUNK] = np.minimum(drawn, width - 1)
    return out


class _Tables(object):
    def __init__(self, mdp, behavior_policy):
        self.mdp = mdp
        self.next_cdf = np.cumsum(mdp.transition, axis=1)
        self.action_cdf = np.cumsum(behavior_policy.probs, axis=1)
        self.init_cdf = np.cumsum(mdp.init_dist)[None, :]

    def initial_states(self, n, rng):
        return _sample_categorical(self.init_cdf, np.zeros(n, dtype=np.int64), rng)

    def actions(self, states, rng):
        return _sample_categorical(self.action_cdf, states, rng)

    def next_states(self, pairs, rng):
        return _sample_categorical(self.next_cdf, pairs, rng)


def _complete(tables, x, a, setting, rng):
    mdp = tables.mdp
    pairs = x * mdp.num_actions + a
    x_next = tables.next_states(pairs, rng)
    if setting == DISCOUNTED:
        x0 = tables.initial_states(len(x), rng)
    else:
        x0 = np.full(len(x), -1, dtype=np.int64)
    return TransitionBatch(x0=x0, x=x, a=a, r=mdp.reward[pairs].copy(), x_next=x_next)


def _draw_categorical(tables, mu_cdf, n, setting, rng):
    mdp = tables.mdp
    pairs = _sample_categorical(mu_cdf, np.zeros(n, dtype=np.int64), rng)
    return _complete(tables, pairs // mdp.num_actions, pairs % mdp.num_actions, setting, rng)


def _draw_rollout(tables, n, setting, burn_in, rng):
    mdp = tables.mdp
    x = tables.initial_states(n, rng)
    a = tables.actions(x, rng)
    if setting == DISCOUNTED:
        active = rng.random(n) < mdp.discount
        while active.any():
            idx = np.flatnonzero(active)
            x[idx] = tables.next_states(x[idx] * mdp.num_actions + a[idx], rng)
            a[idx] = tables.actions(x[idx], rng)
            active[idx] = rng.random(len(idx)) < mdp.discount
    else:
        for _ in range(burn_in):
            x = tables.next_states(x * mdp.num_actions + a, rng)
            a = tables.actions(x, rng)
    return _complete(tables, x, a, setting, rng)


def draw_dataset(mdp, behavior_policy, n, seed, setting=DISCOUNTED,
                 source=EXACT_CATEGORICAL, burn_in=None, behavior_spec=None):
    """
    Draw n i.i.d. transitions (X0, X, A, R, X').

    `exact-categorical` samples (X, A) from the exact behavior occupancy.
    `rollout` runs the behavior policy from nu0 with a Geometric(1 - gamma)
    stopping time (discounted) or for `burn_in` steps (average, default
    10 * |X|, approximate).
    """
    check_setting(setting)
    if n < 1:
        raise ValueError("dataset size must be at least 1, got %r" % (n,))
    if source not in SOURCES:
        raise ValueError("source must be one of %s, got %r" % (SOURCES, source))
    rng = seeded_rng(seed, DATASET_STREAM)
    tables = _Tables(mdp, behavior_policy)
    if source == EXACT_CATEGORICAL:
        measure = occupancy(mdp, behavior_policy, setting)
        mu_cdf = np.cumsum(measure.mu / measure.mu.sum())[None, :]
        records = _draw_categorical(tables, mu_cdf, n, setting, rng)
    else:
        if burn_in is None or burn_in <= 0:
            burn_in = 10 * mdp.num_states
        records = _draw_rollout(tables, n, setting, burn_in, rng)
    PKG_LOGGER.debug("drew %d %s records (%s, seed %s)", n, setting, source, seed)
    return Dataset(
        records=records, setting=setting, seed=int(seed), source=source,
        behavior_spec=behavior_spec, mdp_digest=mdp.digest())


class DatasetCursor(object):
    """Serves a fixed dataset front to back."""

    def __init__(self, dataset):
        self.dataset = dataset
        self.position = 0

    @property
    def samples_used(self):
        return self.position

    @property
    def remaining(self):
        return len(self.dataset) - self.position

    def take(self, k):
        if k > self.remaining:
            raise DatasetExhausted(
                "requested %d records with %d of %d remaining" % (
                    k, self.remaining, len(self.dataset)))
        batch = self.dataset.records.slice(self.position, self.position + k)
        self.position += k
        return batch


class StreamingSampler(object):
    """Draws fresh exact-categorical records on every request."""

    def __init__(self, mdp, behavior_policy, setting, seed):
        self.setting = check_setting(setting)
        self.rng = seeded_rng(seed, DATASET_STREAM)
        self.tables = _Tables(mdp, behavior_policy)
        measure = occupancy(mdp, behavior_policy, setting)
        self.mu_cdf = np.cumsum(measure.mu / measure.mu.sum())[None, :]
        self.samples_used = 0

    def take(self, k):
        self.samples_used += k
        return _draw_categorical(self.tables, self.mu_cdf, k, self.setting, self.rng)


def as_source(dataset_or_sampler):
    if isinstance(dataset_or_sampler, Dataset):
        return DatasetCursor(dataset_or_sampler)
    return dataset_or_sampler


