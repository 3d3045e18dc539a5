"""
Coverage ratios between a target occupancy mu* and the behavior occupancy mu_B.

With m = Phi^T mu*, M = Phi^T diag(mu*) Phi and Lambda = Phi^T diag(mu_B) Phi:

    C_{phi,c} = m^T Lambda^{-2c} m
    C_diamond = Tr(M Lambda^{-1})
    C_dagger  = lambda_max(Lambda^{-1/2} M Lambda^{-1/2})

For one-hot features C_{phi,1/2} = 1 + chi^2(mu* || mu_B). The same identity
does not hold for C_{phi,1}, which is Sum (mu*/mu_B)^2.
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import DISCOUNTED
from .exceptions import UnsupportedPoint
from .linmdp import occupancy
from .log import PKG_LOGGER
from .sampling import Covariance, empirical_occupancy

ORDERING_TOL = 1e-9
VARIANCE_TOL = 1e-9


def _covariance(lambda_cov):
    if isinstance(lambda_cov, Covariance):
        return lambda_cov
    return Covariance(lambda_cov)


def _features(features):
    return np.asarray(getattr(features, 'features', features), dtype=float)


def second_moment(mu, features):
    features = _features(features)
    return features.T @ (np.asarray(mu, dtype=float)[:, None] * features)


def generalized_ratio(mu_star, lambda_cov, features, c):
    """E_{mu*}[phi]^T Lambda^{-2c} E_{mu*}[phi]. Raises NearSingular."""
    mean = _features(features).T @ np.asarray(mu_star, dtype=float)
    whitened = _covariance(lambda_cov).power(-float(c)) @ mean
    return float(whitened @ whitened)


def diamond_ratio(mu_star, lambda_cov, features):
    inverse = _covariance(lambda_cov).power(-1)
    return float(np.trace(second_moment(mu_star, features) @ inverse))


def dagger_ratio(mu_star, lambda_cov, features):
    root = _covariance(lambda_cov).power(-0.5)
    whitened = root @ second_moment(mu_star, features) @ root
    return float(np.linalg.eigvalsh((whitened + whitened.T) / 2).max())


def chi_square(mu_star, mu_b):
    mu_star = np.asarray(mu_star, dtype=float)
    mu_b = np.asarray(mu_b, dtype=float)
    unsupported = (mu_star > 0) & (mu_b <= 0)
    if unsupported.any():
        raise UnsupportedPoint(
            "target puts mass on %d pairs the behavior never visits (first: %d)" % (
                unsupported.sum(), np.flatnonzero(unsupported)[0]))
    support = mu_b > 0
    return float(np.sum((mu_star[support] - mu_b[support]) ** 2 / mu_b[support]))


def whitened_variance(mu_star, lambda_cov, features):
    """Var_{mu*}(Lambda^{-1/2} phi) as E||Z||^2 - ||E Z||^2."""
    mu_star = np.asarray(mu_star, dtype=float)
    whitened = _features(features) @ _covariance(lambda_cov).power(-0.5)
    mean = whitened.T @ mu_star
    return float(mu_star @ np.sum(whitened ** 2, axis=1) - mean @ mean)


def is_one_hot(features):
    features = _features(features)
    return bool(np.all((features == 0) | (features == 1)) and np.all(features.sum(axis=1) == 1))


@dataclass(frozen=True)
class CoverageReport:
    c_phi_half: float
    c_phi_one: float
    c_diamond: float
    c_dagger: float
    chi_square: Optional[float]
    variance_term: float
    dim: int
    setting: str = DISCOUNTED
    approximate: bool = False
    ordering_ok: bool = True
    variance_identity_ok: bool = True
    one_hot_identity_ok: Optional[bool] = None

    def ratio(self, c):
        return self.c_phi_half if float(c) == 0.5 else self.c_phi_one

    def beta_radius(self, c):
        """Smallest D_beta the convergence guarantee asks for at exponent c."""
        value = self.ratio(c)
        return max(value, math.sqrt(value))

    def to_dict(self):
        return asdict(self)


def _within(lower, upper, tol=ORDERING_TOL):
    return lower <= upper + tol * max(1.0, abs(upper))


def coverage_from_occupancies(mu_star, mu_b, features, setting=DISCOUNTED,
                              approximate=False, covariance=None):
    """Coverage report from raw pair occupancies."""
    mu_star = np.asarray(mu_star, dtype=float)
    mu_b = np.asarray(mu_b, dtype=float)
    features = _features(features)
    if covariance is None:
        covariance = Covariance.from_weights(features, mu_b, approximate=approximate)
    c_phi_half = generalized_ratio(mu_star, covariance, features, 0.5)
    c_phi_one = generalized_ratio(mu_star, covariance, features, 1.0)
    c_diamond = diamond_ratio(mu_star, covariance, features)
    c_dagger = dagger_ratio(mu_star, covariance, features)
    variance = whitened_variance(mu_star, covariance, features)
    dim = features.shape[1]
    try:
        chi2 = chi_square(mu_star, mu_b)
    except UnsupportedPoint as exc:
        PKG_LOGGER.info("chi-square undefined: %s", exc)
        chi2 = None

    ordering_ok = (_within(c_dagger, c_diamond) and _within(c_diamond, dim * c_dagger)
                   and _within(c_phi_half, c_diamond))
    variance_ok = abs(c_phi_half + variance - c_diamond) <= VARIANCE_TOL * max(1.0, c_diamond)
    one_hot_ok = None
    if chi2 is not None and is_one_hot(features):
        one_hot_ok = abs(c_phi_half - (1 + chi2)) <= VARIANCE_TOL * max(1.0, c_phi_half)
    if not (ordering_ok and variance_ok):
        PKG_LOGGER.warning(
            "coverage checks failed: ordering_ok=%s variance_identity_ok=%s",
            ordering_ok, variance_ok)

    return CoverageReport(
        c_phi_half=c_phi_half,
        c_phi_one=c_phi_one,
        c_diamond=c_diamond,
        c_dagger=c_dagger,
        chi_square=chi2,
        variance_term=c_diamond - c_phi_half,
        dim=dim,
        setting=setting,
        approximate=approximate,
        ordering_ok=bool(ordering_ok),
        variance_identity_ok=bool(variance_ok),
        one_hot_identity_ok=one_hot_ok,
    )


def coverage_report(mdp, behavior, target_policy, setting=DISCOUNTED):
    """Coverage of `target_policy` by `behavior`, from exact occupancies."""
    mu_star = occupancy(mdp, target_policy, setting).mu
    mu_b = occupancy(mdp, behavior, setting).mu
    report = coverage_from_occupancies(mu_star, mu_b, mdp.features, setting)
    PKG_LOGGER.debug("coverage: C_phi_half=%.4g C_phi_one=%.4g C_diamond=%.4g C_dagger=%.4g",
                     report.c_phi_half, report.c_phi_one, report.c_diamond, report.c_dagger)
    return report


def empirical_coverage_report(mdp, behavior_dataset, target_dataset):
    """
    Plug-in ratios from the empirical behavior covariance and the empirical
    target occupancy. Approximate; for demonstration only.
    """
    mu_b = empirical_occupancy(behavior_dataset, mdp)
    mu_star = empirical_occupancy(target_dataset, mdp)
    return coverage_from_occupancies(
        mu_star, mu_b, mdp.features, behavior_dataset.setting, approximate=True)
