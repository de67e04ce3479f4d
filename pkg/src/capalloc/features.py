"""Capacity analysis over fixed componentwise feature maps.

A feature map applies d scalar basis functions to every input position,
turning the n-sample window into an m = n * d feature vector (lag-major:
all d features of lag 1 first). The quadratic loss in feature space uses
the second-moment matrix Sigma_phi = E[phi(Y) phi(Y)^T], estimated by
exact Gaussian sampling, and the usual capacity pipeline applies with
Sigma_phi in place of Sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .capacity import ConstraintBasis, constraint_basis, spatial_cpi
from .covariance import AutocovarianceSpec, sample_windows
from .errors import RankDeficientFeatures, ShapeMismatch
from .fitting import FitConfig, FitResult, fit

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class FeatureMap:
    """Componentwise scalar basis functions.

    family "identity" is {y}; "polynomial" of degree q is {y, y^2, .., y^q};
    "hermite" of degree q is the probabilists' Hermite polynomials He_1..He_q.
    """

    family: str
    degree: int = 1

    def __post_init__(self):
        if self.family not in ("identity", "polynomial", "hermite"):
            raise ValueError(f"unknown feature family {self.family!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    @property
    def width(self) -> int:
        return 1 if self.family == "identity" else self.degree

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Map samples (..., n) to features (..., n * width), lag-major."""
        y = np.asarray(y, dtype=float)
        if self.family == "identity":
            return y
        if self.family == "polynomial":
            cols = [y ** q for q in range(1, self.degree + 1)]
        else:
            cols = []
            for q in range(1, self.degree + 1):
                coeffs = np.zeros(q + 1)
                coeffs[q] = 1.0
                cols.append(np.polynomial.hermite_e.hermeval(y, coeffs))
        return np.stack(cols, axis=-1).reshape(*y.shape[:-1], -1)


@dataclass(frozen=True)
class FeatureMoment:
    """Monte-Carlo estimate of the feature second moments and the cross vector."""

    sigma_phi: np.ndarray  # (m, m)
    cross_phi: np.ndarray  # (m,)
    target_second_moment: float
    sample_count: int
    seed: int

    @property
    def m(self) -> int:
        return self.sigma_phi.shape[0]


def default_sample_count(m: int) -> int:
    return 200 * m


def estimate_feature_moments(spec: AutocovarianceSpec, fmap: FeatureMap,
                             samples: int | None = None, seed: int = 0) -> FeatureMoment:
    """Estimate Sigma_phi and the cross moments by exact GP window sampling."""
    m = spec.length * fmap.width
    if samples is None:
        samples = default_sample_count(m)
    if samples < 10 * m:
        raise ValueError(f"need at least 10 * m = {10 * m} samples, got {samples}")
    windows, targets = sample_windows(spec, samples, seed)
    phi = fmap.apply(windows)
    sigma_phi = phi.T @ phi / samples
    cross_phi = phi.T @ targets / samples
    eigs = scipy.linalg.eigvalsh(sigma_phi)
    if eigs[0] <= _RANK_TOL * eigs[-1]:
        raise RankDeficientFeatures(
            f"feature Gram matrix numerically rank deficient "
            f"(eigenvalue ratio {eigs[0] / eigs[-1]:.3e})"
        )
    sigma_phi = 0.5 * (sigma_phi + sigma_phi.T)
    return FeatureMoment(
        sigma_phi=sigma_phi,
        cross_phi=cross_phi,
        target_second_moment=float(targets @ targets / samples),
        sample_count=samples,
        seed=seed,
    )


def feature_target(moments: FeatureMoment) -> tuple[np.ndarray, float]:
    """Least-squares optimum over the full feature space and its residual variance."""
    a_star = scipy.linalg.solve(moments.sigma_phi, moments.cross_phi, assume_a="pos")
    v_star = float(moments.target_second_moment - moments.cross_phi @ a_star)
    return a_star, v_star


def fit_feature_model(manifold, moments: FeatureMoment,
                      cfg: FitConfig | None = None) -> FitResult:
    """Fit a manifold over feature space against the sampled quadratic loss."""
    if manifold.coeff_dim != moments.m:
        raise ShapeMismatch(
            f"manifold coefficient dimension {manifold.coeff_dim} does not match "
            f"feature dimension {moments.m}"
        )
    a_star, v_star = feature_target(moments)
    return fit(manifold, moments.sigma_phi, a_star, cfg, base_variance=v_star)


def feature_capacity(manifold, moments: FeatureMoment, w_hat, *,
                     check_stationarity: bool = True) -> ConstraintBasis:
    """Constraint basis of a fitted feature-space model."""
    target = feature_target(moments)[0] if check_stationarity else None
    return constraint_basis(manifold, moments.sigma_phi, w_hat, target=target)


def input_space_capacity(basis: ConstraintBasis, n: int, d: int) -> np.ndarray:
    """Aggregate feature-space capacities back to per-lag input capacities."""
    if basis.dim != n * d:
        raise ShapeMismatch(f"basis dimension {basis.dim} is not n * d = {n * d}")
    return spatial_cpi(basis, input_dim=d)
