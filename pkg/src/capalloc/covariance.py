"""Stationary Gaussian-process covariance structures and exact linear prediction.

The prediction task is: given the last ``n`` samples of a zero-mean
stationary process with autocovariance sequence ``c_0, c_1, ...``, predict
the next sample. Throughout the package coefficient index ``i`` (1-based)
means "distance i in the past", so index 1 is the most recent sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NotPositiveSemiDefinite, ShapeMismatch, SingularCovariance, UnstableAR

PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class AutocovarianceSpec:
    """Declarative description of a stationary process.

    kind is one of:
      - "ar": autoregression with weights ``ar_weights`` and innovation
        variance ``innovation_variance``; the autocovariance is obtained by
        solving the Yule-Walker system for the stationary process.
      - "power_law": c_tau = (1 + tau) ** (-alpha), alpha > 0.
      - "exponential": c_tau = rate ** tau, rate in (0, 1).
      - "explicit": the sequence c_0..c_n given literally in ``values``.

    ``length`` is the receptive field size n. With ``normalize`` set, the
    sequence is rescaled so that c_0 = 1.
    """

    kind: str
    length: int
    normalize: bool = True
    ar_weights: tuple[float, ...] = ()
    innovation_variance: float = 1.0
    alpha: float = 1.0
    rate: float = 0.5
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.length < 2:
            raise ValueError(f"receptive field must be >= 2, got {self.length}")
        if self.kind not in ("ar", "power_law", "exponential", "explicit"):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "power_law" and not self.alpha > 0:
            raise ValueError("power_law exponent must be positive")
        if self.kind == "exponential" and not 0 < self.rate < 1:
            raise ValueError("exponential rate must lie in (0, 1)")
        if self.kind == "explicit" and len(self.values) != self.length + 1:
            raise ValueError(
                f"explicit sequence needs n+1 = {self.length + 1} values, got {len(self.values)}"
            )

    @classmethod
    def ar(cls, weights, innovation_variance=1.0, length=8, normalize=True):
        return cls(
            kind="ar",
            length=length,
            normalize=normalize,
            ar_weights=tuple(float(w) for w in weights),
            innovation_variance=float(innovation_variance),
        )

    @classmethod
    def power_law(cls, alpha=1.0, length=64):
        return cls(kind="power_law", length=length, alpha=float(alpha))

    @classmethod
    def exponential(cls, rate, length=64):
        return cls(kind="exponential", length=length, rate=float(rate))

    @classmethod
    def explicit(cls, values, length=None, normalize=False):
        values = tuple(float(v) for v in values)
        if length is None:
            length = len(values) - 1
        return cls(kind="explicit", length=length, normalize=normalize, values=values)

    @classmethod
    def white_noise(cls, length=8):
        return cls.explicit([1.0] + [0.0] * length, length=length)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Toeplitz covariance of the last n samples plus the cross vector.

    ``sigma[i, j] = c_|i-j|`` (in lag coordinates), ``cross = (c_1..c_n)``
    and ``c0`` is the marginal variance of the target sample.
    """

    sigma: np.ndarray
    cross: np.ndarray
    c0: float
    autocov: np.ndarray  # c_0..c_n
    spec: AutocovarianceSpec | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class ExactPredictor:
    """Optimal linear predictor: coefficients (lag order) and residual variance."""

    a_star: np.ndarray
    v_star: float


def _ar_stability_check(weights: np.ndarray) -> None:
    # roots of z^k - w_1 z^{k-1} - ... - w_k; stationarity needs all inside the unit circle
    poly = np.concatenate(([1.0], -weights))
    roots = np.roots(poly)
    if roots.size and np.max(np.abs(roots)) >= 1.0 - 1e-12:
        raise UnstableAR(
            f"AR root of modulus {np.max(np.abs(roots)):.6g} on or outside the unit circle"
        )


def autocovariance_from_ar(weights, innovation_variance, n, *, check_stability=True):
    """Stationary autocovariance c_0..c_n of an AR(k) process.

    Obtained by reversing the autoregression: the Yule-Walker equations
    c_j = sum_i w_i c_{|j-i|} (j >= 1), c_0 = sum_i w_i c_i + v are solved
    for c_0..c_k, then the recursion extends the sequence to lag n.
    """
    weights = np.asarray(weights, dtype=float)
    k = weights.size
    if check_stability:
        _ar_stability_check(weights)
    m = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    m[0, 0] = 1.0
    m[0, 1 : k + 1] -= weights
    rhs[0] = innovation_variance
    for j in range(1, k + 1):
        m[j, j] += 1.0
        for i in range(1, k + 1):
            m[j, abs(j - i)] -= weights[i - 1]
    head = np.linalg.solve(m, rhs)
    c = np.empty(n + 1)
    c[: min(k, n) + 1] = head[: min(k, n) + 1]
    for j in range(k + 1, n + 1):
        c[j] = weights @ c[j - 1 : j - k - 1 : -1] if k > 1 else weights[0] * c[j - 1]
    return c


def autocovariance(spec: AutocovarianceSpec) -> np.ndarray:
    """The sequence c_0..c_n induced by a spec (after optional normalization)."""
    n = spec.length
    if spec.kind == "ar":
        c = autocovariance_from_ar(spec.ar_weights, spec.innovation_variance, n)
    elif spec.kind == "power_law":
        c = (1.0 + np.arange(n + 1)) ** (-spec.alpha)
    elif spec.kind == "exponential":
        c = spec.rate ** np.arange(n + 1)
    else:
        c = np.asarray(spec.values, dtype=float)
    if spec.normalize:
        c = c / c[0]
    return c


def build_covariance(spec: AutocovarianceSpec) -> CovarianceMatrix:
    """Construct the Toeplitz covariance for a spec, validating it is PSD.

    Raises NotPositiveSemiDefinite when the full (n+1) x (n+1) Toeplitz
    matrix of c_0..c_n has an eigenvalue below -1e-10 * c_0. Sequences are
    rejected, never projected.
    """
    c = autocovariance(spec)
    full = scipy.linalg.toeplitz(c)
    min_eig = scipy.linalg.eigvalsh(full, subset_by_index=[0, 0])[0]
    if min_eig < -PSD_TOL * c[0]:
        raise NotPositiveSemiDefinite(
            f"minimum Toeplitz eigenvalue {min_eig:.3e} below tolerance "
            f"{-PSD_TOL * c[0]:.3e}"
        )
    sigma = full[1:, 1:].copy()
    cross = c[1:].copy()
    for arr in (sigma, cross, c):
        arr.flags.writeable = False
    return CovarianceMatrix(sigma=sigma, cross=cross, c0=float(c[0]), autocov=c, spec=spec)


def exact_predictor(cov: CovarianceMatrix) -> ExactPredictor:
    """Solve sigma a = cross for the optimal coefficients and residual variance."""
    eigs = scipy.linalg.eigvalsh(cov.sigma, subset_by_index=[0, 0])
    if eigs[0] <= SINGULAR_TOL * cov.c0:
        raise SingularCovariance(
            f"smallest covariance eigenvalue {eigs[0]:.3e} at or below "
            f"{SINGULAR_TOL * cov.c0:.3e}"
        )
    a = scipy.linalg.solve(cov.sigma, cov.cross, assume_a="pos")
    v = float(cov.c0 - cov.cross @ a)
    a.flags.writeable = False
    return ExactPredictor(a_star=a, v_star=v)


def lift(cov: CovarianceMatrix, predictor: ExactPredictor, input_dim: int):
    """Lift a scalar task to d independent identical components, lag-major.

    The lifted target is the next sample of the sum of the d components,
    so every component shares the same optimal per-channel coefficients.
    Returns (sigma_lifted, a_star_lifted, v_star_lifted).
    """
    d = int(input_dim)
    if d == 1:
        return cov.sigma, predictor.a_star, predictor.v_star
    sigma = np.kron(cov.sigma, np.eye(d))
    a_star = np.kron(predictor.a_star, np.ones(d))
    v_star = d * predictor.v_star
    return sigma, a_star, v_star


def sample_windows(spec: AutocovarianceSpec, samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (window, target) pairs by exact multivariate Gaussian sampling.

    Returns (Y, t) where Y has shape (samples, n) in lag-major order
    (column 0 is lag 1, the most recent sample) and t is the target.
    """
    c = autocovariance(spec)
    n = spec.length
    full = scipy.linalg.toeplitz(c)
    chol = np.linalg.cholesky(full + 1e-12 * c[0] * np.eye(n + 1))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, n + 1))
    # index 0 = target sample, index i = sample at lag i
    draws = z @ chol.T
    return draws[:, 1:], draws[:, 0]


def implied_autocorrelation(coefficients: np.ndarray, n_lags: int) -> np.ndarray:
    """Autocorrelation sequence implied by treating a coefficient vector as AR weights.

    Solves the Yule-Walker system with boundary condition c_0 = 1; no
    stability check, since fitted coefficient vectors sit near but not
    exactly on a stable model.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim != 1:
        raise ShapeMismatch("coefficient vector must be 1-dimensional")
    c = autocovariance_from_ar(coefficients, 1.0, n_lags, check_stability=False)
    return c / c[0]
