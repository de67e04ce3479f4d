"""Deterministic minimization of the quadratic prediction loss.

The loss is L(w) = (A_w - A*)^T Sigma (A_w - A*), evaluated exactly from
the covariance matrix, so an unbounded quasi-Newton method with the
analytic gradient applies directly. Multiple restarts from independent
random initializations are run and the best one returned; all restart
losses are kept so callers can flag multimodality.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .architectures import ModelManifold
from .covariance import CovarianceMatrix, ExactPredictor, lift
from .errors import ConvergenceWarning, ShapeMismatch

# full-Hessian BFGS up to this many parameters, limited-memory beyond;
# the dense Hessian approximation converges to noticeably better optima on
# mid-sized problems but its per-iteration cost grows quadratically
_BFGS_PARAM_LIMIT = 400


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings. gradient_tolerance None means 1e-9 * (1 + initial loss)."""

    max_iterations: int = 5000
    gradient_tolerance: float | None = None
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.gradient_tolerance is not None and not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class FitResult:
    w_hat: np.ndarray
    a_hat: np.ndarray
    loss: float
    residual_variance: float
    grad_norm: float
    converged: bool
    restart_losses: tuple[float, ...]
    tolerance: float = field(default=0.0, compare=False)


def loss_and_gradient(manifold: ModelManifold, sigma, a_star, w):
    """Exact loss and gradient at w.

    sigma and a_star may be the domain objects (CovarianceMatrix /
    ExactPredictor), in which case they are lifted to the manifold's input
    dimension, or plain arrays already living in coefficient space.
    """
    sigma, a_star, _ = _as_arrays(manifold, sigma, a_star)
    w = np.asarray(w, dtype=float)
    x = manifold.coefficients(w) - a_star
    sx = sigma @ x
    loss = float(x @ sx)
    grad = 2.0 * manifold.gradient_of_quadratic(w, sx)
    return loss, grad


def _as_arrays(manifold, sigma, a_star):
    if isinstance(sigma, CovarianceMatrix):
        if not isinstance(a_star, ExactPredictor):
            raise ShapeMismatch("a CovarianceMatrix must be paired with an ExactPredictor")
        sigma_m, target, v_star = lift(sigma, a_star, manifold.input_dim)
    else:
        sigma_m = np.asarray(sigma, dtype=float)
        if isinstance(a_star, ExactPredictor):
            target, v_star = a_star.a_star, a_star.v_star
        else:
            target, v_star = np.asarray(a_star, dtype=float), 0.0
    if sigma_m.shape != (manifold.coeff_dim, manifold.coeff_dim):
        raise ShapeMismatch(
            f"sigma shape {sigma_m.shape} does not match coefficient dimension "
            f"{manifold.coeff_dim}"
        )
    if target.shape != (manifold.coeff_dim,):
        raise ShapeMismatch("target length does not match coefficient dimension")
    return sigma_m, target, v_star


def fit(manifold: ModelManifold, sigma, a_star, cfg: FitConfig | None = None, *,
        frozen: dict[int, float] | None = None, base_variance: float | None = None) -> FitResult:
    """Best-of-restarts quasi-Newton minimization.

    ``frozen`` maps parameter indices to fixed values; only the remaining
    parameters are optimized (used by redundancy experiments). Results are
    deterministic given the seed; ties between restarts break toward the
    lowest restart index.
    """
    cfg = cfg or FitConfig()
    sigma_m, target, v_star = _as_arrays(manifold, sigma, a_star)
    if base_variance is not None:
        v_star = base_variance

    p = manifold.param_count
    frozen = frozen or {}
    frozen_idx = np.array(sorted(frozen), dtype=int)
    if frozen_idx.size and (frozen_idx.min() < 0 or frozen_idx.max() >= p):
        raise ShapeMismatch("frozen index out of range")
    free_idx = np.setdiff1d(np.arange(p), frozen_idx)

    def assemble(w_free):
        w = np.empty(p)
        w[free_idx] = w_free
        for j in frozen_idx:
            w[j] = frozen[int(j)]
        return w

    def objective(w_free):
        w = assemble(w_free)
        x = manifold.coefficients(w) - target
        sx = sigma_m @ x
        grad = 2.0 * manifold.gradient_of_quadratic(w, sx)
        return float(x @ sx), grad[free_idx]

    rng = np.random.default_rng(cfg.seed)
    inits = [manifold.init_parameters(rng)[free_idx] for _ in range(cfg.restarts)]

    method = "BFGS" if free_idx.size <= _BFGS_PARAM_LIMIT else "L-BFGS-B"
    best = None
    losses, tolerances = [], []
    for w0 in inits:
        loss0, _ = objective(w0)
        tol = cfg.gradient_tolerance
        if tol is None:
            tol = 1e-9 * (1.0 + loss0)
        if method == "BFGS":
            options = {"gtol": tol, "norm": np.inf, "maxiter": cfg.max_iterations}
        else:
            options = {"gtol": tol, "ftol": 0.0, "maxiter": cfg.max_iterations,
                       "maxcor": 50, "maxfun": 10 * cfg.max_iterations}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = scipy.optimize.minimize(
                objective, w0, jac=True, method=method, options=options
            )
        loss, grad = objective(res.x)
        losses.append(loss)
        tolerances.append(tol)
        candidate = (loss, res.x, float(np.max(np.abs(grad))), tol)
        if best is None or candidate[0] < best[0]:
            best = candidate

    loss, w_free, grad_norm, tol = best
    w_hat = assemble(w_free)
    a_hat = manifold.coefficients(w_hat)
    converged = grad_norm <= tol
    if not converged:
        warnings.warn(
            f"no restart reached gradient tolerance {tol:.3e} "
            f"(best sup-norm {grad_norm:.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return FitResult(
        w_hat=w_hat,
        a_hat=a_hat,
        loss=loss,
        residual_variance=v_star + loss,
        grad_norm=grad_norm,
        converged=converged,
        restart_losses=tuple(losses),
        tolerance=tol,
    )
