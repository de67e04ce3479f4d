"""Capacity algebra: constraint bases, subspace capacities, conditional chains.

At a stationary point of the quadratic loss, the optimality condition
reads Ktilde^T X = 0 with Ktilde = Sigma dA/dW. The orthonormal basis K of
span(Ktilde), obtained from the eigendecomposition of the Gram matrix
Ktilde Ktilde^T, carries everything capacity analysis needs: the capacity
allocated to a subspace with orthonormal basis S is ||K^T S||_F^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .covariance import CovarianceMatrix, ExactPredictor, lift
from .errors import (
    DegenerateJacobian,
    InsufficientFits,
    InvalidPartition,
    ShapeMismatch,
    StationarityViolated,
)

DEFAULT_STATIONARITY_TOL = 1e-6


@dataclass(frozen=True)
class ConstraintBasis:
    """Orthonormal constraint basis plus the full capacity weighting spectrum."""

    k: np.ndarray  # (n*d, kappa), orthonormal columns
    spectrum: np.ndarray  # all n*d Gram eigenvalues, descending
    threshold: float
    kappa: int

    @property
    def dim(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class Subspace:
    """Orthonormal basis of a subspace of coefficient space."""

    s: np.ndarray
    label: str = ""

    @classmethod
    def span(cls, vectors, label="") -> "Subspace":
        """Orthonormalize a (possibly oblique) span via thin QR."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        if vectors.shape[1] > vectors.shape[0] and vectors.shape[0] == 1:
            vectors = vectors.T
        gram = vectors.T @ vectors
        if not np.allclose(gram, np.eye(vectors.shape[1]), atol=1e-10):
            warnings.warn(f"orthonormalizing non-orthonormal span {label!r}", stacklevel=2)
            q, r = np.linalg.qr(vectors)
            keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
            vectors = q[:, keep]
        return cls(s=vectors, label=label)

    @classmethod
    def one_hot(cls, dim, indices, label="") -> "Subspace":
        indices = np.atleast_1d(indices)
        s = np.zeros((dim, indices.size))
        s[indices, np.arange(indices.size)] = 1.0
        return cls(s=s, label=label)

    @classmethod
    def full(cls, dim, label="full") -> "Subspace":
        return cls(s=np.eye(dim), label=label)

    @property
    def n_s(self) -> int:
        return self.s.shape[1]


def rank_threshold(spectrum: np.ndarray) -> float:
    """Noise cutoff for Gram eigenvalues.

    The Gram matrix is PSD in exact arithmetic, so negative eigenvalues
    calibrate the numerical noise scale; a relative floor guards the
    all-positive case.
    """
    most_negative = min(float(spectrum.min()), 0.0)
    largest = float(spectrum.max())
    return max(10.0 * abs(most_negative), 1e-12 * largest)


def basis_from_columns(ktilde: np.ndarray) -> ConstraintBasis:
    """Orthonormal basis of span(ktilde) via the Gram matrix eigendecomposition."""
    ktilde = np.atleast_2d(np.asarray(ktilde, dtype=float))
    gram = ktilde @ ktilde.T
    vals, vecs = scipy.linalg.eigh(gram)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals.max(initial=0.0) <= 0.0:
        raise DegenerateJacobian("constraint Gram matrix has no positive eigenvalue")
    threshold = rank_threshold(vals)
    kappa = int(np.count_nonzero(vals > threshold))
    if kappa == 0:
        raise DegenerateJacobian(
            f"all Gram eigenvalues below threshold {threshold:.3e}"
        )
    return ConstraintBasis(
        k=vecs[:, :kappa], spectrum=vals, threshold=threshold, kappa=kappa
    )


def _lifted(manifold, sigma, target=None):
    if isinstance(sigma, CovarianceMatrix):
        predictor = target if isinstance(target, ExactPredictor) else None
        if predictor is not None:
            sigma_m, target_v, _ = lift(sigma, predictor, manifold.input_dim)
        else:
            sigma_m = np.kron(sigma.sigma, np.eye(manifold.input_dim)) \
                if manifold.input_dim > 1 else sigma.sigma
            target_v = None
        return sigma_m, target_v
    sigma_m = np.asarray(sigma, dtype=float)
    target_v = None if target is None else np.asarray(
        getattr(target, "a_star", target), dtype=float
    )
    return sigma_m, target_v


def constraint_columns(manifold, sigma, w_hat) -> np.ndarray:
    """Ktilde = Sigma dA/dW at w_hat, one column per parameter."""
    sigma_m, _ = _lifted(manifold, sigma)
    return sigma_m @ manifold.jacobian(w_hat)


def constraint_basis(manifold, sigma, w_hat, *, target=None,
                     stationarity_tol: float = DEFAULT_STATIONARITY_TOL) -> ConstraintBasis:
    """Build the constraint basis at an optimum.

    When ``target`` (ExactPredictor or coefficient vector) is supplied the
    stationarity condition ||J^T Sigma (A_w - A*)||_inf <= stationarity_tol
    is re-asserted and StationarityViolated raised on failure.
    """
    sigma_m, target_v = _lifted(manifold, sigma, target)
    ktilde = sigma_m @ manifold.jacobian(w_hat)
    if target_v is not None:
        x = manifold.coefficients(w_hat) - target_v
        grad_norm = float(np.max(np.abs(ktilde.T @ x)))
        if grad_norm > stationarity_tol:
            raise StationarityViolated(
                f"gradient sup-norm {grad_norm:.3e} exceeds {stationarity_tol:.3e}"
            )
    return basis_from_columns(ktilde)


def capacity_of(basis: ConstraintBasis, s: Subspace) -> float:
    """Capacity allocated to a subspace: ||K^T S||_F^2."""
    if s.s.shape[0] != basis.dim:
        raise ShapeMismatch(
            f"subspace lives in R^{s.s.shape[0]}, basis in R^{basis.dim}"
        )
    return float(np.sum((basis.k.T @ s.s) ** 2))


def spatial_cpi(basis: ConstraintBasis, input_dim: int = 1) -> np.ndarray:
    """Capacity per input: per-lag sums of one-hot direction capacities."""
    if basis.dim % input_dim:
        raise ShapeMismatch("basis dimension is not a multiple of input_dim")
    row_norms = np.sum(basis.k ** 2, axis=1)
    return row_norms.reshape(-1, input_dim).sum(axis=1)


def covariance_eigen_capacity(basis: ConstraintBasis, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Capacities along covariance eigenvectors, descending eigenvalue order.

    Returns (eigenvalues, capacities); capacities sum to kappa.
    """
    sigma_m = sigma.sigma if isinstance(sigma, CovarianceMatrix) else np.asarray(sigma)
    if sigma_m.shape[0] != basis.dim:
        d = basis.dim // sigma_m.shape[0]
        sigma_m = np.kron(sigma_m, np.eye(d))
    vals, vecs = scipy.linalg.eigh(sigma_m)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    caps = np.sum((basis.k.T @ vecs) ** 2, axis=0)
    return vals, caps


def conditional_capacity(basis_joint: ConstraintBasis, basis_sub: ConstraintBasis,
                         s: Subspace) -> float:
    """Extra capacity the joint constraint space allocates to s beyond the sub-space.

    The raw difference is returned; small negative values can occur for
    oblique spaces within numerical tolerance and are not clamped.
    """
    return capacity_of(basis_joint, s) - capacity_of(basis_sub, s)


def _check_partition(manifold, grouping) -> list[np.ndarray]:
    blocks = [np.asarray(b, dtype=int) for b in grouping]
    if not blocks:
        raise InvalidPartition("grouping is empty")
    flat = np.concatenate(blocks)
    if sorted(flat.tolist()) != list(range(manifold.param_count)):
        raise InvalidPartition(
            "grouping must partition all parameter indices exactly once"
        )
    return blocks


def conditional_chain(manifold, sigma, w_hat, grouping) -> list[np.ndarray]:
    """Per-block conditional spatial capacities, chained in the given order.

    Block i's vector is the conditional CPI of block i given blocks 1..i-1;
    the vectors sum lag-wise to the full spatial CPI.
    """
    blocks = _check_partition(manifold, grouping)
    ktilde = constraint_columns(manifold, sigma, w_hat)
    d = manifold.input_dim
    chain, prev = [], np.zeros(manifold.receptive_field)
    cumulative: list[int] = []
    for block in blocks:
        cumulative.extend(block.tolist())
        # sorted index order keeps the final cumulative Gram bit-identical
        # to the joint one regardless of the chain order (spans are order
        # free, but eigenvector roundoff is not)
        cpi = spatial_cpi(basis_from_columns(ktilde[:, np.sort(cumulative)]), d)
        chain.append(cpi - prev)
        prev = cpi
    return chain


@dataclass(frozen=True)
class BlockContribution:
    label: str
    independent_total: float
    independent_cpi: np.ndarray
    marginal_total: float
    marginal_cpi: np.ndarray


def marginal_contributions(manifold, sigma, w_hat, grouping,
                           labels=None) -> list[BlockContribution]:
    """Independent and marginal (given all other blocks) capacities per block."""
    blocks = _check_partition(manifold, grouping)
    labels = labels or [f"block{i + 1}" for i in range(len(blocks))]
    ktilde = constraint_columns(manifold, sigma, w_hat)
    d = manifold.input_dim
    joint = basis_from_columns(ktilde)
    joint_cpi = spatial_cpi(joint, d)
    out = []
    for label, block in zip(labels, blocks):
        alone = basis_from_columns(ktilde[:, block])
        rest_idx = np.setdiff1d(np.arange(manifold.param_count), block)
        if rest_idx.size:
            rest = basis_from_columns(ktilde[:, rest_idx])
            marg_total = joint.kappa - rest.kappa
            marg_cpi = joint_cpi - spatial_cpi(rest, d)
        else:
            marg_total, marg_cpi = joint.kappa, joint_cpi.copy()
        out.append(BlockContribution(
            label=label,
            independent_total=float(alone.kappa),
            independent_cpi=spatial_cpi(alone, d),
            marginal_total=float(marg_total),
            marginal_cpi=marg_cpi,
        ))
    return out


@dataclass(frozen=True)
class RedundancyRecord:
    block: np.ndarray
    marginal_total: float
    flagged: bool
    freeze_losses: tuple[float, ...] = ()
    reference_loss: float = float("nan")
    recovered: bool | None = None


def redundancy_check(manifold, sigma, w_hat, block, *, target, fit_config,
                     threshold: float = 1e-6, n_freezes: int = 5,
                     seed: int = 0, relative_tol: float = 1e-6) -> RedundancyRecord:
    """Flag a parameter block as redundant and validate by freeze-and-refit.

    A block is flagged when its marginal contribution to the whole space is
    at most ``threshold``. For flagged blocks, the block is frozen at fresh
    random values and the remaining parameters re-optimized; recovery means
    every refit loss matches the reference within ``relative_tol``.
    """
    from .fitting import fit  # local import to avoid a cycle at module load

    block = np.asarray(block, dtype=int)
    ktilde = constraint_columns(manifold, sigma, w_hat)
    joint = basis_from_columns(ktilde)
    rest_idx = np.setdiff1d(np.arange(manifold.param_count), block)
    if rest_idx.size == 0:
        raise InvalidPartition("block must leave at least one free parameter")
    rest = basis_from_columns(ktilde[:, rest_idx])
    marginal = float(joint.kappa - rest.kappa)
    flagged = marginal <= threshold
    if not flagged:
        return RedundancyRecord(block=block, marginal_total=marginal, flagged=False)

    reference = fit(manifold, sigma, target, fit_config)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(n_freezes):
        values = rng.uniform(0.2, 2.0, size=block.size) * rng.choice([-1.0, 1.0], size=block.size)
        frozen = {int(j): float(v) for j, v in zip(block, values)}
        refit = fit(manifold, sigma, target, fit_config, frozen=frozen)
        losses.append(refit.loss)
    scale = max(abs(reference.loss), 1e-12)
    recovered = all(loss - reference.loss <= relative_tol * scale for loss in losses)
    return RedundancyRecord(
        block=block,
        marginal_total=marginal,
        flagged=True,
        freeze_losses=tuple(losses),
        reference_loss=reference.loss,
        recovered=recovered,
    )


@dataclass(frozen=True)
class ErrorBoundRow:
    label: str
    n_s: int
    capacity: float
    bound: float  # n_S - kappa_S, unnormalized
    bound_normalized: float
    error_mean: float  # mean of per-fit normalized eps_S
    error_std: float


def error_bound_analysis(basis: ConstraintBasis, fits, a_star, subspaces) -> list[ErrorBoundRow]:
    """Compare per-subspace capacity bounds with realized squared errors.

    Bound is (n_S - kappa_S); realized errors eps_S = ||X^T S||_F^2 with
    X = A_hat - A*, one per fit. Both series are normalized to sum to 1
    over the given subspaces before averaging across fits.
    """
    fits = list(fits)
    if len(fits) < 2:
        raise InsufficientFits("need at least two independent fits")
    target = np.asarray(getattr(a_star, "a_star", a_star), dtype=float)
    bounds, caps = [], []
    for s in subspaces:
        cap = capacity_of(basis, s)
        caps.append(cap)
        bounds.append(max(s.n_s - cap, 0.0))
    bounds = np.array(bounds)
    bound_norm = bounds / bounds.sum() if bounds.sum() > 0 else np.zeros_like(bounds)
    per_fit = []
    for f in fits:
        errs = np.array([np.sum(((f.a_hat - target) @ s.s) ** 2) for s in subspaces])
        total = errs.sum()
        per_fit.append(errs / total if total > 0 else np.zeros_like(errs))
    per_fit = np.array(per_fit)
    means, stds = per_fit.mean(axis=0), per_fit.std(axis=0)
    return [
        ErrorBoundRow(
            label=s.label or f"s{i}",
            n_s=s.n_s,
            capacity=float(caps[i]),
            bound=float(bounds[i]),
            bound_normalized=float(bound_norm[i]),
            error_mean=float(means[i]),
            error_std=float(stds[i]),
        )
        for i, s in enumerate(subspaces)
    ]


def effective_parameter_count(manifold, w, sigma) -> int:
    """Numerical rank of Sigma dA/dW at a generic point (the total capacity)."""
    return basis_from_columns(constraint_columns(manifold, sigma, w)).kappa


@dataclass(frozen=True)
class CapacityReport:
    """Bundled capacity analysis outputs for serialization."""

    total_kappa: int
    spatial_cpi: np.ndarray
    covariance_eigenvalues: np.ndarray
    covariance_eigen_capacity: np.ndarray
    spectrum: np.ndarray
    input_dim: int = 1
    conditional_chains: dict = field(default_factory=dict)
    error_bounds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_kappa": self.total_kappa,
            "input_dim": self.input_dim,
            "spatial_cpi": self.spatial_cpi.tolist(),
            "covariance_eigenvalues": self.covariance_eigenvalues.tolist(),
            "covariance_eigen_capacity": self.covariance_eigen_capacity.tolist(),
            "spectrum": self.spectrum.tolist(),
            "conditional_chains": {
                name: [v.tolist() for v in vectors]
                for name, vectors in self.conditional_chains.items()
            },
            "error_bounds": [
                {
                    "label": row.label,
                    "n_s": row.n_s,
                    "capacity": row.capacity,
                    "bound": row.bound,
                    "bound_normalized": row.bound_normalized,
                    "error_mean": row.error_mean,
                    "error_std": row.error_std,
                }
                for row in self.error_bounds
            ],
        }


def build_report(manifold, sigma, w_hat, *, target=None, chains=None,
                 error_rows=None) -> CapacityReport:
    basis = constraint_basis(manifold, sigma, w_hat, target=target)
    vals, caps = covariance_eigen_capacity(basis, sigma)
    return CapacityReport(
        total_kappa=basis.kappa,
        spatial_cpi=spatial_cpi(basis, manifold.input_dim),
        covariance_eigenvalues=vals,
        covariance_eigen_capacity=caps,
        spectrum=basis.spectrum,
        input_dim=manifold.input_dim,
        conditional_chains=chains or {},
        error_bounds=error_rows or [],
    )
