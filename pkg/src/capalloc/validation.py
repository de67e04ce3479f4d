"""Randomized invariant suite behind the `validate` CLI subcommand.

Each check draws its own instances from a seeded generator and returns
(passed, detail). The fault injection hook perturbs the constraint basis
orthonormality so the suite's failure path can be exercised.
"""

from __future__ import annotations

import numpy as np

from . import architectures, capacity, covariance, fitting


def _random_orthonormal(rng, n, k):
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q


def _random_basis(rng, n, kappa):
    return capacity.basis_from_columns(
        _random_orthonormal(rng, n, kappa) @ np.diag(rng.uniform(0.5, 2.0, kappa))
    )


def check_rotation_invariance(rng, inject_fault=None):
    """Property 1: capacity is invariant under right-rotation of S and K."""
    worst = 0.0
    for _ in range(50):
        n = int(rng.choice([4, 8, 16]))
        kappa = int(rng.integers(1, n))
        n_s = int(rng.integers(1, n))
        basis = _random_basis(rng, n, kappa)
        k = basis.k
        if inject_fault == "orthonormality":
            k = k + 1e-3 * rng.standard_normal(k.shape)
            basis = capacity.ConstraintBasis(
                k=k, spectrum=basis.spectrum, threshold=basis.threshold, kappa=basis.kappa
            )
        s = _random_orthonormal(rng, n, n_s)
        rot_s = _random_orthonormal(rng, n_s, n_s)
        rot_k = _random_orthonormal(rng, basis.kappa, basis.kappa)
        rotated = capacity.ConstraintBasis(
            k=basis.k @ rot_k, spectrum=basis.spectrum,
            threshold=basis.threshold, kappa=basis.kappa,
        )
        before = capacity.capacity_of(basis, capacity.Subspace(s))
        after = capacity.capacity_of(rotated, capacity.Subspace(s @ rot_s))
        ortho_err = float(np.max(np.abs(k.T @ k - np.eye(basis.kappa))))
        worst = max(worst, abs(before - after), ortho_err)
    return worst < 1e-8, f"max deviation {worst:.3e}"


def check_totality(rng, inject_fault=None):
    """Property 2: capacity of the full space equals kappa."""
    worst = 0.0
    for _ in range(50):
        n = int(rng.choice([4, 8, 16]))
        basis = _random_basis(rng, n, int(rng.integers(1, n + 1)))
        cap = capacity.capacity_of(basis, capacity.Subspace.full(n))
        worst = max(worst, abs(cap - basis.kappa))
    return worst < 1e-8, f"max deviation {worst:.3e}"


def check_additivity(rng, inject_fault=None):
    """Property 3: per-part capacities over an orthonormal partition sum to the total."""
    worst = 0.0
    for _ in range(50):
        n = int(rng.choice([4, 8, 16]))
        basis = _random_basis(rng, n, int(rng.integers(1, n + 1)))
        q = _random_orthonormal(rng, n, n)
        total = sum(
            capacity.capacity_of(basis, capacity.Subspace(q[:, [i]])) for i in range(n)
        )
        worst = max(worst, abs(total - basis.kappa))
    return worst < 1e-8, f"max deviation {worst:.3e}"


def check_unit_zero(rng, inject_fault=None):
    """Property 4: directions inside span(K) get capacity 1, orthogonal ones 0."""
    worst = 0.0
    for _ in range(50):
        n = int(rng.choice([4, 8, 16]))
        kappa = int(rng.integers(1, n))
        basis = _random_basis(rng, n, kappa)
        inside = basis.k @ _random_orthonormal(rng, kappa, 1)
        comp = np.linalg.qr(
            np.eye(n) - basis.k @ basis.k.T
        )[0][:, :1]
        comp = comp - basis.k @ (basis.k.T @ comp)
        comp /= np.linalg.norm(comp)
        worst = max(
            worst,
            abs(capacity.capacity_of(basis, capacity.Subspace(inside)) - 1.0),
            abs(capacity.capacity_of(basis, capacity.Subspace(comp))),
        )
    return worst < 1e-8, f"max deviation {worst:.3e}"


def check_orthogonal_sum_equivalence(rng, inject_fault=None):
    """Property 5: additivity holds iff the constraint spaces are orthogonal."""
    for _ in range(10):
        n = 8
        q = _random_orthonormal(rng, n, 5)
        k1, k2 = q[:, :3], q[:, 3:]
        b1 = capacity.basis_from_columns(k1)
        b2 = capacity.basis_from_columns(k2)
        bj = capacity.basis_from_columns(np.hstack([k1, k2]))
        for _ in range(20):
            s = capacity.Subspace(_random_orthonormal(rng, n, int(rng.integers(1, n))))
            dev = abs(
                capacity.capacity_of(b1, s) + capacity.capacity_of(b2, s)
                - capacity.capacity_of(bj, s)
            )
            if dev > 1e-10:
                return False, f"orthogonal pair violated additivity by {dev:.3e}"
        # oblique pair: some subspace must violate additivity
        k1 = _random_orthonormal(rng, n, 2)
        k2 = np.linalg.qr(k1 + 0.3 * rng.standard_normal((n, 2)))[0]
        b1 = capacity.basis_from_columns(k1)
        b2 = capacity.basis_from_columns(k2)
        bj = capacity.basis_from_columns(np.hstack([k1, k2]))
        found = False
        for _ in range(200):
            s = capacity.Subspace(_random_orthonormal(rng, n, 1))
            dev = abs(
                capacity.capacity_of(b1, s) + capacity.capacity_of(b2, s)
                - capacity.capacity_of(bj, s)
            )
            if dev > 1e-6:
                found = True
                break
        if not found:
            return False, "no violating subspace found for an oblique pair"
    return True, "orthogonal additivity and oblique violation both observed"


def check_chain_rule(rng, inject_fault=None):
    """Property 6: conditional chains sum to the joint capacity."""
    spec = covariance.AutocovarianceSpec.power_law(1.0, length=16)
    cov = covariance.build_covariance(spec)
    manifold = architectures.ModelManifold.hierarchical(depth=4, kernel=2, channels=2)
    w = manifold.init_parameters(rng)
    blocks = list(manifold.parameter_blocks().values())
    joint = capacity.basis_from_columns(
        capacity.constraint_columns(manifold, cov.sigma, w)
    )
    joint_cpi = capacity.spatial_cpi(joint)
    worst = 0.0
    for order in (blocks, blocks[::-1]):
        chain = capacity.conditional_chain(manifold, cov.sigma, w, order)
        worst = max(worst, float(np.max(np.abs(sum(chain) - joint_cpi))))
    return worst < 1e-8, f"max lag-wise deviation {worst:.3e}"


def check_cpi_bounds(rng, inject_fault=None):
    """CPI entries lie in [0, d] and sum to kappa."""
    worst = 0.0
    for d in (1, 4):
        spec = covariance.AutocovarianceSpec.power_law(1.0, length=8)
        cov = covariance.build_covariance(spec)
        manifold = architectures.ModelManifold.hierarchical(
            depth=3, kernel=2, channels=2, input_dim=d
        )
        sigma = np.kron(cov.sigma, np.eye(d)) if d > 1 else cov.sigma
        w = manifold.init_parameters(rng)
        basis = capacity.basis_from_columns(
            capacity.constraint_columns(manifold, sigma, w)
        )
        cpi = capacity.spatial_cpi(basis, d)
        worst = max(
            worst,
            float(max(0.0, cpi.max() - d, -cpi.min())),
            abs(float(cpi.sum()) - basis.kappa),
        )
    return worst < 1e-8, f"max deviation {worst:.3e}"


def check_predictor_residual(rng, inject_fault=None):
    """Exact predictor solves its normal equations to relative 1e-10."""
    worst = 0.0
    for _ in range(5):
        rho = float(rng.uniform(0.1, 0.9))
        spec = covariance.AutocovarianceSpec.exponential(rho, length=12)
        cov = covariance.build_covariance(spec)
        pred = covariance.exact_predictor(cov)
        resid = np.linalg.norm(cov.sigma @ pred.a_star - cov.cross)
        worst = max(worst, resid / np.linalg.norm(cov.cross))
    return worst < 1e-10, f"max relative residual {worst:.3e}"


def check_residual_variance_identity(rng, inject_fault=None):
    """Fitted residual variance equals v* plus the loss."""
    spec = covariance.AutocovarianceSpec.power_law(1.0, length=8)
    cov = covariance.build_covariance(spec)
    pred = covariance.exact_predictor(cov)
    manifold = architectures.ModelManifold.hierarchical(depth=3, kernel=2, channels=1)
    result = fitting.fit(manifold, cov, pred,
                         fitting.FitConfig(restarts=2, seed=int(rng.integers(1 << 30))))
    dev = abs(result.residual_variance - (pred.v_star + result.loss))
    return dev < 1e-12, f"identity deviation {dev:.3e}"


CHECKS = {
    "rotation_invariance": check_rotation_invariance,
    "totality": check_totality,
    "additivity": check_additivity,
    "unit_zero_directions": check_unit_zero,
    "orthogonal_sum_equivalence": check_orthogonal_sum_equivalence,
    "conditional_chain_rule": check_chain_rule,
    "cpi_bounds": check_cpi_bounds,
    "predictor_residual": check_predictor_residual,
    "residual_variance_identity": check_residual_variance_identity,
}


def run_validation(seed: int = 0, inject_fault: str | None = None) -> dict:
    """Run every check; returns {name: {"passed": bool, "detail": str}}."""
    results = {}
    for name, fn in CHECKS.items():
        rng = np.random.default_rng(seed)
        passed, detail = fn(rng, inject_fault=inject_fault)
        results[name] = {"passed": bool(passed), "detail": detail}
    return results
