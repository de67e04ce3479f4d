"""Capacity algebra: bases, subspace capacities, chains, redundancy.

Oracles: the projector-trace identity ||K^T S||_F^2 = tr(S^T K K^T S),
SVD ranks for constraint bases, and brute-force column unions for the
conditional chain rule.
"""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capalloc import (
    AutocovarianceSpec,
    ConstraintBasis,
    DegenerateJacobian,
    FitConfig,
    InsufficientFits,
    InvalidPartition,
    ModelManifold,
    ShapeMismatch,
    StationarityViolated,
    Subspace,
    build_covariance,
    capacity_of,
    conditional_capacity,
    conditional_chain,
    constraint_basis,
    constraint_columns,
    basis_from_columns,
    covariance_eigen_capacity,
    effective_parameter_count,
    error_bound_analysis,
    exact_predictor,
    fit,
    marginal_contributions,
    rank_threshold,
    redundancy_check,
    spatial_cpi,
)


def random_orthonormal(rng, n, k):
    q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    return q


def make_basis(k_matrix):
    kappa = k_matrix.shape[1]
    spectrum = np.ones(k_matrix.shape[0])
    spectrum[kappa:] = 0.0
    return ConstraintBasis(k=k_matrix, spectrum=spectrum, threshold=0.5, kappa=kappa)


class TestRankThreshold:
    def test_negative_eigenvalue_rule(self):
        spectrum = np.array([4.0, 1.0, -1e-8])
        assert rank_threshold(spectrum) == pytest.approx(1e-7)

    def test_relative_floor(self):
        spectrum = np.array([1e6, 1.0, 1e-20])
        assert rank_threshold(spectrum) == pytest.approx(1e-6)


class TestBasisFromColumns:
    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rank_matches_svd(self, seed):
        rng = np.random.default_rng(seed)
        n, r = 10, int(rng.integers(1, 7))
        ktilde = rng.normal(size=(n, r)) @ rng.normal(size=(r, r + 2))
        basis = basis_from_columns(ktilde)
        svd_rank = np.linalg.matrix_rank(ktilde, tol=1e-8)
        assert basis.kappa == svd_rank
        # orthonormality
        np.testing.assert_allclose(
            basis.k.T @ basis.k, np.eye(basis.kappa), atol=1e-10
        )
        # span agreement: projecting ktilde onto the basis loses nothing
        proj = basis.k @ (basis.k.T @ ktilde)
        np.testing.assert_allclose(proj, ktilde, atol=1e-8 * (1 + np.abs(ktilde).max()))

    def test_zero_columns_rejected(self):
        with pytest.raises(DegenerateJacobian):
            basis_from_columns(np.zeros((4, 3)))


class TestCapacityAxioms:
    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_projector_trace_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.choice([4, 8, 16]))
        kappa = int(rng.integers(1, n + 1))
        basis = make_basis(random_orthonormal(rng, n, kappa))
        s = Subspace.span(random_orthonormal(rng, n, int(rng.integers(1, n + 1))))
        oracle = float(np.trace(s.s.T @ basis.k @ basis.k.T @ s.s))
        assert capacity_of(basis, s) == pytest.approx(oracle, abs=1e-10)

    def test_totality(self):
        rng = np.random.default_rng(0)
        basis = make_basis(random_orthonormal(rng, 8, 5))
        assert capacity_of(basis, Subspace.full(8)) == pytest.approx(5.0, abs=1e-12)

    def test_unit_and_zero_directions(self):
        rng = np.random.default_rng(1)
        k = random_orthonormal(rng, 8, 3)
        basis = make_basis(k)
        inside = Subspace.span(k[:, :1])
        assert capacity_of(basis, inside) == pytest.approx(1.0, abs=1e-12)
        # a direction orthogonal to the span carries no capacity
        full = random_orthonormal(rng, 8, 8)
        outside = full - k @ (k.T @ full)
        outside = outside[:, np.argmax(np.linalg.norm(outside, axis=0))]
        outside /= np.linalg.norm(outside)
        assert capacity_of(basis, Subspace.span(outside)) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_additivity(self):
        rng = np.random.default_rng(2)
        basis = make_basis(random_orthonormal(rng, 12, 7))
        q = random_orthonormal(rng, 12, 6)
        s1, s2 = Subspace.span(q[:, :2]), Subspace.span(q[:, 2:])
        joint = Subspace.span(q)
        assert capacity_of(basis, joint) == pytest.approx(
            capacity_of(basis, s1) + capacity_of(basis, s2), abs=1e-12
        )

    def test_dimension_mismatch(self):
        basis = make_basis(random_orthonormal(np.random.default_rng(3), 8, 2))
        with pytest.raises(ShapeMismatch):
            capacity_of(basis, Subspace.full(6))


class TestSubspace:
    def test_span_orthonormalizes_with_warning(self):
        vectors = np.array([[1.0, 2.0], [0.0, 1.0], [0.0, 0.0]])
        with pytest.warns(UserWarning, match="orthonormalizing"):
            s = Subspace.span(vectors)
        np.testing.assert_allclose(s.s.T @ s.s, np.eye(2), atol=1e-12)

    def test_one_hot(self):
        s = Subspace.one_hot(5, [1, 3])
        assert s.n_s == 2
        np.testing.assert_array_equal(s.s[:, 0], [0, 1, 0, 0, 0])
        np.testing.assert_array_equal(s.s[:, 1], [0, 0, 0, 1, 0])


@pytest.fixture(scope="module")
def fitted_stack():
    cov = build_covariance(AutocovarianceSpec.power_law(alpha=1.0, length=16))
    pred = exact_predictor(cov)
    manifold = ModelManifold.hierarchical(depth=4, kernel=2, channels=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = fit(manifold, cov, pred, FitConfig(restarts=4, seed=11))
    return cov, pred, manifold, result


class TestConstraintBasis:
    def test_stationarity_guard(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        rng = np.random.default_rng(0)
        w_bad = manifold.init_parameters(rng)
        with pytest.raises(StationarityViolated):
            constraint_basis(manifold, cov, w_bad, target=pred)

    def test_accepts_fitted_point(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        basis = constraint_basis(
            manifold, cov, result.w_hat, target=pred,
            stationarity_tol=max(10 * result.grad_norm, 1e-6),
        )
        assert 1 <= basis.kappa <= min(manifold.param_count, manifold.coeff_dim)

    def test_effective_count_bounded(self):
        rng = np.random.default_rng(9)
        cov = build_covariance(AutocovarianceSpec.power_law(length=16))
        for channels in (1, 2, 3):
            m = ModelManifold.hierarchical(depth=4, channels=channels)
            kappa = effective_parameter_count(m, m.init_parameters(rng), cov)
            assert kappa <= min(m.param_count, m.coeff_dim)

    def test_single_channel_stack_rank(self):
        # depth-L kernel-2 stack with one channel spans L + 1 generic directions
        rng = np.random.default_rng(10)
        cov = build_covariance(AutocovarianceSpec.power_law(length=16))
        m = ModelManifold.hierarchical(depth=4, channels=1)
        assert effective_parameter_count(m, m.init_parameters(rng), cov) == 5

    def test_recurrent_scalar_model_rank(self):
        # input/output scales collapse to one effective scale plus one rate
        rng = np.random.default_rng(12)
        cov = build_covariance(AutocovarianceSpec.power_law(length=8))
        m = ModelManifold.recurrent(8)
        assert effective_parameter_count(m, m.init_parameters(rng), cov) == 2


class TestSpatialCPI:
    def test_sums_to_kappa(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        basis = constraint_basis(manifold, cov, result.w_hat)
        cpi = spatial_cpi(basis)
        assert cpi.sum() == pytest.approx(basis.kappa, abs=1e-10)
        assert np.all(cpi >= -1e-12) and np.all(cpi <= 1 + 1e-12)

    def test_multidim_bounds(self):
        rng = np.random.default_rng(4)
        d = 3
        cov = build_covariance(AutocovarianceSpec.power_law(length=8))
        m = ModelManifold.fully_connected(8, input_dim=d)
        basis = constraint_basis(m, cov, m.init_parameters(rng))
        cpi = spatial_cpi(basis, input_dim=d)
        assert cpi.shape == (8,)
        assert np.all(cpi <= d + 1e-12)
        assert cpi.sum() == pytest.approx(basis.kappa, abs=1e-10)


class TestCovarianceEigenCapacity:
    def test_sums_to_kappa_and_ordering(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        basis = constraint_basis(manifold, cov, result.w_hat)
        vals, caps = covariance_eigen_capacity(basis, cov)
        assert np.all(np.diff(vals) <= 1e-12)
        assert caps.sum() == pytest.approx(basis.kappa, abs=1e-10)
        assert np.all((caps >= -1e-12) & (caps <= 1 + 1e-12))


class TestConditionalChain:
    def test_chain_sums_to_joint_cpi(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        blocks = list(manifold.parameter_blocks().values())
        joint_cpi = spatial_cpi(
            basis_from_columns(constraint_columns(manifold, cov, result.w_hat))
        )
        for grouping in (blocks, blocks[::-1]):
            chain = conditional_chain(manifold, cov, result.w_hat, grouping)
            np.testing.assert_allclose(sum(chain), joint_cpi, atol=1e-8)

    def test_brute_force_conditional(self, fitted_stack):
        # each chain entry equals capacity(blocks 1..i) - capacity(blocks 1..i-1)
        cov, pred, manifold, result = fitted_stack
        blocks = list(manifold.parameter_blocks().values())
        ktilde = constraint_columns(manifold, cov, result.w_hat)
        chain = conditional_chain(manifold, cov, result.w_hat, blocks)
        prev = np.zeros(manifold.receptive_field)
        taken = []
        for block, entry in zip(blocks, chain):
            taken.extend(block.tolist())
            cpi = spatial_cpi(basis_from_columns(ktilde[:, taken]))
            np.testing.assert_allclose(entry, cpi - prev, atol=1e-10)
            prev = cpi

    def test_invalid_partition(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        with pytest.raises(InvalidPartition):
            conditional_chain(manifold, cov, result.w_hat, [[0, 1], [1, 2]])
        with pytest.raises(InvalidPartition):
            conditional_chain(manifold, cov, result.w_hat, [])

    def test_conditional_capacity_is_raw_difference(self):
        rng = np.random.default_rng(6)
        joint = make_basis(random_orthonormal(rng, 8, 5))
        sub = make_basis(joint.k[:, :3])
        s = Subspace.span(random_orthonormal(rng, 8, 2))
        expected = capacity_of(joint, s) - capacity_of(sub, s)
        assert conditional_capacity(joint, sub, s) == pytest.approx(expected, abs=1e-14)


def make_basis_pair(rng, n, k1, k2, orthogonal):
    q = random_orthonormal(rng, n, k1 + k2)
    a = q[:, :k1]
    if orthogonal:
        b = q[:, k1:]
    else:
        b = random_orthonormal(rng, n, k2)
        # reject accidentally orthogonal draws
        if np.abs(a.T @ b).max() < 1e-3:
            b[:, 0] = (b[:, 0] + a[:, 0]) / np.linalg.norm(b[:, 0] + a[:, 0])
    return a, b


class TestOrthogonalSumEquivalence:
    def test_orthogonal_pairs_add(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            a, b = make_basis_pair(rng, 10, 3, 4, orthogonal=True)
            joint = basis_from_columns(np.hstack([a, b]))
            s = Subspace.span(random_orthonormal(rng, 10, int(rng.integers(1, 6))))
            total = capacity_of(make_basis(a), s) + capacity_of(make_basis(b), s)
            assert capacity_of(joint, s) == pytest.approx(total, abs=1e-10)

    def test_oblique_pairs_violate_somewhere(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            a, b = make_basis_pair(rng, 10, 3, 3, orthogonal=False)
            joint = basis_from_columns(np.hstack([a, b]))
            # a direction mixing the two spans exposes the violation
            mix = a[:, 0] + b[:, 0]
            s = Subspace.span(mix / np.linalg.norm(mix))
            total = capacity_of(make_basis(a), s) + capacity_of(make_basis(b), s)
            assert abs(capacity_of(joint, s) - total) > 1e-6


class TestMarginalContributions:
    def test_duplicate_factors_have_zero_marginal(self):
        # w1 * w2 * a0: either factor alone spans the whole constraint space
        cov = build_covariance(AutocovarianceSpec.power_law(length=8))
        direction = np.linspace(1.0, 0.2, 8)
        m = ModelManifold.product(direction, factors=2)
        w = np.array([0.7, -1.3])
        contributions = marginal_contributions(m, cov, w, [[0], [1]])
        for c in contributions:
            assert c.independent_total == pytest.approx(1.0, abs=1e-12)
            assert c.marginal_total == pytest.approx(0.0, abs=1e-12)
            np.testing.assert_allclose(c.marginal_cpi, 0, atol=1e-10)

    def test_fully_connected_has_full_marginals(self):
        cov = build_covariance(AutocovarianceSpec.power_law(length=4))
        m = ModelManifold.fully_connected(4)
        w = np.array([0.3, 0.1, -0.2, 0.4])
        contributions = marginal_contributions(m, cov, w, [[0], [1], [2], [3]])
        for c in contributions:
            assert c.marginal_total == pytest.approx(1.0, abs=1e-12)


class TestRedundancyCheck:
    def test_product_factor_recovers_after_freeze(self):
        cov = build_covariance(AutocovarianceSpec.power_law(length=8))
        pred = exact_predictor(cov)
        direction = np.linspace(1.0, 0.2, 8)
        m = ModelManifold.product(direction, factors=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reference = fit(m, cov, pred, FitConfig(restarts=4, seed=0))
            record = redundancy_check(
                m, cov, reference.w_hat, [0], target=pred,
                fit_config=FitConfig(restarts=4, seed=1), n_freezes=5, seed=2,
            )
        assert record.flagged
        assert record.recovered

    def test_non_redundant_block_not_flagged(self):
        cov = build_covariance(AutocovarianceSpec.power_law(length=4))
        m = ModelManifold.fully_connected(4)
        pred = exact_predictor(cov)
        record = redundancy_check(
            m, cov, pred.a_star.copy(), [0], target=pred,
            fit_config=FitConfig(restarts=2, seed=0),
        )
        assert not record.flagged
        assert record.recovered is None

    def test_block_cannot_cover_everything(self):
        cov = build_covariance(AutocovarianceSpec.power_law(length=4))
        m = ModelManifold.fully_connected(4)
        pred = exact_predictor(cov)
        with pytest.raises(InvalidPartition):
            redundancy_check(m, cov, pred.a_star.copy(), [0, 1, 2, 3],
                             target=pred, fit_config=FitConfig(restarts=1))


class TestErrorBoundAnalysis:
    def test_requires_two_fits(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        basis = constraint_basis(manifold, cov, result.w_hat)
        subspaces = [Subspace.one_hot(16, i) for i in range(4)]
        with pytest.raises(InsufficientFits):
            error_bound_analysis(basis, [result], pred, subspaces)

    def test_normalizations_sum_to_one(self, fitted_stack):
        cov, pred, manifold, result = fitted_stack
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            other = fit(manifold, cov, pred, FitConfig(restarts=2, seed=99))
        basis = constraint_basis(manifold, cov, result.w_hat)
        subspaces = [Subspace.one_hot(16, i) for i in range(16)]
        rows = error_bound_analysis(basis, [result, other], pred, subspaces)
        assert sum(r.bound_normalized for r in rows) == pytest.approx(1.0, abs=1e-10)
        assert sum(r.error_mean for r in rows) == pytest.approx(1.0, abs=1e-10)
        for r in rows:
            assert r.bound == pytest.approx(max(r.n_s - r.capacity, 0.0), abs=1e-12)
