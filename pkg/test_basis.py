"""B-spline evaluation, calculus identities and design matrices."""
import numpy as np
import pytest
from scipy.integrate import quad
from scipy.interpolate import BSpline

from splinecos.basis import (KnotVector, SupportGeometry, TensorBasis, Weight, design_matrix,
                             eval_all, eval_derivative_all, integral_all, make_clamped_knots)
from splinecos.errors import DomainError, ValidationError


def reference_basis(kv, j, x):
    """B_j via scipy's independent B-spline implementation."""
    coefs = np.zeros(kv.n_basis)
    coefs[j] = 1.0
    return BSpline(kv.knots, coefs, kv.order - 1, extrapolate=False)(x)


def gauss_legendre_integrals(kv, a, b, points=6):
    """Piecewise Gauss-Legendre integrals of every basis function over [a, b]."""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    breaks = np.unique(np.concatenate([[a, b], kv.knots[(kv.knots > a) & (kv.knots < b)]]))
    total = np.zeros(kv.n_basis)
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        total += 0.5 * (hi - lo) * (weights @ kv.evaluate(x))
    return total


def random_knots(rng, order):
    lo = rng.uniform(-5, 5)
    hi = lo + rng.uniform(0.5, 20)
    n_interior = rng.integers(0, 8)
    interior = np.sort(rng.uniform(lo, hi, n_interior))
    if n_interior > 1 and rng.random() < 0.3:
        interior[1] = interior[0]  # a repeated interior knot
    return KnotVector(np.concatenate([np.full(order, lo), interior, np.full(order, hi)]), order)


class TestKnots:
    def test_clamped_knots_uniform(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        np.testing.assert_array_equal(kv.knots, [0, 0, 0, 2.5, 5, 7.5, 10, 10, 10])
        assert kv.n_basis == 6
        assert kv.domain == (0.0, 10.0)

    def test_single_indicator_basis(self):
        kv = make_clamped_knots((0, 1), 0, 1)
        np.testing.assert_array_equal(kv.knots, [0, 1])
        assert kv.n_basis == 1

    def test_tensor_size(self):
        tb = TensorBasis.from_config(((0, 100), (0, 100)), (20, 20), (3, 3))
        assert tb.n_basis == 400

    @pytest.mark.parametrize("domain, n_interior, k", [((1, 1), 2, 3), ((2, 1), 2, 3), ((0, 1), 2, 0),
                                                       ((0, 1), -1, 2)])
    def test_rejects_bad_arguments(self, domain, n_interior, k):
        with pytest.raises(ValidationError):
            make_clamped_knots(domain, n_interior, k)

    @pytest.mark.parametrize("knots, order", [
        ([0, 0, 1, 1], 3),             # too few knots
        ([0, 0, 2, 1, 1], 2),          # decreasing
        ([0, 1, 2, 2], 2),             # unclamped left end
        ([0, 0, 0, 1, 1], 2),          # left end repeated too often
    ])
    def test_knot_vector_validation(self, knots, order):
        with pytest.raises(ValidationError):
            KnotVector(np.array(knots, dtype=float), order)

    def test_round_trip_dict(self):
        kv = make_clamped_knots((0, 10), 4, 3)
        again = KnotVector.from_dict(kv.to_dict())
        np.testing.assert_array_equal(again.knots, kv.knots)
        assert again.order == kv.order


class TestEvaluate:
    def test_order_one_indicator(self):
        kv = KnotVector(np.array([0.0, 1.0, 2.0]), 1)
        np.testing.assert_array_equal(eval_all(kv, 0.5), [1.0, 0.0])

    def test_matches_reference_implementation(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        expected = [reference_basis(kv, j, 4.0) for j in range(kv.n_basis)]
        np.testing.assert_allclose(eval_all(kv, 4.0), expected, atol=1e-14)

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_partition_of_unity_and_local_support(self, rng, order):
        kv = random_knots(rng, order)
        lo, hi = kv.domain
        x = rng.uniform(lo, hi, 200)
        values = kv.evaluate(x)
        np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(values >= 0)
        assert np.all((values > 0).sum(axis=1) <= order)
        t = kv.knots
        for j in range(kv.n_basis):
            outside = (x < t[j]) | (x > t[j + order])
            assert np.all(values[outside, j] == 0)

    def test_right_endpoint_included(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        values = eval_all(kv, 10.0)
        assert values[-1] == pytest.approx(1.0)
        assert values.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("x", [-1e-9, 10.5, np.nan])
    def test_outside_domain_rejected(self, x):
        kv = make_clamped_knots((0, 10), 3, 3)
        with pytest.raises(DomainError):
            eval_all(kv, x)


class TestDerivative:
    def test_sums_to_zero(self, rng):
        kv = make_clamped_knots((0, 10), 5, 4)
        x = rng.uniform(0.01, 9.99, 50)
        np.testing.assert_allclose(kv.derivative(x).sum(axis=1), 0.0, atol=1e-12)

    def test_matches_central_difference(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        h = 1e-6
        fd = (eval_all(kv, 4.0 + h) - eval_all(kv, 4.0 - h)) / (2 * h)
        np.testing.assert_allclose(eval_derivative_all(kv, 4.0), fd, rtol=1e-6, atol=1e-8)

    def test_continuous_at_simple_knot(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        eps = 1e-9
        left = eval_derivative_all(kv, 5.0 - eps)
        right = eval_derivative_all(kv, 5.0 + eps)
        np.testing.assert_allclose(left, right, atol=1e-6)

    def test_order_one_rejected(self):
        kv = KnotVector(np.array([0.0, 1.0, 2.0]), 1)
        with pytest.raises(ValidationError):
            eval_derivative_all(kv, 0.5)


class TestIntegrate:
    def test_order_one_areas(self):
        kv = KnotVector(np.array([0.0, 1.0, 2.0]), 1)
        np.testing.assert_allclose(integral_all(kv, 0.0, 1.5), [1.0, 0.5], atol=1e-15)

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_full_domain_sums_to_length(self, rng, order):
        kv = random_knots(rng, order)
        lo, hi = kv.domain
        assert integral_all(kv, lo, hi).sum() == pytest.approx(hi - lo, abs=1e-12)

    def test_matches_adaptive_quadrature(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        exact = integral_all(kv, 1.3, 7.7)
        for j in range(kv.n_basis):
            reference, _ = quad(lambda s: reference_basis(kv, j, s), 1.3, 7.7,
                                points=[2.5, 5.0, 7.5], epsabs=1e-13, limit=200)
            assert exact[j] == pytest.approx(reference, abs=1e-9)

    def test_randomized_cases_match_quadrature(self, rng):
        for _ in range(200):
            kv = random_knots(rng, int(rng.integers(1, 5)))
            lo, hi = kv.domain
            a, b = np.sort(rng.uniform(lo, hi, 2))
            exact = integral_all(kv, a, b)
            assert np.all(exact >= 0)
            np.testing.assert_allclose(exact, gauss_legendre_integrals(kv, a, b), atol=1e-9)

    def test_additive_over_intervals(self, rng):
        kv = make_clamped_knots((0, 10), 6, 3)
        a, b, c = 0.7, 4.2, 9.1
        np.testing.assert_allclose(integral_all(kv, a, b) + integral_all(kv, b, c),
                                   integral_all(kv, a, c), atol=1e-12)

    def test_derivative_of_integral_is_basis(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        h = 1e-6
        fd = (integral_all(kv, 1.0, 6.3 + h) - integral_all(kv, 1.0, 6.3 - h)) / (2 * h)
        np.testing.assert_allclose(fd, eval_all(kv, 6.3), rtol=1e-6, atol=1e-8)

    def test_empty_interval(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        np.testing.assert_array_equal(integral_all(kv, 3.0, 3.0), 0.0)

    def test_reversed_bounds_rejected(self):
        kv = make_clamped_knots((0, 10), 3, 3)
        with pytest.raises(ValidationError):
            integral_all(kv, 5.0, 4.0)
        with pytest.raises(DomainError):
            integral_all(kv, -1.0, 4.0)


class TestSupportGeometry:
    def test_area_and_centroid(self):
        s = SupportGeometry.rect(0, 4, 1, 3)
        assert s.area == 8
        assert s.centroid == (2.0, 2.0)
        assert s.as_point().is_point

    @pytest.mark.parametrize("extent", [(1, 1, 0, 1), (2, 1, 0, 1), (0, 1, 0, np.inf)])
    def test_degenerate_rect_rejected(self, extent):
        with pytest.raises(ValidationError):
            SupportGeometry.rect(*extent)

    @pytest.mark.parametrize("other, inside", [
        (SupportGeometry.rect(0, 4, 1, 3), True),
        (SupportGeometry.rect(1, 2, 1.5, 2.5), True),
        (SupportGeometry.point(4, 3), True),
        (SupportGeometry.point(4.01, 2), False),
        (SupportGeometry.rect(3, 5, 1, 3), False),
        (SupportGeometry.rect(1, 2, 0, 1.5), False),
    ])
    def test_contains(self, other, inside):
        assert SupportGeometry.rect(0, 4, 1, 3).contains(other) is inside


class TestDesignMatrix:
    def test_full_domain_average_row(self):
        tb = TensorBasis.from_config(((0, 4), (0, 2)), (4, 2), (1, 1))
        row = design_matrix(tb, [tb.full_domain(Weight.AVERAGE)]).toarray()[0]
        np.testing.assert_allclose(row, 1.0 / 8, atol=1e-15)
        assert row.sum() == pytest.approx(1.0)

    def test_average_rows_sum_to_one(self, basis_2d, rng):
        lo = rng.uniform(0, 60, size=(30, 2))
        side = rng.uniform(1, 40, size=(30, 2))
        rects = [SupportGeometry.rect(a, a + w, b, b + h) for (a, b), (w, h) in zip(lo, side)]
        np.testing.assert_allclose(design_matrix(basis_2d, rects).sum(axis=1).A1, 1.0, atol=1e-12)

    def test_total_weight_is_area_times_average(self, basis_2d):
        avg = SupportGeometry.rect(10, 35, 20, 80, Weight.AVERAGE)
        tot = avg.with_weight(Weight.TOTAL)
        rows = design_matrix(basis_2d, [avg, tot]).toarray()
        np.testing.assert_allclose(rows[1], rows[0] * avg.area, rtol=1e-12)

    def test_grid_rows_match_tensor_quadrature(self):
        tb = TensorBasis.from_config(((0, 100), (0, 100)), (20, 20), (3, 3))
        edges = np.linspace(0, 100, 5)
        rects = [SupportGeometry.rect(edges[i], edges[i + 1], edges[j], edges[j + 1])
                 for i in range(4) for j in range(4)]
        design = design_matrix(tb, rects).toarray()
        for row, r in zip(design, rects):
            expected = np.kron(gauss_legendre_integrals(tb.basis1, r.lo1, r.hi1),
                               gauss_legendre_integrals(tb.basis2, r.lo2, r.hi2)) / r.area
            np.testing.assert_allclose(row, expected, atol=1e-9)

    def test_point_rows_are_tensor_products(self, basis_2d):
        p = SupportGeometry.point(37.0, 81.5)
        row = design_matrix(basis_2d, [p]).toarray()[0]
        expected = np.kron(eval_all(basis_2d.basis1, 37.0), eval_all(basis_2d.basis2, 81.5))
        np.testing.assert_allclose(row, expected, atol=1e-15)
        assert np.count_nonzero(row) <= 9

    def test_flat_index_is_row_major(self, basis_2d):
        p = SupportGeometry.point(99.0, 1.0)
        row = design_matrix(basis_2d, [p]).toarray()[0].reshape(basis_2d.q1, basis_2d.q2)
        assert row[-1, 0] == pytest.approx(eval_all(basis_2d.basis1, 99.0)[-1] * eval_all(basis_2d.basis2, 1.0)[0])

    def test_rect_is_mean_of_quadrants(self, basis_2d):
        whole = SupportGeometry.rect(10, 50, 20, 60)
        quadrants = [SupportGeometry.rect(a, a + 20, b, b + 20) for a in (10, 30) for b in (20, 40)]
        rows = design_matrix(basis_2d, [whole] + quadrants).toarray()
        np.testing.assert_allclose(rows[0], rows[1:].mean(axis=0), atol=1e-12)

    def test_one_dimensional_supports(self, basis_1d):
        rect = SupportGeometry.rect(2.0, 3.0, 0.0, 1.0)
        row = design_matrix(basis_1d, [rect]).toarray()[0]
        np.testing.assert_allclose(row, integral_all(basis_1d.basis1, 2.0, 3.0), atol=1e-15)

    def test_out_of_domain_names_row(self, basis_2d):
        supports = [SupportGeometry.point(1, 1), SupportGeometry.rect(90, 101, 0, 10)]
        with pytest.raises(DomainError, match="row 1") as info:
            design_matrix(basis_2d, supports, label="target")
        assert info.value.row == 1
        assert info.value.extent == (90.0, 101.0, 0.0, 10.0)

    def test_supports_on_domain_boundary_accepted(self, basis_2d):
        supports = [SupportGeometry.point(100, 0), SupportGeometry.rect(0, 100, 0, 100)]
        assert design_matrix(basis_2d, supports).shape == (2, basis_2d.n_basis)
        with pytest.raises(DomainError, match="row 0"):
            design_matrix(basis_2d, [SupportGeometry.point(50, 100.5)])

    def test_chunked_rows(self, basis_1d):
        points = [SupportGeometry.point(x, 0.5) for x in np.linspace(0, 10, 5000)]
        design = design_matrix(basis_1d, points)
        assert design.shape == (5000, basis_1d.n_basis)
        np.testing.assert_allclose(design.sum(axis=1).A1, 1.0, atol=1e-12)

    def test_round_trip_dict(self, basis_2d):
        again = TensorBasis.from_dict(basis_2d.to_dict())
        p = [SupportGeometry.point(12.5, 70.0)]
        np.testing.assert_array_equal(design_matrix(again, p).toarray(),
                                      design_matrix(basis_2d, p).toarray())
