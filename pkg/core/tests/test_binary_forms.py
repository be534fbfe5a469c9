import numpy as np
import pytest

from core.binary_forms import (
    FormError,
    HomogeneousForm,
    coeff_norm,
    compose,
    compose_many,
    det2,
    disc3,
    evaluate,
    from_derivatives,
    from_weighted,
    is_null_form,
    linear_factor_power,
    multiplicity_class,
    multiply,
    random_form,
    roots,
    rotation,
    to_weighted,
    vanishing_order,
)


def form(token):
    return HomogeneousForm.parse(token)


@pytest.fixture
def rng():
    return np.random.default_rng(0x5EED)


class TestHomogeneousForm:
    def test_parse_reads_descending_powers_of_x(self):
        pi = form("3:1,0,-3,0")
        assert pi.degree == 3
        assert pi.coeffs == (1.0, 0.0, -3.0, 0.0)
        assert evaluate(pi, (2.0, 1.0)) == pytest.approx(8.0 - 6.0)

    @pytest.mark.parametrize("token", ["3:1,2", "x:1,2", "1,2,3", "0:1", "2:1,nan,1"])
    def test_parse_rejects_bad_tokens(self, token):
        with pytest.raises(FormError):
            form(token)

    def test_token_survives_parse(self):
        pi = HomogeneousForm((0.1, -2.0 / 3.0, 1e-17))
        assert form(pi.to_token()) == pi

    def test_evaluate_examples(self):
        assert evaluate(form("2:1,0,1"), (1.0, 1.0)) == pytest.approx(2.0)
        assert evaluate(form("3:1,0,-3,0"), (1.0, 0.0)) == pytest.approx(1.0)
        s = 1 / np.sqrt(2)
        assert evaluate(form("3:1,0,3,0"), (s, s)) == pytest.approx(np.sqrt(2))

    def test_evaluate_broadcasts_over_points(self):
        pi = form("2:1,2,3")
        points = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [2.0, -1.0]]])
        expected = np.array([[1.0, 3.0], [6.0, 4.0 - 4.0 + 3.0]])
        np.testing.assert_allclose(evaluate(pi, points), expected)

    def test_homogeneity(self, rng):
        for _ in range(1000):
            m = int(rng.integers(1, 7))
            pi = random_form(rng, m)
            lam = rng.uniform(-3, 3)
            z = rng.uniform(-2, 2, size=2)
            lhs = evaluate(pi, lam * z)
            rhs = lam ** m * evaluate(pi, z)
            assert abs(lhs - rhs) <= 1e-10 * coeff_norm(pi) * max(1.0, np.linalg.norm(lam * z)) ** m

    def test_call_matches_evaluate(self):
        pi = form("3:1,-1,2,0.5")
        assert pi(0.3, -0.7) == pytest.approx(evaluate(pi, (0.3, -0.7)))


class TestCompose:
    def test_identity(self):
        pi = form("4:1,2,3,4,5")
        assert compose(pi, np.eye(2)).coeffs == pytest.approx(pi.coeffs)

    def test_diagonal_substitution(self):
        assert compose(form("2:1,0,0"), np.diag([2.0, 1.0])).coeffs == pytest.approx((4.0, 0.0, 0.0))

    def test_pointwise(self, rng):
        pi = random_form(rng, 4)
        phi = rng.normal(size=(2, 2))
        composed = compose(pi, phi)
        for z in rng.uniform(-1, 1, size=(100, 2)):
            expected = evaluate(pi, phi @ z)
            assert evaluate(composed, z) == pytest.approx(expected, rel=1e-10, abs=1e-10 * coeff_norm(pi))

    def test_composition_law(self, rng):
        pi = random_form(rng, 3)
        phi, psi = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        lhs = compose(compose(pi, phi), psi)
        rhs = compose(pi, phi @ psi)
        np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, rtol=1e-10, atol=1e-10)

    def test_batch_matches_single(self, rng):
        pi = random_form(rng, 5)
        phis = rng.normal(size=(7, 2, 2))
        batch = compose_many(pi.coeffs, phis)
        for phi, row in zip(phis, batch):
            np.testing.assert_allclose(row, compose(pi, phi).coeffs, rtol=1e-12, atol=1e-12)

    def test_rejects_bad_map(self):
        with pytest.raises(FormError):
            compose(form("2:1,0,1"), np.eye(3))


class TestInvariants:
    def test_coeff_norm(self):
        assert coeff_norm(form("2:1,2,0")) == 2.0
        assert coeff_norm(form("2:0,0,0")) == 0.0
        assert coeff_norm(form("4:0,0,0,0,-3")) == 3.0

    def test_det2_examples(self):
        assert det2(form("2:1,0,1")) == pytest.approx(1.0)
        assert det2(form("2:1,0,-1")) == pytest.approx(-1.0)
        assert det2(form("2:0,1,0")) == pytest.approx(-0.25)

    def test_disc3_examples(self):
        assert disc3(form("3:1,0,-3,0")) == pytest.approx(108.0)
        assert disc3(form("3:1,0,0,0")) == 0.0
        assert disc3(form("3:1,0,-1,0")) == pytest.approx(4.0)
        assert disc3(form("3:1,0,0,1")) == pytest.approx(-27.0)

    def test_degree_checks(self):
        with pytest.raises(FormError):
            det2(form("3:1,0,0,0"))
        with pytest.raises(FormError):
            disc3(form("2:1,0,1"))

    def test_change_of_variables(self, rng):
        for _ in range(100):
            phi = rng.normal(size=(2, 2))
            d = np.linalg.det(phi)
            quad, cubic = random_form(rng, 2), random_form(rng, 3)
            assert det2(compose(quad, phi)) == pytest.approx(d ** 2 * det2(quad), rel=1e-9, abs=1e-12)
            assert disc3(compose(cubic, phi)) == pytest.approx(d ** 6 * disc3(cubic), rel=1e-9, abs=1e-12)

    def test_homogeneity_of_invariants(self, rng):
        quad, cubic = random_form(rng, 2), random_form(rng, 3)
        assert det2(quad.scaled(3.0)) == pytest.approx(9.0 * det2(quad))
        assert disc3(cubic.scaled(-2.0)) == pytest.approx(16.0 * disc3(cubic))


class TestRoots:
    def test_difference_of_squares(self):
        found = roots(form("2:1,0,-1"))
        assert found.leading == 1.0
        assert found.divisible_by_y == 0
        assert sorted(r.real for r in found.roots) == pytest.approx([-1.0, 1.0])

    def test_cubic_normal_form(self):
        found = roots(form("3:1,0,-3,0"))
        assert sorted(r.real for r in found.roots) == pytest.approx([-np.sqrt(3), 0.0, np.sqrt(3)], abs=1e-12)

    def test_divisible_by_y(self):
        found = roots(form("3:0,1,0,0"))
        assert found.divisible_by_y == 1
        assert found.leading == 1.0
        assert [abs(r) for r in found.roots] == pytest.approx([0.0, 0.0])

    def test_reconstruction(self, rng):
        for _ in range(20):
            pi = random_form(rng, int(rng.integers(2, 6)))
            rebuilt = roots(pi).reconstruct()
            assert np.max(np.abs(np.subtract(rebuilt.coeffs, pi.coeffs))) <= 1e-9 * coeff_norm(pi)

    def test_zero_form(self):
        with pytest.raises(FormError):
            roots(HomogeneousForm((0.0, 0.0, 0.0)))


class TestMultiplicity:
    def test_examples(self):
        assert multiplicity_class(form("3:0,1,0,0")) == 2
        assert multiplicity_class(form("3:1,0,-3,0")) == 1
        assert multiplicity_class(linear_factor_power(1.0, 1.0, 3)) == 3

    def test_root_at_infinity_counts(self):
        assert multiplicity_class(form("4:0,0,0,1,0")) == 3

    def test_vanishing_order(self):
        assert [vanishing_order(m) for m in (2, 3, 4, 5)] == [2, 2, 3, 3]

    def test_null_forms(self, rng):
        assert is_null_form(form("3:0,1,0,0"))
        assert not is_null_form(form("3:1,0,-3,0"))
        assert not is_null_form(form("4:0,0,1,0,0"))
        for _ in range(10):
            a, b = rng.uniform(-1, 1, size=2)
            rest = random_form(rng, 2)
            assert is_null_form(multiply(linear_factor_power(a, b, 3), rest))

    def test_rotation_keeps_multiplicity(self):
        pi = compose(form("3:0,1,0,0"), rotation(0.7))
        assert multiplicity_class(pi) == 2


class TestConventions:
    def test_weighted_to_plain(self):
        assert from_weighted([1.0, 0.0, -1.0, 0.0]).coeffs == (1.0, 0.0, -3.0, 0.0)
        np.testing.assert_allclose(to_weighted(form("3:1,0,-3,0")), [1.0, 0.0, -1.0, 0.0])

    def test_from_derivatives(self):
        # x^3: d^3/dx^3 = 6
        assert from_derivatives([6.0, 0.0, 0.0, 0.0]).coeffs == pytest.approx((1.0, 0.0, 0.0, 0.0))
        # xy: d^2/dxdy = 1
        assert from_derivatives([0.0, 1.0, 0.0]).coeffs == pytest.approx((0.0, 1.0, 0.0))
