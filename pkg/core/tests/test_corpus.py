import numpy as np
import pytest

from core.corpus import StudyError, corpus, degenerate_function, function_names, get_function


def second_partials(value, x, y, h=1e-4):
    fxx = (value(x + h, y) - 2 * value(x, y) + value(x - h, y)) / h ** 2
    fyy = (value(x, y + h) - 2 * value(x, y) + value(x, y - h)) / h ** 2
    fxy = (value(x + h, y + h) - value(x + h, y - h) - value(x - h, y + h) + value(x - h, y - h)) / (4 * h ** 2)
    return np.array([fxx, fxy, fyy])


class TestCorpus:
    def test_names(self):
        assert set(function_names()) == {
            'isoquad', 'saddle', 'hyp', 'cubsum', 'cubaniso', 'bump', 'saddleaniso', 'degen'}

    def test_unknown_name(self):
        with pytest.raises(StudyError):
            get_function('sinc')

    @pytest.mark.parametrize("name,point", [('bump', (0.1, -0.3)), ('cubaniso', (0.4, 0.7)),
                                            ('saddleaniso', (-0.2, 0.5))])
    def test_second_partials_match_finite_differences(self, name, point):
        function = get_function(name)
        analytic = np.asarray(function.partials(*point, 2))
        numeric = second_partials(function.value, *point)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-4, atol=1e-4 * np.abs(analytic).max())

    def test_domains(self):
        assert get_function('bump').domain().area() == pytest.approx(4.0)
        assert get_function('saddleaniso').domain().area() == pytest.approx(2.0)
        assert get_function('isoquad').domain().is_rectangle()

    def test_taylor_form_of_cubic(self):
        pi = get_function('cubsum', 3).field().taylor_form((0.3, 0.6), 3)
        assert pi.coeffs == pytest.approx((1.0, 0.0, 0.0, 1.0))

    def test_bump_has_no_analytic_third_derivative(self):
        assert get_function('bump').weighted_derivative(0.0, 0.0, 3) is None

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_degenerate_is_null_form(self, m):
        function = degenerate_function(m)
        weighted = function.weighted_derivative(0.5, 0.5, m)
        expected = np.zeros(m + 1)
        expected[0] = 1.0
        np.testing.assert_allclose(weighted, expected)
        assert function.supports(m) and not function.supports(m + 1)
        assert function.value(2.0, 7.0) == pytest.approx(2.0 ** m)

    def test_degree_support(self):
        supported = {f.name for f in corpus(3) if f.supports(3)}
        assert supported == {'cubsum', 'cubaniso', 'bump', 'saddleaniso', 'degen'}
