"""
Test functions with analytic derivative data for convergence studies.
"""
import logging
from dataclasses import dataclass
from math import factorial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.lagrange import ScalarField
from core.meshgen import Polygon

logger = logging.getLogger(__name__)

UNIT_SQUARE = (0.0, 0.0, 1.0, 1.0)


class StudyError(Exception):
    """Custom exception for corpus and convergence study errors."""
    pass


Partials = Callable[[float, float, int], Optional[Sequence[float]]]


@dataclass(frozen=True)
class CorpusFunction:
    """A closed-form test function.

    ``partials(x, y, k)`` returns [d^k f/dx^k, d^k f/dx^(k-1)dy, ..., d^k f/dy^k]
    or None when no analytic expression is available for that order.
    """

    name: str
    formula: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    partials: Partials
    bounds: Tuple[float, float, float, float] = UNIT_SQUARE
    degrees: Tuple[int, ...] = (2, 3)

    def domain(self) -> Polygon:
        return Polygon.rectangle(*self.bounds)

    def weighted_derivative(self, x: float, y: float, m: int) -> Optional[np.ndarray]:
        found = self.partials(x, y, m)
        if found is None:
            return None
        return np.asarray(found, dtype=float) / factorial(m)

    def field(self) -> ScalarField:
        (xmin, ymin, xmax, ymax) = self.bounds
        step = 1e-3 * float(np.hypot(xmax - xmin, ymax - ymin))
        return ScalarField(self.value, self.weighted_derivative, name=self.name, fd_step=step)

    def supports(self, m: int) -> bool:
        return m in self.degrees


def _zeros(k: int) -> List[float]:
    return [0.0] * (k + 1)


def _isoquad(x, y, k):
    if k == 2:
        return [2.0, 0.0, 2.0]
    return _zeros(k) if k > 2 else None


def _saddle(x, y, k):
    if k == 2:
        return [2.0, 0.0, -2.0]
    return _zeros(k) if k > 2 else None


def _hyp(x, y, k):
    if k == 2:
        return [0.0, 1.0, 0.0]
    return _zeros(k) if k > 2 else None


def _cubsum(x, y, k):
    if k == 2:
        return [6.0 * x, 0.0, 6.0 * y]
    if k == 3:
        return [6.0, 0.0, 0.0, 6.0]
    return _zeros(k) if k > 3 else None


def _cubaniso(x, y, k):
    # x^3 - 3xy^2 + 0.2y^3
    if k == 2:
        return [6.0 * x, -6.0 * y, -6.0 * x + 1.2 * y]
    if k == 3:
        return [6.0, 0.0, -6.0, 1.2]
    return _zeros(k) if k > 3 else None


def _bump_value(x, y):
    return np.exp(-(4.0 * x) ** 2 - y ** 2)


def _bump(x, y, k):
    if k != 2:
        return None
    f = float(_bump_value(x, y))
    gx, gy = -32.0 * x, -2.0 * y
    return [(gx * gx - 32.0) * f, gx * gy * f, (gy * gy - 2.0) * f]


def _saddleaniso(x, y, k):
    # x^3 + 50y^2: the Hessian determinant changes sign across x = 0
    if k == 2:
        return [6.0 * x, 0.0, 100.0]
    if k == 3:
        return [6.0, 0.0, 0.0, 0.0]
    return _zeros(k) if k > 3 else None


def degenerate_function(m: int) -> CorpusFunction:
    """x^m, whose m-th derivative is the null form x^m everywhere."""

    def partials(x, y, k):
        if k > m:
            return _zeros(k)
        out = _zeros(k)
        out[0] = factorial(m) / factorial(m - k) * x ** (m - k)
        return out

    return CorpusFunction('degen', f'x^{m}', lambda x, y: np.asarray(x, dtype=float) ** m,
                          partials, degrees=(m,))


_FIXED = (
    CorpusFunction('isoquad', 'x^2+y^2', lambda x, y: x ** 2 + y ** 2, _isoquad, degrees=(2,)),
    CorpusFunction('saddle', 'x^2-y^2', lambda x, y: x ** 2 - y ** 2, _saddle, degrees=(2,)),
    CorpusFunction('hyp', 'xy', lambda x, y: x * y, _hyp, degrees=(2,)),
    CorpusFunction('cubsum', 'x^3+y^3', lambda x, y: x ** 3 + y ** 3, _cubsum),
    CorpusFunction('cubaniso', 'x^3-3xy^2+0.2y^3', lambda x, y: x ** 3 - 3 * x * y ** 2 + 0.2 * y ** 3, _cubaniso),
    CorpusFunction('bump', 'exp(-(4x)^2-y^2)', _bump_value, _bump, bounds=(-1.0, -1.0, 1.0, 1.0)),
    CorpusFunction('saddleaniso', 'x^3+50y^2', lambda x, y: x ** 3 + 50 * y ** 2, _saddleaniso,
                   bounds=(-1.0, 0.0, 1.0, 1.0)),
)


def corpus(m: int = 2) -> List[CorpusFunction]:
    """Every corpus entry, with 'degen' built for degree m."""
    return list(_FIXED) + [degenerate_function(m)]


def get_function(name: str, m: int = 2) -> CorpusFunction:
    for function in corpus(m):
        if function.name == name:
            return function
    names = ', '.join(f.name for f in corpus(m))
    raise StudyError(f"Unknown corpus function {name!r}; choose one of {names}")


def function_names() -> List[str]:
    return [f.name for f in corpus()]
