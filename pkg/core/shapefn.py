"""
The shape function K_{m,p}: the tempered oracle K_M, the closed forms for
m = 2, 3, the inscribed-ellipse variant K^E_m and the root-based invariant
equivalents for 2 <= m <= 5.
"""
import itertools
import logging
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, sqrt
from typing import Dict, List, Optional, Tuple

import numpy as np
from django.core.cache import cache
from scipy.optimize import minimize

from core.binary_forms import (
    HomogeneousForm,
    coeff_norm,
    compose,
    compose_many,
    det2,
    disc3,
    nonvanishing_rotation,
    roots,
    rotation,
    unit_circle_profile,
    DEFAULT_MULTIPLICITY_TOL,
)
from core.lagrange import DEFAULT_LATTICE, Triangle, form_residual_basis

logger = logging.getLogger(__name__)

EQ_SIDE = 2.0 * 3.0 ** -0.25
EQ_HEIGHT = EQ_SIDE * sqrt(3.0) / 2.0
EQ_DIAMETER = EQ_SIDE

# max eigenvalue ratio of an admissible inscribed ellipse
ELLIPSE_RATIO_CAP = 1e8

MAX_INVARIANT_DEGREE = 5


class ShapeError(Exception):
    """Custom exception for shape function errors."""
    pass


def equilateral_vertices() -> np.ndarray:
    """Unit-area equilateral triangle centred at 0, one vertex on the +y axis."""
    radius = EQ_SIDE / sqrt(3.0)
    angles = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def equilateral_triangle() -> Triangle:
    return Triangle(equilateral_vertices())


@dataclass(frozen=True)
class ShapeQuery:
    m: int
    p: float = 2.0
    cap: float = 16.0
    grid: Tuple[int, int, int] = (24, 24, 16)
    tol: float = 1e-6
    max_iter: int = 400
    lattice: int = DEFAULT_LATTICE
    starts: int = 3

    def __post_init__(self):
        object.__setattr__(self, 'p', float(self.p))
        object.__setattr__(self, 'grid', tuple(int(n) for n in self.grid))
        if self.m < 2:
            raise ShapeError(f"Shape functions need m >= 2, got {self.m}")
        if not 1.0 <= self.p <= np.inf:
            raise ShapeError(f"p must lie in [1, inf], got {self.p}")
        if self.cap < EQ_DIAMETER:
            raise ShapeError(f"Diameter cap {self.cap} is below the equilateral diameter {EQ_DIAMETER:.4f}")
        if min(self.grid) < 2 or self.max_iter < 1 or self.tol <= 0 or self.starts < 1:
            raise ShapeError("Optimizer budgets must be positive")

    @property
    def t_min(self) -> float:
        # diam(R diag(t, 1/t) R' T_eq) >= EQ_HEIGHT / t
        return min(1.0, EQ_HEIGHT / self.cap)

    @classmethod
    def from_config(cls, m: int, p: float, config, **overrides) -> 'ShapeQuery':
        values = dict(m=m, p=p, cap=config.shape_cap, grid=config.shape_grid, tol=config.shape_tol,
                      max_iter=config.shape_max_iter, lattice=config.lattice_samples)
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True, eq=False)
class ShapeResult:
    value: float
    triangle: Triangle
    cap: float
    converged: bool = True
    evaluations: int = 0
    phi: np.ndarray = field(default=None, repr=False)


class ReferenceNorm:
    """e_{T_eq}(pi) for batches of coefficient vectors.

    Uses e_{phi(T_eq)}(pi) = e_{T_eq}(pi o phi) for det(phi) = 1, so every
    triangle of the chart is measured on the same precomputed basis.
    """

    _instances: Dict[Tuple[int, float, int], 'ReferenceNorm'] = {}
    _lock = threading.Lock()

    def __init__(self, m: int, p: float, lattice: int = DEFAULT_LATTICE):
        self.m = m
        self.p = float(p)
        self.basis, self.weights = form_residual_basis(equilateral_triangle(), m, p, lattice)
        self.gram = None
        if self.p == 2.0:
            self.gram = self.basis.T @ (self.weights[:, None] * self.basis)

    @classmethod
    def get(cls, m: int, p: float, lattice: int = DEFAULT_LATTICE) -> 'ReferenceNorm':
        key = (m, float(p), lattice)
        with cls._lock:
            if key not in cls._instances:
                cls._instances[key] = cls(m, p, lattice)
            return cls._instances[key]

    def __call__(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.atleast_2d(coeffs)
        if self.gram is not None:
            quad = np.einsum('ni,ij,nj->n', coeffs, self.gram, coeffs)
            return np.sqrt(np.maximum(quad, 0.0))
        out = np.empty(coeffs.shape[0])
        block = max(1, (1 << 21) // self.basis.shape[0])
        for start in range(0, coeffs.shape[0], block):
            residual = np.abs(coeffs[start:start + block] @ self.basis.T)
            if np.isinf(self.p):
                out[start:start + block] = residual.max(axis=1)
            else:
                out[start:start + block] = (residual ** self.p @ self.weights) ** (1.0 / self.p)
        return out


def chart_maps(theta1, theta2, t) -> np.ndarray:
    """R(theta1) diag(t, 1/t) R(theta2), broadcast over the inputs."""
    theta1, theta2, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (theta1, theta2, t)))
    c1, s1, c2, s2 = np.cos(theta1), np.sin(theta1), np.cos(theta2), np.sin(theta2)
    inv = 1.0 / t
    out = np.empty(theta1.shape + (2, 2))
    out[..., 0, 0] = c1 * t * c2 - s1 * inv * s2
    out[..., 0, 1] = -c1 * t * s2 - s1 * inv * c2
    out[..., 1, 0] = s1 * t * c2 + c1 * inv * s2
    out[..., 1, 1] = -s1 * t * s2 + c1 * inv * c2
    return out


def _diameters(phis: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    pts = np.einsum('nij,kj->nki', phis, vertices)
    edges = pts - np.roll(pts, 1, axis=1)
    return np.sqrt(np.max(np.sum(edges ** 2, axis=-1), axis=1))


def shape_oracle(pi: HomogeneousForm, query: ShapeQuery = None) -> ShapeResult:
    """K_M(pi): min of e_T(pi)_p over unit-area triangles with diam <= M."""
    query = query or ShapeQuery(m=pi.degree)
    if query.m != pi.degree:
        raise ShapeError(f"Query degree {query.m} does not match form degree {pi.degree}")
    if pi.is_zero():
        raise ShapeError("Shape oracle called on the zero form")
    return _cached_oracle(pi.coeffs, query)


@lru_cache(maxsize=4096)
def _cached_oracle(coeffs: Tuple[float, ...], query: ShapeQuery) -> ShapeResult:
    norm = ReferenceNorm.get(query.m, query.p, query.lattice)
    vertices = equilateral_vertices()
    cap = query.cap * (1 + 1e-12)

    n1, n2, n3 = query.grid
    theta1 = np.pi * np.arange(n1) / n1
    theta2 = (np.pi / 3) * np.arange(n2) / n2
    log_t = np.linspace(np.log(query.t_min), 0.0, n3)
    g1, g2, g3 = np.meshgrid(theta1, theta2, log_t, indexing='ij')
    phis = chart_maps(g1.ravel(), g2.ravel(), np.exp(g3.ravel()))

    values = norm(compose_many(coeffs, phis))
    values[_diameters(phis, vertices) > cap] = np.inf
    evaluations = values.shape[0]

    order = np.argsort(values, kind='stable')
    best_grid = float(values[order[0]])
    if not np.isfinite(best_grid):
        raise ShapeError(f"No grid triangle satisfies the diameter cap {query.cap}")
    scale = max(best_grid, 1e-300)

    def objective(x):
        phi = chart_maps(x[0], x[1], np.exp(x[2]))[None]
        value = float(norm(compose_many(coeffs, phi))[0])
        excess = float(_diameters(phi, vertices)[0]) / query.cap - 1.0
        if excess > 1e-12:
            return value + scale * (1.0 + 10.0 * excess)
        return value

    best_x = np.array([g1.ravel()[order[0]], g2.ravel()[order[0]], g3.ravel()[order[0]]])
    best_value = best_grid
    converged = True
    starts = []
    for idx in order:
        if len(starts) >= query.starts or not np.isfinite(values[idx]):
            break
        x0 = np.array([g1.ravel()[idx], g2.ravel()[idx], g3.ravel()[idx]])
        if all(np.linalg.norm(x0 - s) > 1e-9 for s in starts):
            starts.append(x0)

    for x0 in starts:
        result = minimize(objective, x0, method='Nelder-Mead',
                          options={'xatol': query.tol, 'fatol': query.tol * scale,
                                   'maxiter': query.max_iter, 'maxfev': 4 * query.max_iter})
        evaluations += int(result.nfev)
        if result.nit >= query.max_iter or result.nfev >= 4 * query.max_iter:
            converged = False
        if result.fun < best_value:
            phi = chart_maps(result.x[0], result.x[1], np.exp(result.x[2]))
            if _diameters(phi[None], vertices)[0] <= cap:
                best_value, best_x = float(result.fun), result.x

    if not converged:
        logger.warning(f"Shape oracle budget exhausted for {coeffs} (p={query.p}, cap={query.cap}); "
                       f"returning best value {best_value:.6g}")

    phi = chart_maps(best_x[0], best_x[1], np.exp(best_x[2]))
    triangle = Triangle(vertices @ phi.T)
    logger.debug(f"Oracle {coeffs} p={query.p} cap={query.cap}: K_M={best_value:.8g} "
                 f"after {evaluations} evaluations")
    return ShapeResult(best_value, triangle, query.cap, converged, evaluations, phi)


def normal_form(m: int, sign: int) -> HomogeneousForm:
    """x^2 +- y^2 (sign of det) or x(x^2 -+ 3y^2) (sign of disc)."""
    if m == 2:
        return HomogeneousForm((1.0, 0.0, 1.0 if sign > 0 else -1.0))
    if m == 3:
        return HomogeneousForm((1.0, 0.0, -3.0 if sign > 0 else 3.0, 0.0))
    raise ShapeError(f"Normal forms exist for m in (2, 3), got {m}")


# e(x^2+y^2) on the equilateral triangle is 3R^2 (l1 l2 + l1 l3 + l2 l3) in barycentrics
_CLOSED_FORM_SIGMA = {
    (2, 1.0, 1): 1.0 / sqrt(3.0),
    (2, 2.0, 1): 4.0 / (3.0 * sqrt(5.0)),
    (2, np.inf, 1): 4.0 / (3.0 * sqrt(3.0)),
}


class SigmaTable:
    """sigma_p(sign) for m = 2 and sigma*_p(sign) for m = 3.

    Entries are computed once by the oracle on the normal forms, under a lock,
    and cached in the Django cache; a few m = 2 entries have closed forms.
    """

    def __init__(self, cap: float = 16.0, grid: Tuple[int, int, int] = (24, 24, 16),
                 lattice: int = DEFAULT_LATTICE):
        self.cap = cap
        self.grid = tuple(grid)
        self.lattice = lattice
        self._lock = threading.Lock()
        self._values: Dict[Tuple[int, float, int], float] = {}
        self._provenance: Dict[Tuple[int, float, int], str] = {}
        for key, value in _CLOSED_FORM_SIGMA.items():
            self._values[key] = value
            self._provenance[key] = 'closed-form integral on the equilateral triangle'

    def _cache_key(self, key) -> str:
        m, p, sign = key
        return f"sigma:{m}:{p}:{sign}:{self.cap}:{'x'.join(map(str, self.grid))}:{self.lattice}"

    def seed(self, m: int, p: float, sign: int, value: float, provenance: str) -> None:
        if value <= 0:
            raise ShapeError(f"Sigma constants are positive, got {value}")
        with self._lock:
            self._values[(m, float(p), int(sign))] = float(value)
            self._provenance[(m, float(p), int(sign))] = provenance

    def get(self, m: int, p: float, sign: int) -> float:
        key = (m, float(p), 1 if sign > 0 else -1)
        if m not in (2, 3):
            raise ShapeError(f"Sigma constants exist for m in (2, 3), got {m}")
        with self._lock:
            if key in self._values:
                return self._values[key]
            value = cache.get(self._cache_key(key))
            provenance = 'django cache'
            if value is None:
                value = self._compute(key)
                provenance = f"oracle cap={self.cap} grid={self.grid}"
                cache.set(self._cache_key(key), value, None)
            self._values[key] = value
            self._provenance[key] = provenance
            return value

    def _compute(self, key) -> float:
        m, p, sign = key
        query = ShapeQuery(m=m, p=p, cap=self.cap, grid=self.grid, lattice=self.lattice)
        value = shape_oracle(normal_form(m, sign), query).value
        if m == 3:
            value *= 108.0 ** -0.25
        logger.info(f"Computed sigma m={m} p={p} sign={sign:+d}: {value:.10g}")
        return value

    def provenance(self, m: int, p: float, sign: int) -> Optional[str]:
        return self._provenance.get((m, float(p), 1 if sign > 0 else -1))

    def entries(self) -> List[Tuple[int, float, int, float, str]]:
        with self._lock:
            return [(m, p, s, v, self._provenance[(m, p, s)]) for (m, p, s), v in sorted(self._values.items())]


_default_table: Optional[SigmaTable] = None
_default_lock = threading.Lock()


def default_sigma_table() -> SigmaTable:
    global _default_table
    with _default_lock:
        if _default_table is None:
            from core.utils import RunConfig
            config = RunConfig.from_settings()
            _default_table = SigmaTable(config.shape_cap, config.shape_grid, config.lattice_samples)
        return _default_table


def sigma_constants(m: int, p: float, table: SigmaTable = None) -> Dict[int, float]:
    """{+1: sigma_p(+), -1: sigma_p(-)} (starred constants for m = 3)."""
    table = table or default_sigma_table()
    return {sign: table.get(m, p, sign) for sign in (1, -1)}


def shape_closed(pi: HomogeneousForm, p: float, table: SigmaTable = None) -> float:
    """sigma_p(det) sqrt|det| for m = 2, sigma*_p(disc) |disc|^(1/4) for m = 3."""
    table = table or default_sigma_table()
    norm = coeff_norm(pi)
    if pi.degree == 2:
        invariant = det2(pi)
        if abs(invariant) <= 1e-14 * norm ** 2:
            return 0.0
        return table.get(2, p, int(np.sign(invariant))) * sqrt(abs(invariant))
    if pi.degree == 3:
        invariant = disc3(pi)
        if abs(invariant) <= 1e-13 * norm ** 4:
            return 0.0
        return table.get(3, p, int(np.sign(invariant))) * abs(invariant) ** 0.25
    raise ShapeError(f"Closed forms exist for m in (2, 3), got {pi.degree}")


@dataclass(frozen=True, eq=False)
class EllipseResult:
    """Largest ellipse {<Hz,z> <= 1} inside {|pi| <= 1}."""

    matrix: np.ndarray
    area: float
    value: float
    unbounded: bool


def _ellipse_support(theta, rho, cos_d, sin_d):
    # <H0 u, u> for H0 = R(theta) diag(e^rho, e^-rho) R(theta)^T
    theta = np.asarray(theta, dtype=float)[..., None]
    rho = np.asarray(rho, dtype=float)[..., None]
    along = cos_d * np.cos(theta) + sin_d * np.sin(theta)
    across = -cos_d * np.sin(theta) + sin_d * np.cos(theta)
    return np.exp(rho) * along ** 2 + np.exp(-rho) * across ** 2


def maximal_ellipse(pi: HomogeneousForm, directions: int = 720, floor: float = 0.0) -> EllipseResult:
    """Maximize |E| subject to <Hu,u> >= |pi(u)|^(2/m) on sampled directions.

    With ``floor`` > 0 the ellipse must also satisfy H >= floor * Id.

    For fixed shape H0 (det 1) the best scaling is F = max g/<H0u,u>, so
    |E| = pi/F and only (angle, log-ratio) are searched.
    """
    if pi.is_zero() and floor <= 0:
        raise ShapeError("Maximal ellipse of the zero form is the whole plane")
    m = pi.degree
    angles, values = unit_circle_profile(pi, directions)
    target = values ** (2.0 / m)
    cos_d, sin_d = np.cos(angles), np.sin(angles)
    rho_max = 0.5 * np.log(ELLIPSE_RATIO_CAP)

    def scale(theta, rho):
        fitted = np.max(target / _ellipse_support(theta, rho, cos_d, sin_d), axis=-1)
        return np.maximum(fitted, floor * np.exp(np.asarray(rho)))

    grid_theta = np.pi * np.arange(90) / 90
    grid_rho = np.linspace(0.0, rho_max, 64)
    gt, gr = np.meshgrid(grid_theta, grid_rho, indexing='ij')
    coarse = scale(gt.ravel(), gr.ravel())
    order = np.argsort(coarse, kind='stable')[:3]

    best = (float(coarse[order[0]]), float(gt.ravel()[order[0]]), float(gr.ravel()[order[0]]))

    def objective(x):
        rho = min(abs(x[1]), rho_max)
        return float(scale(x[0], rho))

    for idx in order:
        x0 = np.array([gt.ravel()[idx], gr.ravel()[idx]])
        result = minimize(objective, x0, method='Nelder-Mead',
                          options={'xatol': 1e-10, 'fatol': 1e-13, 'maxiter': 2000})
        if result.fun < best[0]:
            best = (float(result.fun), float(result.x[0]), min(abs(float(result.x[1])), rho_max))

    factor, theta, rho = best
    unbounded = rho >= rho_max * (1 - 1e-3)
    if unbounded:
        logger.warning(f"Inscribed ellipse for {pi} hits the eigenvalue ratio cap {ELLIPSE_RATIO_CAP:g}")
    rot = rotation(theta)
    matrix = factor * rot @ np.diag([np.exp(rho), np.exp(-rho)]) @ rot.T
    area = np.pi / factor
    return EllipseResult(matrix, area, area ** (-m / 2.0), unbounded)


def shape_ellipse(pi: HomogeneousForm, directions: int = 720) -> float:
    """K^E_m(pi) = (sup |E|)^(-m/2)."""
    return maximal_ellipse(pi, directions).value


def overfitting_report(t: float, directions: int = 720) -> Dict[str, float]:
    """Measured vs predicted sup|E| for pi_t = x^2 y^2 + t y^4."""
    pi_t = HomogeneousForm((0.0, 0.0, 1.0, 0.0, t))
    measured = maximal_ellipse(pi_t, directions)
    disc_area = np.pi
    predicted = 2 * disc_area if t >= 0 else disc_area * sqrt(2 * (sqrt(2) + 1))
    return {
        't': t,
        'measured_area': measured.area,
        'predicted_area': predicted,
        'disc_inside': bool(np.all(unit_circle_profile(pi_t, directions)[1] <= 1 + 1e-12)),
        'unbounded': measured.unbounded,
    }


def _prepared_roots(pi: HomogeneousForm, tol: float):
    rot = nonvanishing_rotation(pi)
    if rot is not None:
        pi = compose(pi, rot)
    factored = roots(pi).clustered(tol)
    return factored.leading, np.array(factored.roots, dtype=complex)


def _cyclic_products(leading: float, found: np.ndarray) -> np.ndarray:
    m = found.shape[0]
    perms = np.array(list(itertools.permutations(range(m))), dtype=int)
    ordered = found[perms]
    diffs = ordered - np.roll(ordered, -1, axis=1)
    return leading ** 4 * np.prod(diffs ** 2, axis=1)


def invariant_Qd(pi: HomogeneousForm, d: int, tol: float = DEFAULT_MULTIPLICITY_TOL) -> float:
    """Q_d = sum over permutations of cyc(lambda, r_sigma)^d."""
    if pi.is_zero():
        raise ShapeError("Q_d of the zero form")
    if d < 1:
        raise ShapeError(f"Q_d needs d >= 1, got {d}")
    if pi.degree > MAX_INVARIANT_DEGREE + 1:
        raise ShapeError(f"Q_d enumerates m! permutations; degree {pi.degree} is too large")
    leading, found = _prepared_roots(pi, tol)
    total = complex(np.sum(_cyclic_products(leading, found) ** d))
    if abs(total.imag) > 1e-8 * abs(total) + 1e-300:
        logger.warning(f"Q_{d}({pi}) has imaginary residue {total.imag:.3g} against {abs(total):.3g}")
    return float(total.real)


def invariant_equiv(pi: HomogeneousForm, tol: float = DEFAULT_MULTIPLICITY_TOL) -> float:
    """K_eq(pi) = max_d |Q_d(pi/|pi|)|^(1/(4d)) * |pi|, d = 1..m!."""
    m = pi.degree
    if m < 2:
        raise ShapeError(f"Invariant equivalents need m >= 2, got {m}")
    if m > MAX_INVARIANT_DEGREE:
        raise ShapeError(f"Invariant equivalents are limited to m <= {MAX_INVARIANT_DEGREE}")
    norm = coeff_norm(pi)
    if norm == 0.0:
        return 0.0
    leading, found = _prepared_roots(pi.scaled(1.0 / norm), tol)
    cyc = _cyclic_products(leading, found)
    biggest = float(np.max(np.abs(cyc)))
    if biggest == 0.0:
        return 0.0
    ratios = cyc / biggest
    best = 0.0
    power = np.ones_like(ratios)
    for d in range(1, factorial(m) + 1):
        power = power * ratios
        best = max(best, abs(complex(np.sum(power))) ** (1.0 / (4 * d)))
    return best * biggest ** 0.25 * norm


def quartic_invariants(pi: HomogeneousForm) -> Tuple[float, float]:
    """(I, J) of a x^4 + 4b x^3y + 6c x^2y^2 + 4d xy^3 + e y^4."""
    if pi.degree != 4:
        raise ShapeError(f"I and J are quartic invariants, got degree {pi.degree}")
    c0, c1, c2, c3, c4 = pi.coeffs
    a, b, c, d, e = c0, c1 / 4, c2 / 6, c3 / 4, c4
    inv_i = a * e - 4 * b * d + 3 * c * c
    inv_j = float(np.linalg.det(np.array([[a, b, c], [b, c, d], [c, d, e]])))
    return inv_i, inv_j


def invariant_equiv4(pi: HomogeneousForm) -> float:
    """(|I|^3 + J^2)^(1/6)."""
    inv_i, inv_j = quartic_invariants(pi)
    return (abs(inv_i) ** 3 + inv_j ** 2) ** (1.0 / 6.0)
