"""
Optimal anisotropy metrics: the cubic normalization phi_pi, maximal
inscribed ellipses h_pi, their diameter-constrained versions h_{pi,alpha},
and the rescaled metric field h(z) used to drive mesh generation.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from core.binary_forms import (
    HomogeneousForm,
    coeff_norm,
    compose,
    det2,
    disc3,
    evaluate,
    multiplicity_class,
    nonvanishing_rotation,
    roots,
    rotation,
    unit_circle_profile,
)
from core.lagrange import ScalarField
from core.shapefn import maximal_ellipse, normal_form
from core.utils import write_csv_table

if TYPE_CHECKING:
    from core.meshgen import Polygon

logger = logging.getLogger(__name__)

FEASIBILITY_DIRECTIONS = 720
METRIC_COLUMNS = ['x', 'y', 'h11', 'h12', 'h22']
# minor-axis angles and offsets sampled by floor_active_ellipse
FLOOR_ANGLES = 180
FLOOR_OFFSETS = 720

REGIME_DISC = 'disc'
REGIME_TANGENT = 'tangent'
REGIME_QUADRI = 'quadri-tangent'
REGIME_OPTIMAL = 'optimal'


class MetricError(Exception):
    """Custom exception for metric construction errors."""
    pass


@dataclass(frozen=True)
class SymMetric2:
    """Symmetric 2x2 matrix H; E(H) = {z : <Hz, z> <= 1}."""

    h11: float
    h12: float
    h22: float

    def __post_init__(self):
        values = (float(self.h11), float(self.h12), float(self.h22))
        if not all(np.isfinite(values)):
            raise MetricError(f"Non-finite metric entries {values}")
        for name, value in zip(('h11', 'h12', 'h22'), values):
            object.__setattr__(self, name, value)
        trace = abs(values[0]) + abs(values[2])
        if self.eigenvalues()[0] < -1e-12 * max(trace, 1e-300):
            raise MetricError(f"Metric {values} is not positive semidefinite")

    @classmethod
    def from_matrix(cls, matrix) -> 'SymMetric2':
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix[0, 0], 0.5 * (matrix[0, 1] + matrix[1, 0]), matrix[1, 1])

    @classmethod
    def identity(cls, scale: float = 1.0) -> 'SymMetric2':
        return cls(scale, 0.0, scale)

    def matrix(self) -> np.ndarray:
        return np.array([[self.h11, self.h12], [self.h12, self.h22]])

    def det(self) -> float:
        return self.h11 * self.h22 - self.h12 * self.h12

    def trace(self) -> float:
        return self.h11 + self.h22

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix())

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues()[0])

    def area(self) -> float:
        det = self.det()
        return np.inf if det <= 0 else float(np.pi / np.sqrt(det))

    def diameter(self) -> float:
        low = self.min_eigenvalue()
        return np.inf if low <= 0 else float(2.0 / np.sqrt(low))

    def pullback(self, phi) -> 'SymMetric2':
        """phi^T H phi."""
        phi = np.asarray(phi, dtype=float)
        return SymMetric2.from_matrix(phi.T @ self.matrix() @ phi)

    def scaled(self, factor: float) -> 'SymMetric2':
        return SymMetric2(self.h11 * factor, self.h12 * factor, self.h22 * factor)

    def support(self, angles: np.ndarray) -> np.ndarray:
        c, s = np.cos(angles), np.sin(angles)
        return self.h11 * c * c + 2 * self.h12 * c * s + self.h22 * s * s

    def feasibility_margin(self, pi: HomogeneousForm, directions: int = FEASIBILITY_DIRECTIONS) -> float:
        """min over sampled u of <Hu,u> / |pi(u)|^(2/m); >= 1 means E(H) inside {|pi| <= 1}."""
        angles, values = unit_circle_profile(pi, directions)
        target = values ** (2.0 / pi.degree)
        support = self.support(angles)
        mask = target > 0
        if not np.any(mask):
            return np.inf
        return float(np.min(support[mask] / target[mask]))

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.h11, self.h12, self.h22)

    def __repr__(self):
        return f"SymMetric2({self.h11:.10g}, {self.h12:.10g}, {self.h22:.10g})"


@dataclass(frozen=True, eq=False)
class CubicNormalization:
    phi: np.ndarray
    disc_sign: int
    normal_form: HomogeneousForm
    residual: float


@dataclass(frozen=True, eq=False)
class RegimeThresholds:
    mu: float
    alpha_star: float
    beta: float
    U_pi: np.ndarray
    z_pi: np.ndarray

    def regime(self, alpha: float) -> str:
        if alpha >= self.mu:
            return REGIME_DISC
        if alpha >= self.alpha_star:
            return REGIME_TANGENT
        if alpha <= self.beta:
            return REGIME_OPTIMAL
        return REGIME_QUADRI


def _check_residual(pi: HomogeneousForm, phi: np.ndarray, target: HomogeneousForm, what: str) -> float:
    composed = np.array(compose(pi, phi).coeffs)
    residual = float(np.max(np.abs(composed - np.array(target.coeffs))))
    if residual > 1e-5:
        raise MetricError(f"{what} of {pi} failed: residual {residual:.3g}")
    if residual > 1e-8:
        logger.warning(f"{what} of {pi} is ill-conditioned: residual {residual:.3g}")
    return residual


def normalize_cubic(pi: HomogeneousForm) -> CubicNormalization:
    """phi with pi o phi = x(x^2 -+ 3y^2), built from the roots of pi."""
    if pi.degree != 3:
        raise MetricError(f"normalize_cubic needs a cubic, got degree {pi.degree}")
    disc = disc3(pi)
    if abs(disc) <= 1e-13 * coeff_norm(pi) ** 4:
        raise MetricError(f"Cubic {pi} has vanishing discriminant; use the constrained metric")
    sign = 1 if disc > 0 else -1

    rot = nonvanishing_rotation(pi)
    work = compose(pi, rot) if rot is not None else pi
    found = np.array(roots(work).roots, dtype=complex)

    if sign > 0:
        r1, r2, r3 = np.sort(found.real)
        phi0 = np.array([[r1 * (r2 + r3) - 2 * r2 * r3, np.sqrt(3) * r1 * (r2 - r3)],
                         [2 * r1 - (r2 + r3), np.sqrt(3) * (r2 - r3)]], dtype=complex)
    else:
        real_idx = int(np.argmin(np.abs(found.imag)))
        r1 = complex(found[real_idx].real, 0.0)
        pair = np.delete(found, real_idx)
        r2 = pair[np.argmax(pair.imag)]
        r3 = np.conj(r2)
        # second column times i; the entries are real
        phi0 = np.array([[r1 * (r2 + r3) - 2 * r2 * r3, 1j * np.sqrt(3) * r1 * (r2 - r3)],
                         [2 * r1 - (r2 + r3), 1j * np.sqrt(3) * (r2 - r3)]], dtype=complex)
    if np.max(np.abs(phi0.imag)) > 1e-8 * max(1.0, np.max(np.abs(phi0))):
        logger.warning(f"Normalization matrix of {pi} has imaginary part {np.max(np.abs(phi0.imag)):.3g}")
    phi0 = phi0.real

    kappa = compose(work, phi0).coeffs[0]
    phi = phi0 * np.cbrt(1.0 / kappa)
    if rot is not None:
        phi = rot @ phi

    target = normal_form(3, sign)
    residual = _check_residual(pi, phi, target, "Cubic normalization")
    return CubicNormalization(phi, sign, target, residual)


def normalize_double_root(pi: HomogeneousForm) -> np.ndarray:
    """phi with pi o phi = x^2 y for a cubic with exactly one double root."""
    if pi.degree != 3:
        raise MetricError(f"normalize_double_root needs a cubic, got degree {pi.degree}")
    rot = nonvanishing_rotation(pi)
    work = compose(pi, rot) if rot is not None else pi
    factored = roots(work).clustered()
    found = np.array(factored.roots, dtype=complex)
    values, counts = np.unique(np.round(found, 12), return_counts=True)
    if factored.divisible_by_y or sorted(counts) != [1, 2]:
        raise MetricError(f"Cubic {pi} does not have exactly one double root")
    r_double = values[np.argmax(counts)].real
    r_simple = values[np.argmin(counts)].real
    basis = np.array([[1.0, -r_double], [1.0, -r_simple]])
    phi = np.linalg.inv(basis) @ np.diag([1.0, 1.0 / factored.leading])
    if rot is not None:
        phi = rot @ phi
    _check_residual(pi, phi, HomogeneousForm((0.0, 1.0, 0.0, 0.0)), "Double-root normalization")
    return phi


def hmatrix2(pi: HomogeneousForm) -> SymMetric2:
    """U^T diag(|l1|, |l2|) U for the matrix [[a, b], [b, c]] of pi."""
    if pi.degree != 2:
        raise MetricError(f"hmatrix2 needs a quadratic form, got degree {pi.degree}")
    a, two_b, c = pi.coeffs
    eigvals, vectors = np.linalg.eigh(np.array([[a, two_b / 2], [two_b / 2, c]]))
    return SymMetric2.from_matrix(vectors @ np.diag(np.abs(eigvals)) @ vectors.T)


def hmatrix2_constrained(pi: HomogeneousForm, alpha: float) -> SymMetric2:
    if pi.degree != 2:
        raise MetricError(f"hmatrix2_constrained needs a quadratic form, got degree {pi.degree}")
    if alpha <= 0:
        raise MetricError(f"The diameter floor alpha must be positive, got {alpha}")
    a, two_b, c = pi.coeffs
    eigvals, vectors = np.linalg.eigh(np.array([[a, two_b / 2], [two_b / 2, c]]))
    return SymMetric2.from_matrix(vectors @ np.diag(np.maximum(np.abs(eigvals), alpha)) @ vectors.T)


def hmatrix3(pi: HomogeneousForm) -> SymMetric2:
    """(phi^-1)^T phi^-1, times 2^(1/3) when disc < 0."""
    normalization = normalize_cubic(pi)
    inv = np.linalg.inv(normalization.phi)
    h = inv.T @ inv
    if normalization.disc_sign < 0:
        h = 2.0 ** (1.0 / 3.0) * h
    return SymMetric2.from_matrix(h)


def _top_peaks(values: np.ndarray, count: int, periodic: bool = True) -> np.ndarray:
    """Indices of the largest local maxima of a sampled curve."""
    left, right = np.roll(values, 1), np.roll(values, -1)
    if not periodic:
        left[0], right[-1] = -np.inf, -np.inf
    peaks = np.flatnonzero((values >= left) & (values >= right))
    return peaks[np.argsort(values[peaks], kind='stable')[::-1][:count]]


def regime_thresholds(pi: HomogeneousForm, directions: int = FEASIBILITY_DIRECTIONS) -> RegimeThresholds:
    """mu_pi >= alpha_pi >= beta_pi for a cubic."""
    if pi.degree != 3:
        raise MetricError(f"regime_thresholds needs a cubic, got degree {pi.degree}")
    if pi.is_zero():
        raise MetricError("regime_thresholds of the zero form")

    def profile(theta):
        return abs(evaluate(pi, (np.cos(theta), np.sin(theta))))

    angles, values = unit_circle_profile(pi, directions)
    i = int(np.argmax(values))
    step = np.pi / directions
    refined = minimize_scalar(lambda t: -profile(t), bounds=(angles[i] - step, angles[i] + step),
                              method='bounded', options={'xatol': 1e-13})
    theta_star = float(refined.x) if -refined.fun >= values[i] else float(angles[i])
    peak = profile(theta_star)
    mu = peak ** (2.0 / 3.0)
    z_pi = np.array([np.cos(theta_star), np.sin(theta_star)]) / peak ** (1.0 / 3.0)
    U_pi = rotation(-theta_star)

    def quotient(psi):
        g = profile(theta_star + psi) ** (2.0 / 3.0)
        return (g - mu * np.cos(psi) ** 2) / np.sin(psi) ** 2

    edge = 1e-3
    psis = np.linspace(edge, np.pi - edge, directions)
    quotients = np.array([quotient(psi) for psi in psis])
    width = psis[1] - psis[0]
    alpha_star = max(0.0, float(quotients.max()))
    for j in _top_peaks(quotients, 3, periodic=False):
        lo, hi = max(edge, psis[j] - width), min(np.pi - edge, psis[j] + width)
        local = minimize_scalar(lambda s: -quotient(s), bounds=(lo, hi), method='bounded',
                                options={'xatol': 1e-13})
        alpha_star = max(alpha_star, -float(local.fun))

    disc = disc3(pi)
    beta = 0.0
    if abs(disc) > 1e-13 * coeff_norm(pi) ** 4:
        beta = hmatrix3(pi).min_eigenvalue()

    ordered_alpha = min(max(alpha_star, beta), mu)
    if abs(ordered_alpha - alpha_star) > 1e-6 * mu:
        logger.warning(f"Threshold ordering for {pi} adjusted alpha* {alpha_star:.8g} -> {ordered_alpha:.8g}")
    ordered_beta = min(beta, ordered_alpha)
    return RegimeThresholds(mu, ordered_alpha, ordered_beta, U_pi, z_pi)


def _family_polynomial(kind: str, A: np.ndarray) -> np.ndarray:
    a11, a12, a22 = A[0, 0], A[0, 1], A[1, 1]
    if kind == 'x2y':
        return np.array([-27 * a22, 27 * (a11 * a22 - a12 * a12), 4.0, -4 * a11])
    s = 1.0 if kind == 'negative' else -1.0
    return np.array([s, -3 * a22 - s * a11, 3 * (a11 * a22 - a12 * a12), 4.0, -4 * a11])


def _family_member(kind: str, lam: float) -> np.ndarray:
    if kind == 'x2y':
        return np.diag([lam, 4.0 / (27.0 * lam * lam)])
    if kind == 'negative':
        return np.diag([lam, (4.0 + lam ** 3) / (3.0 * lam * lam)])
    return np.diag([lam, (4.0 - lam ** 3) / (3.0 * lam * lam)])


_FAMILY_RANGE = {'negative': 2.0, 'positive': 1.0, 'x2y': np.inf}


def _quadri_tangent(pi: HomogeneousForm, alpha: float) -> Optional[SymMetric2]:
    """Largest quadri-tangent ellipse with H >= alpha Id, or None."""
    disc = disc3(pi)
    if abs(disc) > 1e-13 * coeff_norm(pi) ** 4:
        normalization = normalize_cubic(pi)
        phi = normalization.phi
        if normalization.disc_sign < 0:
            kind, rotations = 'negative', [np.eye(2)]
        else:
            kind, rotations = 'positive', [rotation(k * np.pi / 3) for k in range(3)]
    else:
        phi = normalize_double_root(pi)
        kind, rotations = 'x2y', [np.eye(2)]

    gram = phi.T @ phi
    upper = _FAMILY_RANGE[kind]
    best = None
    found = 0
    for V in rotations:
        A = alpha * V @ gram @ V.T
        tol = 1e-9 * max(1.0, float(np.max(np.abs(A))))
        for root in np.roots(_family_polynomial(kind, A)):
            if abs(root.imag) > 1e-9 * max(1.0, abs(root)):
                continue
            lam = float(root.real)
            if not 0.0 < lam <= upper * (1 + 1e-12):
                continue
            D = _family_member(kind, min(lam, upper))
            if np.linalg.eigvalsh(D - A)[0] < -tol:
                continue
            found += 1
            det = float(np.linalg.det(D))
            if best is None or det < best[0] * (1 - 1e-12):
                best = (det, V, D)
    if best is None:
        return None
    if kind == 'positive' and found < len(rotations):
        logger.debug(f"Only {found} of {len(rotations)} quadri-tangent candidates for {pi} at alpha={alpha:.6g}")
    _, V, D = best
    inv = np.linalg.inv(phi)
    return SymMetric2.from_matrix(inv.T @ V.T @ D @ V @ inv)


def floor_active_ellipse(pi: HomogeneousForm, alpha: float) -> SymMetric2:
    """Largest ellipse inside {|pi| <= 1} whose smallest eigenvalue is alpha.

    With H = a e e^T + alpha e' e'^T and e the minor axis at angle theta,
    E(H) lies in {|pi| <= 1} iff a cos^2 psi + alpha sin^2 psi >= |pi(u)|^(2/m)
    for u at angle theta + psi. So a(theta) is a sup over psi, and the
    optimum minimizes a(theta).
    """
    if alpha <= 0:
        raise MetricError(f"The diameter floor alpha must be positive, got {alpha}")
    exponent = 2.0 / pi.degree
    step = np.pi / FLOOR_OFFSETS
    offsets = -np.pi / 2 + step * (np.arange(FLOOR_OFFSETS) + 0.5)
    limit = np.pi / 2 - 1e-9

    def quotient(theta, psi):
        angles = theta + psi
        g = np.abs(evaluate(pi, np.stack([np.cos(angles), np.sin(angles)], axis=-1))) ** exponent
        return (g - alpha * np.sin(psi) ** 2) / np.cos(psi) ** 2

    def minor_eigenvalue(theta):
        values = quotient(theta, offsets)
        best = float(values.max())
        for k in _top_peaks(values, 3):
            lo, hi = max(-limit, offsets[k] - step), min(limit, offsets[k] + step)
            local = minimize_scalar(lambda s: -float(quotient(theta, np.array([s]))[0]), bounds=(lo, hi),
                                    method='bounded', options={'xatol': 1e-13})
            best = max(best, -float(local.fun))
        return max(best, alpha)

    thetas = np.pi * np.arange(FLOOR_ANGLES) / FLOOR_ANGLES
    coarse = quotient(thetas[:, None], offsets[None, :]).max(axis=1)
    width = np.pi / FLOOR_ANGLES
    best_theta, best_a = float(thetas[int(np.argmin(coarse))]), np.inf
    for k in _top_peaks(-coarse, 3):
        local = minimize_scalar(minor_eigenvalue, bounds=(thetas[k] - width, thetas[k] + width),
                                method='bounded', options={'xatol': 1e-12})
        if local.fun < best_a:
            best_theta, best_a = float(local.x), float(local.fun)
    if not np.isfinite(best_a):
        best_a = minor_eigenvalue(best_theta)

    e = np.array([np.cos(best_theta), np.sin(best_theta)])
    e_perp = np.array([-e[1], e[0]])
    return SymMetric2.from_matrix(best_a * np.outer(e, e) + alpha * np.outer(e_perp, e_perp))


def _is_feasible(h: SymMetric2, pi: HomogeneousForm, alpha: float) -> bool:
    return (h.min_eigenvalue() >= alpha * (1 - 1e-8)
            and h.feasibility_margin(pi) >= 1 - 1e-6)


def hmatrix3_constrained(pi: HomogeneousForm, alpha: float,
                         thresholds: RegimeThresholds = None) -> SymMetric2:
    """Largest ellipse inside {|pi| <= 1} with H >= alpha Id."""
    if pi.degree != 3:
        raise MetricError(f"hmatrix3_constrained needs a cubic, got degree {pi.degree}")
    if alpha <= 0:
        raise MetricError(f"The diameter floor alpha must be positive, got {alpha}")
    if pi.is_zero():
        return SymMetric2.identity(alpha)

    thresholds = thresholds or regime_thresholds(pi)
    regime = thresholds.regime(alpha)
    if regime == REGIME_DISC:
        return SymMetric2.identity(alpha)
    if regime == REGIME_TANGENT:
        U = thresholds.U_pi
        return SymMetric2.from_matrix(U.T @ np.diag([thresholds.mu, alpha]) @ U)
    if regime == REGIME_OPTIMAL:
        return hmatrix3(pi)

    closed = _quadri_tangent(pi, alpha)
    if closed is not None and not _is_feasible(closed, pi, alpha):
        closed = None
    searched = floor_active_ellipse(pi, alpha)
    if not _is_feasible(searched, pi, alpha):
        searched = None
    if closed is not None and (searched is None or closed.det() <= searched.det() * (1 + 1e-6)):
        return closed
    if searched is not None:
        if closed is not None:
            logger.debug(f"Quadri-tangent closed form for {pi} at alpha={alpha:.8g} is not minimal: "
                         f"det {closed.det():.10g} against {searched.det():.10g}")
        return searched
    logger.warning(f"No admissible quadri-tangent ellipse for {pi} at alpha={alpha:.8g} "
                   f"(mu={thresholds.mu:.6g}, alpha*={thresholds.alpha_star:.6g}, "
                   f"beta={thresholds.beta:.6g}); using the ellipse optimizer")
    fallback = maximal_ellipse(pi, FEASIBILITY_DIRECTIONS, floor=alpha)
    return SymMetric2.from_matrix(fallback.matrix)


def constrained_metric(pi: HomogeneousForm, alpha: float) -> SymMetric2:
    """h_{pi,alpha} for m = 2 or 3."""
    if pi.degree == 2:
        return hmatrix2_constrained(pi, alpha)
    if pi.degree == 3:
        return hmatrix3_constrained(pi, alpha)
    raise MetricError(f"Metrics are implemented for m in (2, 3), got {pi.degree}")


def alpha_scale(nu: float, area: float, m: int, p: float) -> float:
    """alpha_z = nu^(p/(mp+2)) |E_z|^(-1/(mp+2)); the p -> inf limit is nu^(1/m)."""
    if np.isinf(p):
        return nu ** (1.0 / m)
    return nu ** (p / (m * p + 2)) * area ** (-1.0 / (m * p + 2))


@dataclass
class MetricField:
    """z -> h(z) = alpha_z^-2 h_{pi_z, alpha_floor}."""

    field: ScalarField
    domain: 'Polygon'
    m: int
    p: float
    nu: float
    alpha_floor: float

    def __post_init__(self):
        if self.nu <= 0:
            raise MetricError(f"Target error nu must be positive, got {self.nu}")
        if self.m not in (2, 3):
            raise MetricError(f"Metric fields are implemented for m in (2, 3), got {self.m}")
        if self.alpha_floor <= 0:
            raise MetricError("alpha_floor must be positive for a bounded metric field")
        if self.domain.area() <= 0:
            raise MetricError("Metric field domain is empty")

    def local(self, z) -> Tuple[SymMetric2, float]:
        """(h_{pi_z, floor}, alpha_z) before rescaling."""
        pi_z = self.field.taylor_form(z, self.m)
        h = constrained_metric(pi_z, self.alpha_floor)
        return h, alpha_scale(self.nu, h.area(), self.m, self.p)

    def at(self, z) -> SymMetric2:
        h, alpha_z = self.local(z)
        return h.scaled(alpha_z ** -2)

    def sample(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.array([self.at(z).as_tuple() for z in points]).reshape(-1, 3)


def metric_field(f: ScalarField, domain: 'Polygon', m: int, p: float, nu: float,
                 alpha_floor: float = None) -> MetricField:
    """Metric field over domain; the default floor keeps diam(E) <= diam(domain)."""
    if alpha_floor is None:
        alpha_floor = 4.0 / domain.diameter() ** 2
    return MetricField(f, domain, m, p, nu, alpha_floor)


def grid_points(domain: 'Polygon', n: int) -> np.ndarray:
    """Nodes of an n x n grid over the bounding box that lie in the domain."""
    (xmin, ymin), (xmax, ymax) = domain.bounds()
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, n), np.linspace(ymin, ymax, n), indexing='xy')
    points = np.column_stack([gx.ravel(), gy.ravel()])
    return points[domain.contains(points)]


def write_metric_csv(path: str, points: np.ndarray, values: np.ndarray) -> None:
    records = ([f"{v:.17g}" for v in (x, y, h11, h12, h22)] for (x, y), (h11, h12, h22) in zip(points, values))
    count = write_csv_table(path, METRIC_COLUMNS, records)
    logger.info(f"Wrote {count} metric samples to {path}")
