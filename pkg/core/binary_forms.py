"""
Homogeneous binary forms: evaluation, composition with linear maps, the
det/disc invariants, roots and multiplicity tests.

Coefficients are stored in descending powers of x: ``coeffs[i]`` multiplies
``x**(m - i) * y**i``. The text token ``"3:1,0,-3,0"`` is x^3 - 3xy^2.
"""
import logging
from dataclasses import dataclass
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Two roots closer than this on the Riemann sphere are the same root.
DEFAULT_MULTIPLICITY_TOL = 1e-6

_EPS = np.finfo(float).eps


class FormError(Exception):
    """Custom exception for binary form errors."""
    pass


@dataclass(frozen=True)
class HomogeneousForm:
    """A binary form of degree m, immutable."""

    coeffs: Tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) < 2:
            raise FormError("A binary form needs degree >= 1 (at least two coefficients)")
        if not all(np.isfinite(coeffs)):
            raise FormError(f"Non-finite coefficient in {coeffs}")
        object.__setattr__(self, 'coeffs', coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def parse(cls, token: str) -> 'HomogeneousForm':
        """Parse an ``"m:a0,a1,...,am"`` token."""
        try:
            head, body = token.strip().split(':', 1)
            m = int(head)
            coeffs = [float(part) for part in body.split(',')]
        except ValueError:
            raise FormError(f"Malformed form token {token!r}; expected 'm:a0,...,am'")
        if m < 1 or len(coeffs) != m + 1:
            raise FormError(f"Form token {token!r} must list exactly m+1={m + 1} coefficients")
        return cls(tuple(coeffs))

    def to_token(self) -> str:
        return f"{self.degree}:" + ",".join(f"{c:.17g}" for c in self.coeffs)

    def as_array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=float)

    def is_zero(self) -> bool:
        return not any(self.coeffs)

    def scaled(self, factor: float) -> 'HomogeneousForm':
        return HomogeneousForm(tuple(factor * c for c in self.coeffs))

    def __call__(self, x, y):
        return evaluate(self, np.stack(np.broadcast_arrays(x, y), axis=-1))

    def __str__(self):
        return self.to_token()


@dataclass(frozen=True)
class RootSet:
    """Factorization pi = leading * y**divisible_by_y * prod(x - r_i y)."""

    leading: float
    roots: Tuple[complex, ...]
    divisible_by_y: int

    @property
    def degree(self) -> int:
        return len(self.roots) + self.divisible_by_y

    def reconstruct(self) -> HomogeneousForm:
        monic = np.poly(np.array(self.roots, dtype=complex)) if self.roots else np.ones(1)
        tail = np.real_if_close(self.leading * monic, tol=1e6).real
        coeffs = np.concatenate([np.zeros(self.divisible_by_y), tail])
        return HomogeneousForm(tuple(coeffs))

    def sphere_points(self) -> np.ndarray:
        """Roots as points on the unit Riemann sphere (infinity = north pole)."""
        points = [_to_sphere(r) for r in self.roots]
        points.extend([np.array([0.0, 0.0, 1.0])] * self.divisible_by_y)
        return np.array(points).reshape(-1, 3)

    def clusters(self, tol: float = DEFAULT_MULTIPLICITY_TOL) -> List[List[int]]:
        """Group roots (index len(roots)+k for the k-th root at infinity)."""
        return _cluster_sphere_points(self.sphere_points(), tol)

    def clustered(self, tol: float = DEFAULT_MULTIPLICITY_TOL) -> 'RootSet':
        """Snap each multiple-root cluster to its centroid.

        Eigenvalue solvers split an exact k-fold root into k roots a distance
        ~eps**(1/k) apart; the centroid is accurate to ~eps.
        """
        n_finite = len(self.roots)
        roots = list(self.roots)
        extra_infinite = 0
        for group in self.clusters(tol):
            if len(group) < 2:
                continue
            finite = [i for i in group if i < n_finite]
            if len(finite) < len(group):
                # cluster contains an exact root at infinity: push the finite
                # members there too
                for i in finite:
                    roots[i] = None
                extra_infinite += len(finite)
                continue
            center = complex(np.mean([self.roots[i] for i in finite]))
            if abs(center.imag) <= 1e3 * _EPS * max(1.0, abs(center)):
                center = complex(center.real, 0.0)
            for i in finite:
                roots[i] = center
        kept = tuple(r for r in roots if r is not None)
        return RootSet(self.leading, kept, self.divisible_by_y + extra_infinite)


def _to_sphere(r: complex) -> np.ndarray:
    r = complex(r)
    n2 = abs(r) ** 2
    return np.array([2 * r.real, 2 * r.imag, n2 - 1.0]) / (n2 + 1.0)


def _cluster_radius(k: int, tol: float) -> float:
    return max(tol, 16.0 * _EPS ** (1.0 / k))


def _cluster_sphere_points(points: np.ndarray, tol: float) -> List[List[int]]:
    """Greedy largest-first clustering; chordal distance = euclidean/2."""
    n = len(points)
    unassigned = list(range(n))
    groups: List[List[int]] = []
    while unassigned:
        best: List[int] = [unassigned[0]]
        sub = points[unassigned]
        for k in range(len(unassigned), 1, -1):
            found = None
            for seed in range(len(unassigned)):
                dist = np.linalg.norm(sub - sub[seed], axis=1)
                members = np.argsort(dist, kind='stable')[:k]
                center = sub[members].mean(axis=0)
                spread = np.max(np.linalg.norm(sub[members] - center, axis=1)) / 2.0
                if spread <= _cluster_radius(k, tol):
                    found = [unassigned[i] for i in sorted(members)]
                    break
            if found:
                best = found
                break
        groups.append(best)
        unassigned = [i for i in unassigned if i not in best]
    return groups


def _as_map(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (2, 2) or not np.all(np.isfinite(phi)):
        raise FormError(f"Expected a finite 2x2 linear map, got shape {phi.shape}")
    return phi


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def evaluate(pi: HomogeneousForm, z) -> np.ndarray:
    """Horner evaluation at a point or an array of points of shape (..., 2)."""
    z = np.asarray(z, dtype=float)
    x, y = z[..., 0], z[..., 1]
    coeffs = pi.coeffs
    result = np.full(x.shape, coeffs[0])
    ypow = np.ones_like(y)
    for c in coeffs[1:]:
        ypow = ypow * y
        result = result * x + c * ypow
    return result if result.ndim else float(result)


def _linear_powers(a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    # coefficients in t of (a + b t)**k for k = 0..m, shape (n, m+1, m+1)
    out = np.zeros((a.shape[0], m + 1, m + 1))
    out[:, 0, 0] = 1.0
    for k in range(1, m + 1):
        out[:, k, :] = a[:, None] * out[:, k - 1, :]
        out[:, k, 1:] += b[:, None] * out[:, k - 1, :-1]
    return out


def compose_many(coeffs: Sequence[float], phis) -> np.ndarray:
    """Coefficients of pi o phi for a batch of maps, shape (n, m+1).

    With t = y/x, pi(phi(x, y)) = x**m * sum_i c_i (p + q t)**(m-i) (r + s t)**i.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    phis = np.asarray(phis, dtype=float).reshape(-1, 2, 2)
    m = coeffs.shape[0] - 1
    px = _linear_powers(phis[:, 0, 0], phis[:, 0, 1], m)
    py = _linear_powers(phis[:, 1, 0], phis[:, 1, 1], m)
    out = np.zeros((phis.shape[0], m + 1))
    for i, c in enumerate(coeffs):
        if c == 0.0:
            continue
        a = px[:, m - i, :]
        b = py[:, i, :]
        for l in range(m + 1):
            out[:, l:] += c * a[:, l:l + 1] * b[:, :m + 1 - l]
    return out


def compose(pi: HomogeneousForm, phi) -> HomogeneousForm:
    """pi o phi, i.e. z -> pi(phi z)."""
    phi = _as_map(phi)
    return HomogeneousForm(tuple(compose_many(pi.coeffs, phi[None])[0]))


def coeff_norm(pi: HomogeneousForm) -> float:
    return float(np.max(np.abs(pi.coeffs)))


def det2(pi: HomogeneousForm) -> float:
    """ac - b^2 for pi = a x^2 + 2b xy + c y^2."""
    if pi.degree != 2:
        raise FormError(f"det2 needs a quadratic form, got degree {pi.degree}")
    a, two_b, c = pi.coeffs
    return a * c - (two_b / 2.0) ** 2


def disc3(pi: HomogeneousForm) -> float:
    """Discriminant of a x^3 + b x^2 y + c x y^2 + d y^3 (plain coefficients)."""
    if pi.degree != 3:
        raise FormError(f"disc3 needs a cubic form, got degree {pi.degree}")
    a, b, c, d = pi.coeffs
    return (b * b * c * c - 4 * a * c ** 3 - 4 * b ** 3 * d
            + 18 * a * b * c * d - 27 * a * a * d * d)


def roots(pi: HomogeneousForm) -> RootSet:
    """Factor pi through the companion matrix of its dehomogenization."""
    if pi.is_zero():
        raise FormError("roots() of the zero form")
    coeffs = np.asarray(pi.coeffs)
    scale = np.max(np.abs(coeffs))
    k = 0
    while abs(coeffs[k]) <= 1e-14 * scale:
        k += 1
    remaining = coeffs[k:]
    leading = float(remaining[0])
    found = np.roots(remaining) if remaining.shape[0] > 1 else np.array([], dtype=complex)
    found = np.sort_complex(found.astype(complex))
    return RootSet(leading, tuple(complex(r) for r in found), k)


def multiplicity_class(pi: HomogeneousForm, tol: float = DEFAULT_MULTIPLICITY_TOL) -> int:
    """Size of the largest cluster of (projective) roots."""
    return max(len(group) for group in roots(pi).clusters(tol))


def vanishing_order(m: int) -> int:
    """s_m = floor(m/2) + 1, the root multiplicity that kills the shape function."""
    return m // 2 + 1


def is_null_form(pi: HomogeneousForm, tol: float = DEFAULT_MULTIPLICITY_TOL) -> bool:
    if pi.is_zero():
        return True
    return multiplicity_class(pi, tol) >= vanishing_order(pi.degree)


def from_weighted(weighted: Sequence[float]) -> HomogeneousForm:
    """Plain coefficients from binomial weights: c_i = C(m, i) w_i.

    Covers d^m f/m! given w_i = d^m f/dx^(m-i)dy^i / m!, and the
    a x^3 + 3b x^2y + 3c xy^2 + d y^3 convention.
    """
    weighted = np.asarray(weighted, dtype=float)
    m = weighted.shape[-1] - 1
    return HomogeneousForm(tuple(comb(m, i) * weighted[i] for i in range(m + 1)))


def to_weighted(pi: HomogeneousForm) -> np.ndarray:
    m = pi.degree
    return np.array([c / comb(m, i) for i, c in enumerate(pi.coeffs)])


def from_derivatives(partials: Sequence[float]) -> HomogeneousForm:
    """d^m f/m! from the m-th partials [f_x..x, f_x..xy, ..., f_y..y]."""
    partials = np.asarray(partials, dtype=float)
    m = partials.shape[-1] - 1
    return from_weighted(partials / float(np.prod(np.arange(1, m + 1))))


def random_form(rng: np.random.Generator, m: int, scale: float = 1.0) -> HomogeneousForm:
    return HomogeneousForm(tuple(rng.uniform(-scale, scale, size=m + 1)))


def linear_factor_power(alpha: float, beta: float, k: int) -> HomogeneousForm:
    """(alpha x + beta y)**k."""
    return HomogeneousForm(tuple(comb(k, i) * alpha ** (k - i) * beta ** i for i in range(k + 1)))


def multiply(pi: HomogeneousForm, other: HomogeneousForm) -> HomogeneousForm:
    return HomogeneousForm(tuple(np.convolve(pi.coeffs, other.coeffs)))


def unit_circle_profile(pi: HomogeneousForm, n: int,
                        start: float = 0.0, span: float = np.pi) -> Tuple[np.ndarray, np.ndarray]:
    """Angles and |pi(cos t, sin t)| on n equispaced angles of [start, start+span)."""
    theta = start + span * np.arange(n) / n
    values = np.abs(evaluate(pi, np.stack([np.cos(theta), np.sin(theta)], axis=-1)))
    return theta, values


def nonvanishing_rotation(pi: HomogeneousForm) -> Optional[np.ndarray]:
    """A rotation R with |(pi o R)(1, 0)| not small, or None when pi(1,0) is fine."""
    scale = coeff_norm(pi)
    if abs(pi.coeffs[0]) > 1e-3 * scale:
        return None
    theta, values = unit_circle_profile(pi, 64)
    angle = theta[int(np.argmax(values))]
    return rotation(angle)
