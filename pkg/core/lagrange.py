"""
Lagrange interpolation of degree m-1 on triangles and the L^p interpolation
errors e_{m,T}(v)_p, e_{m,mesh}(v)_p.

All node systems are solved on the reference triangle (0,0),(1,0),(0,1), so
thin anisotropic triangles do not make the Vandermonde system singular.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d
from scipy.special import roots_jacobi, roots_legendre

from core.binary_forms import HomogeneousForm, from_derivatives, from_weighted, to_weighted

if TYPE_CHECKING:
    from core.meshgen import Mesh

logger = logging.getLogger(__name__)

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

DEFAULT_LATTICE = 64

# triangles per vectorized block in global_error
_BLOCK_ENTRIES = 1 << 20


class LagrangeError(Exception):
    """Custom exception for interpolation and quadrature errors."""
    pass


@dataclass(frozen=True, eq=False)
class Triangle:
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float).reshape(3, 2)
        if not np.all(np.isfinite(vertices)):
            raise LagrangeError("Triangle has non-finite vertices")
        object.__setattr__(self, 'vertices', vertices)
        extent = np.ptp(vertices, axis=0)
        if abs(self.signed_area) <= 1e-14 * float(extent @ extent):
            raise LagrangeError(f"Degenerate triangle {vertices.tolist()}")

    @property
    def signed_area(self) -> float:
        (x0, y0), (x1, y1), (x2, y2) = self.vertices
        return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))

    def area(self) -> float:
        return abs(self.signed_area)

    def barycenter(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def diameter(self) -> float:
        v = self.vertices
        return float(max(np.linalg.norm(v[i] - v[j]) for i, j in ((0, 1), (1, 2), (0, 2))))

    def jacobian(self) -> np.ndarray:
        """Columns are the edge vectors v1-v0 and v2-v0."""
        return (self.vertices[1:] - self.vertices[0]).T

    def from_reference(self, points) -> np.ndarray:
        return self.vertices[0] + np.asarray(points) @ self.jacobian().T

    def mapped(self, phi) -> 'Triangle':
        return Triangle(self.vertices @ np.asarray(phi, dtype=float).T)

    def translated(self, shift) -> 'Triangle':
        return Triangle(self.vertices + np.asarray(shift, dtype=float))

    def scaled(self, factor: float) -> 'Triangle':
        return Triangle(self.vertices * factor)

    def point_reflected(self, center) -> 'Triangle':
        return Triangle(2.0 * np.asarray(center, dtype=float) - self.vertices)

    def __repr__(self):
        return f"Triangle({self.vertices.tolist()})"


@dataclass(frozen=True, eq=False)
class Polynomial2:
    """sum coeffs[i, j] x^i y^j with i + j <= degree."""

    coeffs: np.ndarray
    degree: int

    def __post_init__(self):
        given = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        i, j = np.indices(given.shape)
        if np.any((i + j > self.degree) & (given != 0.0)):
            raise LagrangeError(f"Coefficient beyond total degree {self.degree}")
        table = np.zeros((self.degree + 1, self.degree + 1))
        rows, cols = min(given.shape[0], table.shape[0]), min(given.shape[1], table.shape[1])
        table[:rows, :cols] = given[:rows, :cols]
        object.__setattr__(self, 'coeffs', table)

    def __call__(self, x, y):
        return npoly.polyval2d(x, y, self.coeffs)

    def composed(self, phi) -> 'Polynomial2':
        """q o phi for a linear map phi."""
        phi = np.asarray(phi, dtype=float)
        xi = np.zeros((2, 2))
        xi[1, 0], xi[0, 1] = phi[0, 0], phi[0, 1]
        eta = np.zeros((2, 2))
        eta[1, 0], eta[0, 1] = phi[1, 0], phi[1, 1]
        return Polynomial2(_substitute(self.coeffs, xi, eta, self.degree), self.degree)


def _substitute(coeffs: np.ndarray, xi: np.ndarray, eta: np.ndarray, degree: int) -> np.ndarray:
    # sum coeffs[a, b] xi^a eta^b with xi, eta bivariate polynomial tables
    size = degree + 1
    xi_pows = [np.ones((1, 1))]
    eta_pows = [np.ones((1, 1))]
    for _ in range(degree):
        xi_pows.append(convolve2d(xi_pows[-1], xi))
        eta_pows.append(convolve2d(eta_pows[-1], eta))
    out = np.zeros((size, size))
    for a in range(size):
        for b in range(size - a):
            c = coeffs[a, b]
            if c == 0.0:
                continue
            term = convolve2d(xi_pows[a], eta_pows[b])
            r, s = min(term.shape[0], size), min(term.shape[1], size)
            out[:r, :s] += c * term[:r, :s]
    return out


@lru_cache(maxsize=None)
def _central_weights(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order central stencil (offsets, weights) for d^order/dx^order."""
    half = (order + 1) // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    system = np.vander(offsets, increasing=True).T
    rhs = np.zeros(offsets.shape[0])
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return offsets, np.linalg.solve(system, rhs)


@dataclass(frozen=True)
class ScalarField:
    """A callable v(x, y) with optional analytic m-th derivative data.

    ``weighted_derivative(x, y, m)`` returns the binomial weights
    w_i = d^m v / dx^(m-i) dy^i / m!, i = 0..m.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    weighted_derivative: Optional[Callable[[float, float, int], Sequence[float]]] = None
    name: str = 'v'
    fd_step: float = 1e-3

    def __call__(self, x, y):
        return self.value(x, y)

    def taylor_form(self, z, m: int) -> HomogeneousForm:
        """d^m v_z / m! in plain coefficients."""
        if self.weighted_derivative is not None:
            weights = self.weighted_derivative(float(z[0]), float(z[1]), m)
            if weights is not None:
                return from_weighted(weights)
        return self.finite_difference_form(z, m)

    def finite_difference_form(self, z, m: int, step: float = None) -> HomogeneousForm:
        h = self.fd_step if step is None else step
        x0, y0 = float(z[0]), float(z[1])
        partials = []
        for i in range(m + 1):
            ox, wx = _central_weights(m - i)
            oy, wy = _central_weights(i)
            gx, gy = np.meshgrid(x0 + ox * h, y0 + oy * h, indexing='ij')
            samples = np.asarray(self.value(gx, gy), dtype=float)
            partials.append(float(wx @ samples @ wy) / h ** m)
        return from_derivatives(partials)

    def composed(self, phi) -> 'ScalarField':
        phi = np.asarray(phi, dtype=float)

        def value(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
            return self.value(phi[0, 0] * x + phi[0, 1] * y, phi[1, 0] * x + phi[1, 1] * y)

        return ScalarField(value, None, f"{self.name}∘phi", self.fd_step)

    @classmethod
    def from_form(cls, pi: HomogeneousForm) -> 'ScalarField':
        weights = to_weighted(pi)

        def derivative(x, y, m):
            if m == pi.degree:
                return weights
            if m > pi.degree:
                return np.zeros(m + 1)
            raise LagrangeError(f"Only derivatives of order >= {pi.degree} are constant for {pi}")

        return cls(pi, derivative, name=pi.to_token())


@lru_cache(maxsize=None)
def _barycentric_indices(m: int) -> np.ndarray:
    n = m - 1
    rows = [(i, j, n - i - j) for i in range(n, -1, -1) for j in range(n - i, -1, -1)]
    return np.array(rows, dtype=int)


@lru_cache(maxsize=None)
def _monomial_exponents(degree: int) -> np.ndarray:
    return np.array([(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)], dtype=int)


def _monomials(points: np.ndarray, degree: int) -> np.ndarray:
    exps = _monomial_exponents(degree)
    return points[..., 0, None] ** exps[:, 0] * points[..., 1, None] ** exps[:, 1]


@lru_cache(maxsize=None)
def _reference_system(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Reference Lagrange nodes and the inverse of their Vandermonde matrix."""
    nodes = (_barycentric_indices(m) / (m - 1)) @ REFERENCE_VERTICES
    vandermonde = _monomials(nodes, m - 1)
    return nodes, np.linalg.inv(vandermonde)


def lagrange_nodes(T: Triangle, m: int) -> np.ndarray:
    """The m(m+1)/2 nodes of barycentric step 1/(m-1), lexicographic order."""
    if m < 2:
        raise LagrangeError(f"Lagrange nodes need m >= 2, got {m}")
    return (_barycentric_indices(m) / (m - 1)) @ T.vertices


def interpolate(v: Callable, T: Triangle, m: int) -> Polynomial2:
    if m < 2:
        raise LagrangeError(f"Interpolation degree m-1 needs m >= 2, got {m}")
    nodes_ref, vinv = _reference_system(m)
    nodes = T.from_reference(nodes_ref)
    ref_coeffs = vinv @ np.asarray(v(nodes[:, 0], nodes[:, 1]), dtype=float)

    degree = m - 1
    table = np.zeros((degree + 1, degree + 1))
    for (a, b), c in zip(_monomial_exponents(degree), ref_coeffs):
        table[a, b] = c
    # reference coordinates as affine functions of (x, y)
    jinv = np.linalg.inv(T.jacobian())
    shift = -jinv @ T.vertices[0]
    xi = np.array([[shift[0], jinv[0, 1]], [jinv[0, 0], 0.0]])
    eta = np.array([[shift[1], jinv[1, 1]], [jinv[1, 0], 0.0]])
    return Polynomial2(_substitute(table, xi, eta, degree), degree)


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the reference triangle, exact to degree 2n-1."""
    x00, w00 = roots_legendre(n)
    x01, w01 = roots_jacobi(n, 1, 0)
    x00s = (x00 + 1) / 2
    x01s = (x01 + 1) / 2
    weights = np.outer(w01, w00).reshape(-1) / 8
    x = np.outer(x01s, np.ones(x00s.shape)).reshape(-1)
    y = np.outer(1 - x01s, x00s).reshape(-1)
    return np.column_stack((x, y)), weights


@lru_cache(maxsize=None)
def lattice_centroids(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Centroids of the n^2 congruent subtriangles, equal weights."""
    up = [((3 * i + 1) / (3 * n), (3 * j + 1) / (3 * n)) for i in range(n) for j in range(n - i)]
    down = [((3 * i + 2) / (3 * n), (3 * j + 2) / (3 * n)) for i in range(n - 1) for j in range(n - 1 - i)]
    points = np.array(up + down)
    return points, np.full(points.shape[0], 0.5 / (n * n))


@lru_cache(maxsize=None)
def lattice_nodes(n: int) -> np.ndarray:
    return np.array([(i / n, j / n) for i in range(n + 1) for j in range(n + 1 - i)])


def is_even_integer(p: float) -> bool:
    return np.isfinite(p) and float(p).is_integer() and int(p) % 2 == 0


def quadrature_for(m: int, p: float, lattice: int = DEFAULT_LATTICE) -> Tuple[np.ndarray, np.ndarray]:
    """Reference points and weights (area 1/2) suited to |v - Iv|^p."""
    if p < 1:
        raise LagrangeError(f"p must lie in [1, inf], got {p}")
    if np.isinf(p):
        points = lattice_nodes(lattice)
        return points, np.full(points.shape[0], np.nan)
    if is_even_integer(p):
        return gauss_rule(int(p) * m // 2 + 2)
    return lattice_centroids(lattice)


def aggregate(values: np.ndarray, p: float) -> float:
    """l^p sum of per-triangle errors, max for p = inf."""
    values = np.asarray(values, dtype=float)
    if np.isinf(p):
        return float(np.max(values))
    return float(np.sum(values ** p) ** (1.0 / p))


def _batch_errors(v: Callable, vertices: np.ndarray, m: int, p: float,
                  points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    nodes_ref, vinv = _reference_system(m)
    origin = vertices[:, 0, :]
    jac = np.stack([vertices[:, 1] - origin, vertices[:, 2] - origin], axis=-1)

    nodes = origin[:, None, :] + np.einsum('tij,nj->tni', jac, nodes_ref)
    node_values = np.asarray(v(nodes[..., 0], nodes[..., 1]), dtype=float)
    ref_coeffs = node_values @ vinv.T

    quad = origin[:, None, :] + np.einsum('tij,nj->tni', jac, points)
    residual = np.asarray(v(quad[..., 0], quad[..., 1]), dtype=float) - ref_coeffs @ _monomials(points, m - 1).T

    if np.isinf(p):
        return np.max(np.abs(residual), axis=1)
    det = np.abs(jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0])
    return (det * (np.abs(residual) ** p @ weights)) ** (1.0 / p)


def form_residual_basis(T: Triangle, m: int, p: float,
                        lattice: int = DEFAULT_LATTICE) -> Tuple[np.ndarray, np.ndarray]:
    """Residuals of x^(m-i) y^i - I(x^(m-i) y^i) at the quadrature points of T.

    Returns (basis, weights) with weights summing to |T|, so that for a form
    with coefficients c, e_T = (weights @ |basis @ c|^p)^(1/p).
    """
    points, weights = quadrature_for(m, p, lattice)
    nodes_ref, vinv = _reference_system(m)
    exps = np.array([(m - i, i) for i in range(m + 1)])

    def monomials(z):
        return z[:, 0, None] ** exps[:, 0] * z[:, 1, None] ** exps[:, 1]

    at_points = monomials(T.from_reference(points))
    interpolated = _monomials(points, m - 1) @ vinv @ monomials(T.from_reference(nodes_ref))
    return at_points - interpolated, 2.0 * T.area() * weights


def local_error(v: Callable, T: Triangle, m: int, p: float, lattice: int = DEFAULT_LATTICE) -> float:
    """||v - I_{m,T} v||_{L^p(T)}."""
    points, weights = quadrature_for(m, p, lattice)
    return float(_batch_errors(v, T.vertices[None], m, p, points, weights)[0])


def local_errors(v: Callable, mesh: 'Mesh', m: int, p: float,
                 lattice: int = DEFAULT_LATTICE, workers: int = 1) -> np.ndarray:
    """Per-triangle errors in mesh order."""
    if mesh.triangles.shape[0] == 0:
        raise LagrangeError("Cannot measure interpolation error on an empty mesh")
    points, weights = quadrature_for(m, p, lattice)
    vertices = mesh.vertices[mesh.triangles]
    block = max(1, _BLOCK_ENTRIES // points.shape[0])
    chunks = [vertices[start:start + block] for start in range(0, vertices.shape[0], block)]

    def run(chunk):
        return _batch_errors(v, chunk, m, p, points, weights)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]
    return np.concatenate(parts)


def global_error(v: Callable, mesh: 'Mesh', m: int, p: float,
                 lattice: int = DEFAULT_LATTICE, workers: int = 1) -> float:
    """(sum_T e_T^p)^(1/p), or max_T e_T for p = inf."""
    return aggregate(local_errors(v, mesh, m, p, lattice, workers), p)
