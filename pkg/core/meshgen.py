"""
Conforming triangulations of polygonal domains.

Uniform baselines, coarse macro meshes, and the adapted mesh built by tiling
every macro triangle with translates and point reflections of its locally
optimal triangle and gluing the tiles together with a constrained Delaunay
layer along the macro edges.
"""
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import shapely
import triangle
from scipy.spatial.distance import pdist
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry.polygon import orient

from core.binary_forms import HomogeneousForm, coeff_norm
from core.lagrange import LagrangeError, ScalarField, Triangle, local_errors
from core.shapefn import ShapeQuery, equilateral_vertices, shape_oracle

logger = logging.getLogger(__name__)

MESH_HEADER = 'MESH2'

# fraction of the smallest tile altitude kept free along macro edges
INTERIOR_BAND = 0.25
# spacing of the macro edge split points, in mean tile edge lengths
EDGE_SPACING = 1.0
# macro diameter over tile diameter below which the macro mesh is coarsened
MACRO_TILE_RATIO = 4.0

DEFAULT_MACRO_TILES = 2500
MIN_TARGET = 20
MAX_LATTICE_CELLS = 4_000_000


class MeshError(Exception):
    """Custom exception for mesh generation errors."""
    pass


class EmptyTilingError(MeshError):
    """No macro triangle holds a whole tile."""
    pass


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with a counterclockwise vertex loop."""

    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if vertices.shape[0] >= 2 and np.allclose(vertices[0], vertices[-1]):
            vertices = vertices[:-1]
        if vertices.shape[0] < 3:
            raise MeshError(f"Polygon needs at least 3 vertices, got {vertices.shape[0]}")
        shape = ShapelyPolygon(vertices)
        if not shape.is_valid:
            raise MeshError(f"Polygon is not simple: {shapely.is_valid_reason(shape)}")
        extent = np.ptp(vertices, axis=0)
        if shape.area <= 1e-14 * float(extent @ extent):
            raise MeshError("Polygon has zero area")
        shape = orient(shape, sign=1.0)
        object.__setattr__(self, 'vertices', np.asarray(shape.exterior.coords)[:-1])
        object.__setattr__(self, '_shape', shape)

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> 'Polygon':
        return cls([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])

    @classmethod
    def unit_square(cls) -> 'Polygon':
        return cls.rectangle(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def load(cls, path: str) -> 'Polygon':
        """One "x y" vertex per line; blank lines and '#' comments are skipped."""
        points = []
        with open(path) as handle:
            for number, line in enumerate(handle, 1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                parts = line.replace(',', ' ').split()
                if len(parts) != 2:
                    raise MeshError(f"{path}:{number}: expected 'x y', got {line!r}")
                try:
                    points.append([float(parts[0]), float(parts[1])])
                except ValueError:
                    raise MeshError(f"{path}:{number}: bad coordinates {line!r}")
        return cls(points)

    @property
    def shape(self) -> ShapelyPolygon:
        return self._shape

    def area(self) -> float:
        return float(self._shape.area)

    def diameter(self) -> float:
        return float(pdist(self.vertices).max())

    def bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        xmin, ymin, xmax, ymax = self._shape.bounds
        return (xmin, ymin), (xmax, ymax)

    def contains(self, points) -> np.ndarray:
        """Closed containment, vectorized over points."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return shapely.intersects_xy(self._shape, points[:, 0], points[:, 1])

    def is_rectangle(self) -> bool:
        if self.vertices.shape[0] != 4:
            return False
        (xmin, ymin), (xmax, ymax) = self.bounds()
        corners = {(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)}
        return {tuple(v) for v in self.vertices} == corners

    def edges(self) -> np.ndarray:
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    # 0 for interior tiles, 1 for the boundary layer; None when not tracked
    tags: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("Triangle references a vertex that does not exist")
        if self.tags is not None:
            self.tags = np.asarray(self.tags, dtype=np.int8)
            if self.tags.shape != (len(self.triangles),):
                raise MeshError("One tag per triangle is required")
        degenerate = self.degenerate()
        if degenerate.size:
            raise MeshError(f"Degenerate triangles: {degenerate[:10].tolist()}")
        self._edge_map = None

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def bbox_scale(self) -> float:
        extent = np.ptp(self.vertices, axis=0) if self.n_vertices else np.zeros(2)
        return float(extent @ extent)

    def signed_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def diameters(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        edges = v - np.roll(v, 1, axis=1)
        return np.sqrt(np.max(np.sum(edges ** 2, axis=-1), axis=1))

    def degenerate(self) -> np.ndarray:
        return np.flatnonzero(self.areas() <= 1e-14 * self.bbox_scale())

    def edge_map(self) -> Dict[Tuple[int, int], List[int]]:
        """Sorted vertex pair -> triangles sharing that edge."""
        if self._edge_map is None:
            edges = defaultdict(list)
            for t, (i, j, k) in enumerate(self.triangles.tolist()):
                for a, b in ((i, j), (j, k), (k, i)):
                    edges[(a, b) if a < b else (b, a)].append(t)
            self._edge_map = dict(edges)
        return self._edge_map

    def boundary_edges(self) -> List[Tuple[int, int]]:
        return [edge for edge, owners in self.edge_map().items() if len(owners) == 1]

    def triangle(self, index: int) -> Triangle:
        return Triangle(self.vertices[self.triangles[index]])

    def save(self, path: str) -> None:
        with open(path, 'w') as handle:
            handle.write(f"{MESH_HEADER} {self.n_vertices} {self.n_triangles}\n")
            for x, y in self.vertices:
                handle.write(f"{x:.17g} {y:.17g}\n")
            for i, j, k in self.triangles:
                handle.write(f"{i} {j} {k}\n")
        logger.info(f"Saved mesh with {self.n_triangles} triangles to {path}")

    @classmethod
    def load(cls, path: str) -> 'Mesh':
        with open(path) as handle:
            lines = [line.strip() for line in handle if line.strip()]
        if not lines:
            raise MeshError(f"{path} is empty")
        header = lines[0].split()
        if len(header) != 3 or header[0] != MESH_HEADER:
            raise MeshError(f"{path}: expected '{MESH_HEADER} <nv> <nt>' header, got {lines[0]!r}")
        try:
            nv, nt = int(header[1]), int(header[2])
            if len(lines) != 1 + nv + nt:
                raise MeshError(f"{path}: expected {nv} vertices and {nt} triangles, "
                                f"found {len(lines) - 1} records")
            vertices = np.array([[float(s) for s in line.split()] for line in lines[1:1 + nv]])
            triangles = np.array([[int(s) for s in line.split()] for line in lines[1 + nv:]], dtype=np.int64)
        except ValueError as e:
            raise MeshError(f"{path}: malformed record ({e})")
        return cls(vertices.reshape(nv, 2), triangles.reshape(nt, 3))


def _oriented(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Reorder triangles counterclockwise."""
    triangles = np.array(triangles, dtype=np.int64)
    v = vertices[triangles]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    flip = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _compacted(vertices: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    used, inverse = np.unique(triangles, return_inverse=True)
    return vertices[used], inverse.reshape(triangles.shape)


def _cdt(points: np.ndarray, segments: np.ndarray, options: str = 'p') -> Tuple[np.ndarray, np.ndarray]:
    result = triangle.triangulate({'vertices': points, 'segments': segments}, options)
    if 'triangles' not in result or len(result['triangles']) == 0:
        raise MeshError("Constrained Delaunay triangulation produced no triangles")
    vertices, triangles = _compacted(np.asarray(result['vertices']), np.asarray(result['triangles']))
    return vertices, _oriented(vertices, triangles)


def _structured_rectangle(domain: Polygon, nx: int, ny: int) -> Mesh:
    (xmin, ymin), (xmax, ymax) = domain.bounds()
    xs = np.linspace(xmin, xmax, nx + 1)
    ys = np.linspace(ymin, ymax, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing='xy')
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing='xy')
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles)


def _boundary_samples(domain: Polygon, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    points = []
    for start, end in domain.edges():
        pieces = max(1, math.ceil(np.linalg.norm(end - start) / spacing))
        t = np.arange(pieces) / pieces
        points.append(start + t[:, None] * (end - start))
    points = np.concatenate(points)
    n = len(points)
    segments = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return points, segments


def uniform_mesh(domain: Polygon, n: int) -> Mesh:
    """n x n grid split into 2n^2 triangles, or a grid clipped to the polygon."""
    if n < 1:
        raise MeshError(f"uniform_mesh needs n >= 1, got {n}")
    if domain.is_rectangle():
        return _structured_rectangle(domain, n, n)

    (xmin, ymin), (xmax, ymax) = domain.bounds()
    spacing = max(xmax - xmin, ymax - ymin) / n
    boundary, segments = _boundary_samples(domain, spacing)
    gx, gy = np.meshgrid(np.arange(xmin, xmax + spacing / 2, spacing),
                         np.arange(ymin, ymax + spacing / 2, spacing), indexing='xy')
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    inner = domain.shape.buffer(-0.25 * spacing)
    keep = shapely.contains_xy(inner, grid[:, 0], grid[:, 1]) if not inner.is_empty else np.zeros(len(grid), bool)
    points = np.concatenate([boundary, grid[keep]])
    vertices, triangles = _cdt(points, segments, 'p')
    mesh = Mesh(vertices, triangles)
    logger.debug(f"Uniform mesh n={n} on a {len(domain.vertices)}-gon: {mesh.n_triangles} triangles")
    return mesh


def macro_mesh(domain: Polygon, r: float) -> Mesh:
    """Conforming mesh whose triangles all have diameter <= r."""
    if r <= 0:
        raise MeshError(f"Macro radius must be positive, got {r}")
    n = math.ceil(domain.diameter() / r) * 2
    for _ in range(8):
        mesh = uniform_mesh(domain, n)
        if mesh.diameters().max() <= r * (1 + 1e-12):
            return mesh
        n *= 2
    raise MeshError(f"Could not reach macro diameter {r} on the domain")


@dataclass(frozen=True, eq=False)
class Patch:
    """Tiling data of one macro triangle."""

    macro: Triangle
    pi: HomogeneousForm
    shape_value: float
    tile: Triangle
    companion: Triangle
    a: np.ndarray
    b: np.ndarray

    @property
    def origin(self) -> np.ndarray:
        return self.tile.vertices[0]

    def lattice_point(self, i, j) -> np.ndarray:
        i, j = np.asarray(i, dtype=float), np.asarray(j, dtype=float)
        return self.origin + i[..., None] * self.a + j[..., None] * self.b

    def lattice_coordinates(self, points) -> np.ndarray:
        basis = np.column_stack([self.a, self.b])
        return np.linalg.solve(basis, (np.asarray(points, dtype=float) - self.origin).T).T

    def _edge_lengths(self) -> np.ndarray:
        v = self.tile.vertices
        return np.linalg.norm(v - np.roll(v, 1, axis=0), axis=1)

    def min_altitude(self) -> float:
        return 2.0 * self.tile.area() / float(self._edge_lengths().max())

    def mean_edge(self) -> float:
        return float(self._edge_lengths().mean())


@dataclass(eq=False)
class PatchPlan:
    macro: Mesh
    patches: List[Patch]
    m: int
    p: float
    scale: float
    q: float = field(init=False)

    def __post_init__(self):
        self.q = holder_exponent(self.m, self.p)

    def predicted_count(self) -> float:
        """sum_R |R| / |T_R|."""
        return float(sum(patch.macro.area() / patch.tile.area() for patch in self.patches))

    def max_tile_diameter(self) -> float:
        return max(patch.tile.diameter() for patch in self.patches)


def holder_exponent(m: int, p: float) -> float:
    """q with 1/q = m/2 + 1/p."""
    return 1.0 / (m / 2.0 + (0.0 if np.isinf(p) else 1.0 / p))


def _shape_values(f: ScalarField, macro: Mesh, m: int, query: ShapeQuery,
                  workers: int) -> Tuple[List[HomogeneousForm], List[Tuple[float, np.ndarray]]]:
    centers = macro.vertices[macro.triangles].mean(axis=1)
    forms = [f.taylor_form(z, m) for z in centers]
    largest = max(coeff_norm(pi) for pi in forms)
    if largest == 0.0:
        raise MeshError(f"d^{m} {f.name} vanishes on every macro triangle; nothing to adapt to")

    def solve(pi):
        norm = coeff_norm(pi)
        floor = 1e-4 * max(norm, 1e-4 * largest)
        if norm <= 1e-12 * largest:
            return floor, None
        result = shape_oracle(pi, query)
        return max(result.value, floor), result.triangle.vertices

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(solve, forms))
    else:
        solved = [solve(pi) for pi in forms]
    return forms, solved


def _isometry_group(pi: HomogeneousForm, samples: int = 721) -> Optional[np.ndarray]:
    """Sampled one-parameter group of unimodular maps leaving a quadratic form invariant.

    In coordinates w = S z where pi = +-w1^2 +- w2^2 the group is made of
    rotations when det > 0 and of hyperbolic rotations when det < 0.
    """
    if pi.degree != 2:
        return None
    a, b, c = pi.coeffs
    lam, U = np.linalg.eigh(np.array([[a, b / 2.0], [b / 2.0, c]]))
    if np.min(np.abs(lam)) <= 1e-12 * np.max(np.abs(lam)):
        return None
    S = np.sqrt(np.abs(lam))[:, None] * U.T
    if lam[0] * lam[1] > 0:
        t = np.linspace(0.0, np.pi, samples, endpoint=False)
        cos, sin = np.cos(t), np.sin(t)
        G = np.stack([np.stack([cos, -sin], axis=-1), np.stack([sin, cos], axis=-1)], axis=1)
    else:
        t = np.linspace(-6.0, 6.0, samples)
        cosh, sinh = np.cosh(t), np.sinh(t)
        G = np.stack([np.stack([cosh, sinh], axis=-1), np.stack([sinh, cosh], axis=-1)], axis=1)
    return np.linalg.inv(S) @ G @ S


def compact_tile(pi: HomogeneousForm, vertices: np.ndarray) -> np.ndarray:
    """Smallest-diameter image of a centred triangle under the isometries of pi.

    The interpolation error on pi is unchanged; forms without a continuous
    isometry group are returned as given.
    """
    group = _isometry_group(pi)
    if group is None:
        return vertices
    images = np.einsum('nij,kj->nki', group, vertices)
    edges = images - np.roll(images, 1, axis=1)
    diameters = np.sqrt(np.max(np.sum(edges ** 2, axis=-1), axis=1))
    best = int(np.argmin(diameters))
    current = float(np.sqrt(np.max(np.sum((vertices - np.roll(vertices, 1, axis=0)) ** 2, axis=-1))))
    if diameters[best] < current * (1 - 1e-9):
        return images[best]
    return vertices


def build_patch_plan(f: ScalarField, macro: Mesh, m: int, p: float, M: float, s: float,
                     query: ShapeQuery = None, workers: int = 1, _solved=None) -> PatchPlan:
    """Scale K_M^(-q/2) T_M(pi_{b_R}) by s for every macro triangle R."""
    if s <= 0:
        raise MeshError(f"Global scale s must be positive, got {s}")
    query = query or ShapeQuery(m=m, p=p, cap=M)
    if query.cap != M or query.m != m or query.p != float(p):
        raise MeshError("Shape query does not match (m, p, M)")
    forms, solved = _solved or _shape_values(f, macro, m, query, workers)
    q = holder_exponent(m, p)

    patches = []
    for t, (pi, (value, unit_vertices)) in enumerate(zip(forms, solved)):
        unit_vertices = equilateral_vertices() if unit_vertices is None else compact_tile(pi, unit_vertices)
        R = macro.triangle(t)
        tile = Triangle(R.barycenter() + s * value ** (-q / 2.0) * unit_vertices)
        v0, v1, v2 = tile.vertices
        companion = tile.point_reflected(0.5 * (v1 + v2))
        patches.append(Patch(R, pi, value, tile, companion, v1 - v0, v2 - v0))
    return PatchPlan(macro, patches, m, p, s)


def _signed_edge_distances(macro: Triangle, points: np.ndarray) -> np.ndarray:
    v = macro.vertices
    if macro.signed_area < 0:
        v = v[[0, 2, 1]]
    out = []
    for k in range(3):
        start, end = v[k], v[(k + 1) % 3]
        edge = end - start
        rel = points - start
        out.append((edge[0] * rel[..., 1] - edge[1] * rel[..., 0]) / np.linalg.norm(edge))
    return np.stack(out, axis=-1)


def interior_tiles(patch: Patch, band: float = INTERIOR_BAND) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice vertices and tiles lying inside the macro triangle away from its edges.

    Returns (points, triangles) where triangles index into points; tiles are
    the lattice cells split along the a-b diagonal.
    """
    corners = patch.lattice_coordinates(patch.macro.vertices)
    lo = np.floor(corners.min(axis=0)).astype(int) - 1
    hi = np.ceil(corners.max(axis=0)).astype(int) + 1
    cells = int(np.prod(hi - lo + 1))
    if cells > MAX_LATTICE_CELLS:
        raise MeshError(f"Macro triangle needs {cells} lattice cells; reduce target_N or refine the macro mesh")

    ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing='ij')
    margin = band * patch.min_altitude()
    inside = np.all(_signed_edge_distances(patch.macro, patch.lattice_point(ii, jj)) >= margin, axis=-1)

    ci, cj = ii[:-1, :-1], jj[:-1, :-1]
    c00, c10, c01, c11 = inside[:-1, :-1], inside[1:, :-1], inside[:-1, 1:], inside[1:, 1:]
    tiles = []
    for mask, offsets in (((c00 & c10 & c01), ((0, 0), (1, 0), (0, 1))),
                          ((c10 & c11 & c01), ((1, 0), (1, 1), (0, 1)))):
        base_i, base_j = ci[mask], cj[mask]
        tiles.append(np.stack([np.column_stack([base_i + di, base_j + dj]) for di, dj in offsets], axis=1))
    tiles = np.concatenate(tiles)
    if tiles.size == 0:
        return np.zeros((0, 2)), np.zeros((0, 3), dtype=np.int64)

    keys, inverse = np.unique(tiles.reshape(-1, 2), axis=0, return_inverse=True)
    points = patch.lattice_point(keys[:, 0], keys[:, 1])
    return points, inverse.reshape(-1, 3)


def _edge_splits(patch: Patch, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Parameters t in (0, 1) where the edge crosses the lattice lines of the patch."""
    (u0, w0), (u1, w1) = patch.lattice_coordinates(np.array([start, end]))
    found = []
    for a, b in ((u0, u1), (w0, w1), (u0 + w0, u1 + w1)):
        if abs(b - a) < 1e-14:
            continue
        lo, hi = sorted((a, b))
        k = np.arange(math.floor(lo) + 1, math.ceil(hi))
        found.append((k - a) / (b - a))
    t = np.concatenate(found) if found else np.zeros(0)
    return t[(t > 1e-9) & (t < 1 - 1e-9)]


def _merge_parameters(t: np.ndarray, gap: float) -> np.ndarray:
    t = np.sort(np.concatenate([[0.0, 1.0], t]))
    kept = [t[0]]
    for value in t[1:-1]:
        if value - kept[-1] > gap and 1.0 - value > gap:
            kept.append(value)
    kept.append(1.0)
    return np.array(kept)


def assemble_mesh(plan: PatchPlan) -> Mesh:
    """Interior tiles plus a constrained Delaunay layer glued along macro edges."""
    macro = plan.macro
    points: List[np.ndarray] = [macro.vertices]
    segments: List[np.ndarray] = []
    tile_triangles: List[np.ndarray] = []
    offset = macro.n_vertices
    empty = 0

    for patch in plan.patches:
        tile_points, tiles = interior_tiles(patch)
        if len(tiles) == 0:
            empty += 1
            continue
        points.append(tile_points)
        tiles = tiles + offset
        tile_triangles.append(tiles)
        edges = np.sort(np.concatenate([tiles[:, [0, 1]], tiles[:, [1, 2]], tiles[:, [2, 0]]]), axis=1)
        segments.append(np.unique(edges, axis=0))
        offset += len(tile_points)
    if not tile_triangles:
        raise EmptyTilingError(f"None of the {len(plan.patches)} macro triangles holds an interior tile")
    if empty:
        logger.warning(f"{empty} of {len(plan.patches)} macro triangles hold no interior tile; "
                       f"the boundary layer fills them")

    for (i, j), owners in macro.edge_map().items():
        start, end = macro.vertices[i], macro.vertices[j]
        t = np.concatenate([_edge_splits(plan.patches[owner], start, end) for owner in owners])
        length = np.linalg.norm(end - start)
        spacing = min(plan.patches[owner].mean_edge() for owner in owners)
        t = _merge_parameters(t, EDGE_SPACING * spacing / length)
        inner = start + t[1:-1, None] * (end - start)
        ids = np.concatenate([[i], offset + np.arange(len(inner)), [j]])
        points.append(inner)
        offset += len(inner)
        segments.append(np.column_stack([ids[:-1], ids[1:]]))

    points = np.concatenate(points)
    segments = np.concatenate(segments)
    tile_triangles = np.concatenate(tile_triangles)

    result = triangle.triangulate({'vertices': points, 'segments': segments}, 'p')
    if len(result.get('vertices', ())) != len(points):
        raise MeshError("Conformization inserted unexpected vertices")
    triangles = _oriented(points, np.asarray(result['triangles']))

    tile_keys = {tuple(row) for row in np.sort(tile_triangles, axis=1).tolist()}
    tags = np.array([0 if tuple(row) in tile_keys else 1 for row in np.sort(triangles, axis=1).tolist()],
                    dtype=np.int8)
    vertices, triangles = _compacted(points, triangles)
    return Mesh(vertices, triangles, tags)


def macro_grid(target_N: int, macro_tiles: int = DEFAULT_MACRO_TILES) -> int:
    """Grid size n of the uniform macro mesh giving about macro_tiles tiles per macro triangle."""
    if macro_tiles < 1:
        raise MeshError(f"macro_tiles must be positive, got {macro_tiles}")
    return max(1, int(round(math.sqrt(target_N / (2.0 * macro_tiles)))))


def adapt_mesh(f: ScalarField, domain: Polygon, m: int, p: float, target_N: int, M: float = 16.0,
               query: ShapeQuery = None, macro_tiles: int = DEFAULT_MACRO_TILES, workers: int = 1) -> Mesh:
    """Adapted conforming mesh with about target_N triangles.

    The macro mesh is the uniform mesh holding about macro_tiles tiles per
    triangle, coarsened while its triangles are less than MACRO_TILE_RATIO
    tile diameters across. The global scale s is then corrected until the
    triangle count is within 2% of target_N.
    """
    if np.isinf(p):
        raise MeshError("Conforming adapted meshes are not available for p = inf; "
                        "the tiling for the max norm is non-conforming")
    if target_N < MIN_TARGET:
        raise MeshError(f"target_N must be at least {MIN_TARGET}, got {target_N}")
    query = query or ShapeQuery(m=m, p=p, cap=M)
    q = holder_exponent(m, p)

    n = macro_grid(target_N, macro_tiles)
    while True:
        macro = uniform_mesh(domain, n)
        solved = _shape_values(f, macro, m, query, workers)
        values = np.array([value for value, _ in solved[1]])
        s = math.sqrt(float(np.sum(macro.areas() * values ** q)) / target_N)
        plan = build_patch_plan(f, macro, m, p, M, s, query, _solved=solved)
        r = float(macro.diameters().max())
        if n == 1 or r >= MACRO_TILE_RATIO * plan.max_tile_diameter():
            break
        n = max(1, n // 2)
        logger.info(f"Coarsening the macro mesh to n={n}: tiles of diameter {plan.max_tile_diameter():.4g} "
                    f"do not fit macro triangles of diameter {r:.4g}")

    try:
        mesh = assemble_mesh(plan)
        for _ in range(3):
            ratio = mesh.n_triangles / target_N
            if abs(ratio - 1.0) <= 0.02:
                break
            s *= math.sqrt(ratio)
            plan = build_patch_plan(f, macro, m, p, M, s, query, _solved=solved)
            mesh = assemble_mesh(plan)
    except EmptyTilingError as e:
        raise MeshError(f"target_N={target_N} is too small for the macro structure of {f.name}: {e}")

    boundary = int(np.count_nonzero(mesh.tags))
    logger.info(f"Adapted mesh for {f.name}: {mesh.n_triangles} triangles (target {target_N}), "
                f"{macro.n_triangles} macros of diameter {r:.4g}, {boundary} boundary-layer triangles, "
                f"admissibility {mesh.diameters().max() * math.sqrt(mesh.n_triangles):.4g}")
    return mesh


@dataclass
class ConformityReport:
    passed: bool
    hanging_nodes: List[int]
    bad_edges: List[Tuple[int, int]]
    inverted: List[int]
    degenerate: List[int]
    overlap: float
    area_defect: Optional[float]

    def __str__(self):
        if self.passed:
            return "conforming"
        parts = []
        if self.hanging_nodes:
            parts.append(f"hanging nodes {self.hanging_nodes[:10]}")
        if self.bad_edges:
            parts.append(f"edges shared by more than two triangles {self.bad_edges[:10]}")
        if self.inverted:
            parts.append(f"clockwise triangles {self.inverted[:10]}")
        if self.degenerate:
            parts.append(f"degenerate triangles {self.degenerate[:10]}")
        if self.overlap > 0:
            parts.append(f"overlap area {self.overlap:.3g}")
        if self.area_defect:
            parts.append(f"coverage defect {self.area_defect:.3g}")
        return "not conforming: " + "; ".join(parts)


def _hanging_nodes(mesh: Mesh, boundary: List[Tuple[int, int]]) -> List[int]:
    found = set()
    v = mesh.vertices
    for i, j in boundary:
        start, end = v[i], v[j]
        edge = end - start
        length2 = float(edge @ edge)
        rel = v - start
        t = rel @ edge / length2
        dist2 = np.sum((rel - t[:, None] * edge) ** 2, axis=1)
        hits = np.flatnonzero((t > 1e-9) & (t < 1 - 1e-9) & (dist2 <= 1e-20 * max(length2, mesh.bbox_scale())))
        found.update(int(h) for h in hits if h not in (i, j))
    return sorted(found)


def check_conforming(mesh: Mesh, domain: Polygon = None) -> ConformityReport:
    """Edge sharing, orientation and area coverage of a mesh."""
    areas = mesh.signed_areas()
    scale = mesh.bbox_scale()
    inverted = np.flatnonzero(areas < 0).tolist()
    degenerate = np.flatnonzero(np.abs(areas) <= 1e-14 * scale).tolist()

    edges = mesh.edge_map()
    bad_edges = sorted(edge for edge, owners in edges.items() if len(owners) > 2)
    hanging = _hanging_nodes(mesh, [edge for edge, owners in edges.items() if len(owners) == 1])

    total = float(np.sum(np.abs(areas)))
    polygons = shapely.polygons(mesh.vertices[mesh.triangles])
    union = shapely.union_all(polygons)
    overlap = max(0.0, total - float(union.area))
    tolerance = 1e-8 * max(total, 1e-300)

    area_defect = None
    if domain is not None:
        tolerance = 1e-8 * domain.area()
        area_defect = abs(total - domain.area()) + float(shapely.symmetric_difference(union, domain.shape).area)
        if area_defect <= tolerance:
            area_defect = 0.0

    passed = not (hanging or bad_edges or inverted or degenerate) and overlap <= tolerance and not area_defect
    report = ConformityReport(passed, hanging, bad_edges, inverted, degenerate,
                              overlap if overlap > tolerance else 0.0, area_defect)
    if not passed:
        logger.warning(f"Mesh check failed: {report}")
    return report


@dataclass(eq=False)
class EquidistributionReport:
    errors: np.ndarray
    percentile_ratio: float
    admissibility: float
    aspect_max: float
    aspect_median: float
    boundary_fraction: Optional[float] = None

    def as_dict(self) -> Dict[str, float]:
        return {
            'triangles': int(self.errors.shape[0]),
            'percentile_ratio': self.percentile_ratio,
            'admissibility': self.admissibility,
            'aspect_max': self.aspect_max,
            'aspect_median': self.aspect_median,
            'boundary_fraction': self.boundary_fraction,
        }


def equidistribution_report(f: ScalarField, mesh: Mesh, m: int, p: float,
                            lattice: int = 64, workers: int = 1) -> EquidistributionReport:
    """Spread of the per-triangle errors and the admissibility constant."""
    try:
        errors = local_errors(f, mesh, m, p, lattice, workers)
    except LagrangeError as e:
        raise MeshError(str(e))
    lo, hi = np.percentile(errors, [10, 90])
    ratio = float(hi / lo) if lo > 0 else np.inf
    diameters = mesh.diameters()
    aspect = diameters ** 2 / mesh.areas()
    fraction = None
    if mesh.tags is not None:
        fraction = float(np.count_nonzero(mesh.tags)) / mesh.n_triangles
    return EquidistributionReport(errors, ratio, float(diameters.max() * math.sqrt(mesh.n_triangles)),
                                  float(aspect.max()), float(np.median(aspect)), fraction)
