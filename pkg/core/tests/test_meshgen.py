import numpy as np
import pytest

from core.binary_forms import HomogeneousForm
from core.corpus import get_function
from core.lagrange import ScalarField, Triangle, local_error
from core.meshgen import (
    Mesh,
    MeshError,
    Polygon,
    adapt_mesh,
    build_patch_plan,
    check_conforming,
    compact_tile,
    equidistribution_report,
    holder_exponent,
    interior_tiles,
    macro_grid,
    macro_mesh,
    uniform_mesh,
)
from core.shapefn import ShapeQuery, equilateral_vertices

COARSE = (8, 8, 6)
L_SHAPE = Polygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])


def coarse_query(m, p=2.0, cap=16.0):
    return ShapeQuery(m=m, p=p, cap=cap, grid=COARSE)


@pytest.fixture
def hanging_mesh():
    # vertex 4 sits on the diagonal of triangle 0 without splitting it
    vertices = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1]], dtype=float)
    return Mesh(vertices, np.array([[0, 1, 2], [0, 4, 3], [4, 2, 3]]))


@pytest.fixture
def overlapping_mesh():
    vertices = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    return Mesh(vertices, np.array([[0, 1, 2], [0, 1, 3]]))


class TestPolygon:
    def test_orientation(self):
        clockwise = Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
        assert clockwise.shape.exterior.is_ccw
        assert clockwise.area() == pytest.approx(1.0)
        assert clockwise.is_rectangle()

    def test_self_intersection(self):
        with pytest.raises(MeshError):
            Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])

    def test_too_few_vertices(self):
        with pytest.raises(MeshError):
            Polygon([[0, 0], [1, 0]])

    def test_load(self, tmp_path):
        path = tmp_path / 'domain.txt'
        path.write_text("# L-shape\n0 0\n2 0\n2 1\n1 1\n1 2\n0 2\n")
        domain = Polygon.load(str(path))
        assert domain.area() == pytest.approx(3.0)
        assert not domain.is_rectangle()
        assert domain.diameter() == pytest.approx(np.sqrt(8))

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / 'domain.txt'
        path.write_text("0 0\n1 zero\n")
        with pytest.raises(MeshError):
            Polygon.load(str(path))


class TestUniformMesh:
    @pytest.mark.parametrize("n,triangles,vertices", [(1, 2, 4), (2, 8, 9), (5, 50, 36)])
    def test_counts(self, n, triangles, vertices):
        mesh = uniform_mesh(Polygon.unit_square(), n)
        assert mesh.n_triangles == triangles
        assert mesh.n_vertices == vertices

    def test_square_is_conforming(self):
        domain = Polygon.unit_square()
        assert check_conforming(uniform_mesh(domain, 7), domain).passed

    def test_l_shape_is_conforming(self):
        mesh = uniform_mesh(L_SHAPE, 10)
        report = check_conforming(mesh, L_SHAPE)
        assert report.passed, str(report)
        assert mesh.areas().sum() == pytest.approx(3.0)

    def test_bad_n(self):
        with pytest.raises(MeshError):
            uniform_mesh(Polygon.unit_square(), 0)


class TestMacroMesh:
    @pytest.mark.parametrize("r", [0.7, 0.3, 0.1])
    def test_diameter_bound(self, r):
        domain = Polygon.rectangle(0, 0, 2, 1)
        mesh = macro_mesh(domain, r)
        assert mesh.diameters().max() <= r * (1 + 1e-12)
        assert check_conforming(mesh, domain).passed

    def test_bad_radius(self):
        with pytest.raises(MeshError):
            macro_mesh(Polygon.unit_square(), 0.0)


class TestMesh:
    def test_degenerate_triangle(self):
        with pytest.raises(MeshError):
            Mesh(np.array([[0, 0], [1, 0], [2, 0]], dtype=float), np.array([[0, 1, 2]]))

    def test_bad_index(self):
        with pytest.raises(MeshError):
            Mesh(np.array([[0, 0], [1, 0], [0, 1]], dtype=float), np.array([[0, 1, 3]]))

    def test_save_and_load(self, tmp_path):
        mesh = uniform_mesh(L_SHAPE, 4)
        path = tmp_path / 'mesh.m2'
        mesh.save(str(path))
        assert path.read_text().splitlines()[0] == f"MESH2 {mesh.n_vertices} {mesh.n_triangles}"
        loaded = Mesh.load(str(path))
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)

    def test_load_bad_header(self, tmp_path):
        path = tmp_path / 'mesh.m2'
        path.write_text("MESH3 3 1\n0 0\n1 0\n0 1\n0 1 2\n")
        with pytest.raises(MeshError):
            Mesh.load(str(path))

    def test_load_truncated(self, tmp_path):
        path = tmp_path / 'mesh.m2'
        path.write_text("MESH2 3 1\n0 0\n1 0\n0 1\n")
        with pytest.raises(MeshError):
            Mesh.load(str(path))


class TestCheckConforming:
    def test_hanging_node(self, hanging_mesh):
        report = check_conforming(hanging_mesh, Polygon.rectangle(0, 0, 2, 2))
        assert not report.passed
        assert report.hanging_nodes == [4]
        assert report.overlap == 0.0
        assert 'hanging nodes [4]' in str(report)

    def test_overlap(self, overlapping_mesh):
        report = check_conforming(overlapping_mesh)
        assert not report.passed
        assert report.overlap == pytest.approx(0.25)

    def test_inverted(self):
        vertices = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        report = check_conforming(Mesh(vertices, np.array([[0, 2, 1]])))
        assert report.inverted == [0]
        assert not report.passed

    def test_coverage(self):
        mesh = uniform_mesh(Polygon.unit_square(), 3)
        report = check_conforming(mesh, Polygon.rectangle(0, 0, 1, 2))
        assert not report.passed
        assert report.area_defect == pytest.approx(2.0)


class TestPatchPlan:
    @pytest.fixture
    def isotropic_plan(self):
        f = get_function('isoquad').field()
        macro = macro_mesh(Polygon.unit_square(), 0.5)
        return build_patch_plan(f, macro, 2, 2.0, 16.0, 0.02, coarse_query(2))

    def test_constant_form_gives_identical_patches(self, isotropic_plan):
        shapes = [patch.tile.vertices - patch.tile.barycenter() for patch in isotropic_plan.patches]
        for shape in shapes[1:]:
            np.testing.assert_allclose(shape, shapes[0], atol=1e-12)

    def test_tile_area(self, isotropic_plan):
        q = holder_exponent(2, 2.0)
        assert q == pytest.approx(2.0 / 3.0)
        for patch in isotropic_plan.patches:
            assert patch.tile.area() == pytest.approx(0.02 ** 2 * patch.shape_value ** -q, rel=1e-9)

    def test_companion_closes_parallelogram(self, isotropic_plan):
        patch = isotropic_plan.patches[0]
        v0 = patch.tile.vertices[0]
        np.testing.assert_allclose(patch.companion.vertices[0], v0 + patch.a + patch.b, atol=1e-12)
        assert patch.companion.area() == pytest.approx(patch.tile.area())

    @pytest.mark.parametrize("m,token", [(2, "2:1,0.3,-2"), (3, "3:1,-0.4,2,0.7")])
    def test_reflection_parity(self, m, token):
        pi = HomogeneousForm.parse(token)
        f = ScalarField.from_form(pi)
        macro = macro_mesh(Polygon.unit_square(), 0.7)
        plan = build_patch_plan(f, macro, m, 2.0, 16.0, 0.05, coarse_query(m))
        patch = plan.patches[0]
        assert local_error(pi, patch.companion, m, 2.0) == pytest.approx(local_error(pi, patch.tile, m, 2.0), rel=1e-9)

    def test_interior_tiles_are_translates(self, isotropic_plan):
        patch = isotropic_plan.patches[0]
        points, tiles = interior_tiles(patch)
        assert len(tiles) > 0
        reference = local_error(patch.pi, patch.tile, 2, 2.0)
        for tile in tiles[:50]:
            T = Triangle(points[tile])
            assert local_error(patch.pi, T, 2, 2.0) == pytest.approx(reference, rel=1e-8)

    def test_bad_scale(self):
        f = get_function('isoquad').field()
        with pytest.raises(MeshError):
            build_patch_plan(f, macro_mesh(Polygon.unit_square(), 0.5), 2, 2.0, 16.0, 0.0, coarse_query(2))

    def test_query_mismatch(self):
        f = get_function('isoquad').field()
        with pytest.raises(MeshError):
            build_patch_plan(f, macro_mesh(Polygon.unit_square(), 0.5), 2, 2.0, 8.0, 0.1, coarse_query(2))


class TestCompactTile:
    def test_hyperbolic_orbit_is_compacted(self):
        pi = HomogeneousForm.parse("2:1,0,-1")
        boost = np.array([[np.cosh(3.0), np.sinh(3.0)], [np.sinh(3.0), np.cosh(3.0)]])
        stretched = equilateral_vertices() @ boost.T
        compact = compact_tile(pi, stretched)
        assert Triangle(compact).diameter() <= 1.01 * Triangle(equilateral_vertices()).diameter()
        assert Triangle(compact).area() == pytest.approx(Triangle(stretched).area(), rel=1e-9)
        assert local_error(pi, Triangle(compact), 2, 2.0) == pytest.approx(
            local_error(pi, Triangle(stretched), 2, 2.0), rel=1e-8)

    def test_round_tile_is_kept(self):
        vertices = equilateral_vertices()
        np.testing.assert_array_equal(compact_tile(HomogeneousForm.parse("2:1,0,1"), vertices), vertices)

    def test_cubic_is_untouched(self):
        vertices = equilateral_vertices() @ np.diag([3.0, 1 / 3.0])
        np.testing.assert_array_equal(compact_tile(HomogeneousForm.parse("3:1,0,-3,0"), vertices), vertices)


class TestAdaptMesh:
    def test_rejects_max_norm(self):
        f = get_function('isoquad').field()
        with pytest.raises(MeshError, match='p = inf'):
            adapt_mesh(f, Polygon.unit_square(), 2, np.inf, 500)

    def test_rejects_tiny_target(self):
        f = get_function('isoquad').field()
        with pytest.raises(MeshError):
            adapt_mesh(f, Polygon.unit_square(), 2, 2.0, 10)

    @pytest.mark.parametrize("target,n", [(500, 1), (4000, 1), (20000, 2), (80000, 4)])
    def test_macro_grid(self, target, n):
        assert macro_grid(target, 2500) == n

    def test_small_isotropic_mesh(self):
        domain = Polygon.unit_square()
        mesh = adapt_mesh(get_function("isoquad").field(), domain, 2, 2.0, 1000, query=coarse_query(2))
        report = check_conforming(mesh, domain)
        assert report.passed, str(report)
        assert mesh.tags is not None and set(np.unique(mesh.tags)) <= {0, 1}
        assert 700 <= mesh.n_triangles <= 1300

    def test_isotropic_mesh_at_2000(self):
        domain = Polygon.unit_square()
        f = get_function('isoquad').field()
        mesh = adapt_mesh(f, domain, 2, 2.0, 2000, query=coarse_query(2))
        assert check_conforming(mesh, domain).passed
        assert 1400 <= mesh.n_triangles <= 2600
        report = equidistribution_report(f, mesh, 2, 2.0)
        assert report.boundary_fraction <= 0.25
        # interior tiles are translates of one triangle
        interior = report.errors[mesh.tags == 0]
        assert np.ptp(interior) <= 1e-6 * interior.max()

    def test_boundary_fraction_decreases_with_n(self):
        f = get_function('isoquad').field()
        fractions = []
        for target in (500, 1000, 2000, 4000):
            mesh = adapt_mesh(f, Polygon.unit_square(), 2, 2.0, target, query=coarse_query(2))
            fractions.append(np.count_nonzero(mesh.tags) / mesh.n_triangles)
        assert fractions[2] <= 0.25
        assert all(b < a for a, b in zip(fractions, fractions[1:])), fractions

    @pytest.mark.parametrize("target", [500, 2000])
    def test_saddle_mesh(self, target):
        domain = Polygon.unit_square()
        f = get_function('saddle').field()
        mesh = adapt_mesh(f, domain, 2, 2.0, target, query=coarse_query(2))
        report = check_conforming(mesh, domain)
        assert report.passed, str(report)
        assert 0.7 * target <= mesh.n_triangles <= 1.3 * target
        assert np.count_nonzero(mesh.tags == 0) > 0

    def test_l_shape_mesh(self):
        f = get_function('isoquad').field()
        mesh = adapt_mesh(f, L_SHAPE, 2, 2.0, 1500, query=coarse_query(2))
        report = check_conforming(mesh, L_SHAPE)
        assert report.passed, str(report)
        assert np.count_nonzero(mesh.tags == 0) > 0

    def test_anisotropic_cubic(self):
        function = get_function('cubaniso', 3)
        domain = function.domain()
        f = function.field()
        adapted = adapt_mesh(f, domain, 3, 2.0, 1000, query=coarse_query(3))
        assert check_conforming(adapted, domain).passed
        assert 700 <= adapted.n_triangles <= 1300
        report = equidistribution_report(f, adapted, 3, 2.0)
        assert report.percentile_ratio < 10
        assert report.admissibility < np.inf

    @pytest.mark.parametrize("name,m", [("hyp", 2), ("cubaniso", 3)])
    def test_admissibility_is_bounded(self, name, m):
        function = get_function(name, m)
        f = function.field()
        constants = []
        for target in (500, 1000, 2000, 4000):
            mesh = adapt_mesh(f, function.domain(), m, 2.0, target, query=coarse_query(m))
            constants.append(mesh.diameters().max() * np.sqrt(mesh.n_triangles))
        assert max(constants) <= 1.5 * min(constants), constants


class TestEquidistribution:
    def test_uniform_mesh_report(self):
        f = get_function('isoquad').field()
        mesh = uniform_mesh(Polygon.unit_square(), 8)
        report = equidistribution_report(f, mesh, 2, 2.0)
        assert report.errors.shape == (128,)
        # all triangles of the uniform grid are translates or reflections
        assert report.percentile_ratio == pytest.approx(1.0, rel=1e-8)
        assert report.admissibility == pytest.approx(np.sqrt(2) / 8 * np.sqrt(128))
        assert report.boundary_fraction is None
        assert report.as_dict()['triangles'] == 128
