import numpy as np
import pytest

from core.binary_forms import HomogeneousForm
from core.meshgen import Polygon, uniform_mesh
from core.metric import SymMetric2
from core.plotting import PlotError, SvgScene, plot_levelset, plot_mesh, plot_study
from core.study import StudyRow


def form(token):
    return HomogeneousForm.parse(token)


class TestSvgScene:
    def test_output_is_deterministic(self, tmp_path):
        first, second = tmp_path / 'a.svg', tmp_path / 'b.svg'
        plot_mesh(uniform_mesh(Polygon.unit_square(), 2), str(first))
        plot_mesh(uniform_mesh(Polygon.unit_square(), 2), str(second))
        assert first.read_bytes() == second.read_bytes()
        text = first.read_text()
        assert text.startswith('<?xml')
        assert '<svg' in text

    def test_rejects_unbounded_ellipse(self):
        scene = SvgScene((-1, 1, -1, 1))
        with pytest.raises(PlotError):
            scene.add_ellipse((0, 0), SymMetric2(1.0, 0.0, 0.0))


class TestLevelset:
    def test_cubic_with_ellipses(self, tmp_path):
        out = tmp_path / 'levelset.svg'
        scene = plot_levelset(form("3:1,0,-3,0"), [0.5, 1.0, 2.0], str(out), grid=128)
        # three branches of |x(x^2 - 3y^2)| = 1 on each side of the lines
        assert len(scene.polylines) >= 6
        assert len(scene.ellipses) == 3
        assert out.stat().st_size > 0

    def test_quartic_uses_maximal_ellipse(self):
        scene = plot_levelset(form("4:1,0,0,0,1"), [0.1], grid=64)
        assert len(scene.ellipses) == 1

    def test_zero_form(self):
        with pytest.raises(PlotError):
            plot_levelset(form("2:0,0,0"), [1.0])

    def test_bad_alpha(self):
        with pytest.raises(PlotError):
            plot_levelset(form("2:1,0,1"), [0.0])


class TestMeshPlot:
    def test_edges(self):
        mesh = uniform_mesh(Polygon.unit_square(), 2)
        scene = plot_mesh(mesh)
        assert len(scene.polylines) == len(mesh.edge_map())
        assert scene.fills == []
        assert scene.title == '8 triangles'


class TestStudyPlot:
    def test_series_skips_failed_rows(self, tmp_path):
        rows = [StudyRow(100, 0.01, 1.0, 0.9, 1.11), StudyRow(200, np.nan, np.nan, 0.9, np.nan, 200, 'failed'),
                StudyRow(400, 0.0024, 0.96, 0.9, 1.07)]
        scene = plot_study(rows, str(tmp_path / 'study.svg'), title='isoquad')
        x, y, _ = scene.series[0]
        np.testing.assert_array_equal(x, [100.0, 400.0])
        assert scene.hlines[0][0] == 0.9

    def test_no_rows(self):
        with pytest.raises(PlotError):
            plot_study([StudyRow(100, np.nan, np.nan, 0.9, np.nan, 100, 'failed')])
