import re
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from core.models import LogEntry, SigmaConstant, StudyRecord, StudyRun
from core.study import read_study_csv

pytestmark = pytest.mark.django_db


def run(*args):
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


def number_after(label, text):
    match = re.search(rf'{re.escape(label)} = (\S+)', text)
    assert match, f'{label} missing from {text!r}'
    return float(match.group(1))


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / 'fast.env'
    path.write_text("SHAPE_CAP=4\nSHAPE_GRID=8,8,6\nPREDICTED_GRID=16\nANISOSHAPE_THREADS=1\n")
    return str(path)


class TestMeshCommand:
    def test_uniform_then_check(self, tmp_path):
        path = str(tmp_path / 'square.m2')
        output = run('mesh', 'uniform', '--n', '2', '--out', path)
        assert 'Wrote 8 triangles' in output
        assert 'conforming, 8 triangles' in run('mesh', 'check', path)

        messages = list(LogEntry.objects.filter(source='mesh').values_list('message', flat=True))
        assert 'Starting mesh uniform' in messages
        assert 'mesh check completed' in messages

    def test_check_reports_hanging_node(self, tmp_path):
        path = tmp_path / 'hanging.m2'
        path.write_text("MESH2 5 3\n0 0\n2 0\n2 2\n0 2\n1 1\n0 1 2\n0 4 3\n4 2 3\n")
        with pytest.raises(CommandError, match='hanging'):
            run('mesh', 'check', str(path))
        assert LogEntry.objects.filter(source='mesh', level='ERROR').exists()

    def test_adapt_rejects_max_norm(self, tmp_path):
        with pytest.raises(CommandError, match='--p'):
            run('mesh', 'adapt', '--fn', 'isoquad', '--m', '2', '--p', 'inf', '--N', '500',
                '--out', str(tmp_path / 'a.m2'))


class TestMetricCommand:
    def test_cubic_with_complex_roots(self):
        output = run('metric', 'eval', '--form', '3:1,0,3,0')
        assert number_after('h11', output) == pytest.approx(2 ** (1 / 3), rel=1e-6)
        assert number_after('h22', output) == pytest.approx(2 ** (1 / 3), rel=1e-6)
        assert 'mu = ' in output

    def test_quadratic_with_floor(self):
        output = run('metric', 'eval', '--form', '2:1,0,1', '--alpha', '3')
        assert number_after('det', output) == pytest.approx(9.0, rel=1e-9)

    def test_bad_token(self):
        with pytest.raises(CommandError, match='--form'):
            run('metric', 'eval', '--form', '3:1,2')
        entry = LogEntry.objects.filter(source='metric', level='ERROR').get()
        assert entry.message.startswith('Invalid input for metric eval')

    def test_field_csv(self, tmp_path):
        out = tmp_path / 'metric.csv'
        run('metric', 'field', '--fn', 'isoquad', '--m', '2', '--nu', '1', '--grid', '4', '--out', str(out))
        lines = out.read_text().splitlines()
        assert len(lines) == 17
        assert lines[0] == 'x,y,h11,h12,h22'


class TestShapeCommand:
    def test_closed_value(self):
        output = run('shape', 'eval', '--form', '2:1,0,1', '--method', 'closed')
        assert number_after('closed', output) == pytest.approx(4 / (3 * 5 ** 0.5), rel=1e-10)

    def test_ellipse_value(self):
        output = run('shape', 'eval', '--form', '2:1,0,1', '--method', 'ellipse')
        assert number_after('ellipse', output) == pytest.approx(1 / 3.141592653589793, rel=1e-6)

    def test_sigma_is_stored(self, fast_config):
        run('shape', 'sigma', '--m', '2', '--p', '2', '--config', fast_config)
        constants = SigmaConstant.objects.filter(m=2, p=2.0, cap=4.0)
        assert constants.count() == 2
        assert constants.get(sign=1).value == pytest.approx(4 / (3 * 5 ** 0.5))
        assert constants.get(sign=-1).value > 0


class TestStudyAndPlotCommands:
    def test_uniform_study_round_trip(self, tmp_path, fast_config):
        csv_path = str(tmp_path / 'study.csv')
        run('study', 'converge', '--fn', 'isoquad', '--m', '2', '--strategy', 'uniform', '--N', '50,200',
            '--out', csv_path, '--config', fast_config)

        study = StudyRun.objects.get()
        assert study.status == 'done'
        assert study.predicted == pytest.approx(4 / (3 * 5 ** 0.5), rel=1e-9)
        assert StudyRecord.objects.filter(run=study).count() == 2

        header, rows = read_study_csv(csv_path)
        assert header['fn'] == 'isoquad' and header['strategy'] == 'uniform'
        assert [row.N for row in rows] == [50, 200]

        svg = tmp_path / 'study.svg'
        run('plot', 'study', '--in', csv_path, '--out', str(svg))
        assert svg.read_text().startswith('<?xml')

    def test_decreasing_targets(self, tmp_path):
        with pytest.raises(CommandError, match='increasing'):
            run('study', 'converge', '--fn', 'isoquad', '--m', '2', '--N', '200,100',
                '--out', str(tmp_path / 'study.csv'))
        assert not StudyRun.objects.exists()

    def test_levelset_plot(self, tmp_path):
        svg = tmp_path / 'levelset.svg'
        run('plot', 'levelset', '--form', '3:1,0,-3,0', '--alphas', '0.5,2', '--out', str(svg))
        assert svg.exists()
        entry = LogEntry.objects.filter(source='plot', message='plot levelset completed').get()
        assert entry.metadata['ellipses'] == 2
