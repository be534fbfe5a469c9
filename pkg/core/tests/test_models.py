import pytest
from django.db import IntegrityError

from core.models import LogEntry, SigmaConstant, StudyRecord, StudyRun

pytestmark = pytest.mark.django_db


@pytest.fixture
def study_run():
    return StudyRun.objects.create(function='isoquad', m=2, p=2.0, strategy='adapted', seed=1)


class TestLogEntry:
    def test_str(self):
        entry = LogEntry.objects.create(level='WARNING', source='mesh', message='x' * 80)
        assert 'WARNING: ' + 'x' * 50 + '...' in str(entry)
        assert entry.metadata == {}


class TestSigmaConstant:
    def test_str(self):
        constant = SigmaConstant.objects.create(m=3, p=float('inf'), sign=-1, cap=16.0, value=0.125)
        assert str(constant) == 'sigma m=3 p=inf sign=-1 cap=16: 0.125'

    def test_unique_per_cap(self):
        SigmaConstant.objects.create(m=2, p=2.0, sign=1, cap=16.0, value=0.6)
        SigmaConstant.objects.create(m=2, p=2.0, sign=1, cap=32.0, value=0.6)
        with pytest.raises(IntegrityError):
            SigmaConstant.objects.create(m=2, p=2.0, sign=1, cap=16.0, value=0.7)


class TestStudy:
    def test_run_str(self, study_run):
        assert str(study_run) == 'isoquad m=2 p=2 adapted (running)'

    def test_record_str(self, study_run):
        ok = StudyRecord.objects.create(run=study_run, target=500, triangles=512, error=1e-3, ratio=1.0234)
        failed = StudyRecord.objects.create(run=study_run, target=1000, triangles=0, failure='too thin')
        assert str(ok) == 'N=512: ratio 1.023'
        assert str(failed) == 'N=1000: failed'
        assert list(study_run.records.values_list('target', flat=True)) == [500, 1000]

    def test_records_cascade(self, study_run):
        StudyRecord.objects.create(run=study_run, target=500, triangles=512)
        study_run.delete()
        assert not StudyRecord.objects.exists()
