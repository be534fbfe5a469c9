from django.utils import timezone

from core.corpus import get_function
from core.forms import StudyForm
from core.management.base import ActionCommand
from core.models import SigmaConstant, StudyRecord, StudyRun
from core.shapefn import SigmaTable
from core.study import converge_study, predicted_limit, study_header, write_study_csv


class Command(ActionCommand):
    help = 'Convergence studies of the interpolation error against the predicted limit'
    source = 'study'
    actions = {
        'converge': ('Measure N^(m/2) e over a sequence of meshes', 'add_converge_arguments'),
    }

    def add_converge_arguments(self, parser):
        parser.add_argument('--fn', required=True)
        parser.add_argument('--m', required=True)
        parser.add_argument('--p', default='2')
        parser.add_argument('--strategy', default='adapted', help='adapted or uniform')
        parser.add_argument('--N', required=True, help='Comma-separated increasing triangle counts')
        parser.add_argument('--out', required=True)

    def sigma_table(self, config):
        """SigmaTable seeded with constants stored by `shape sigma`."""
        table = SigmaTable(config.shape_cap, config.shape_grid, config.lattice_samples)
        for row in SigmaConstant.objects.filter(cap=config.shape_cap):
            table.seed(row.m, row.p, row.sign, row.value, f'database ({row.provenance})')
        return table

    def handle_converge(self, config, options):
        data = self.validated(StudyForm, options)
        function = get_function(data['fn'], data['m'])
        m, p, strategy = data['m'], data['p'], data['strategy']

        run = StudyRun.objects.create(function=function.name, m=m, p=p, strategy=strategy,
                                      seed=config.study_seed, threads=config.threads,
                                      output_path=data['out'])
        try:
            domain = function.domain()
            oracle = m not in (2, 3)
            predicted = predicted_limit(function, domain, m, p, config.predicted_grid,
                                        None if oracle else self.sigma_table(config), oracle=oracle)
            run.predicted = predicted
            run.save(update_fields=['predicted'])
            self.stdout.write(f'predicted limit = {predicted:.10g}')

            rows = converge_study(function, m, p, strategy, data['N'], config, domain, predicted)
        except Exception:
            run.status = 'failed'
            run.finished_at = timezone.now()
            run.save(update_fields=['status', 'finished_at'])
            raise

        header = study_header(config.study_seed, function.name, m, p, strategy, config.threads)
        write_study_csv(data['out'], rows, header)
        for row in rows:
            StudyRecord.objects.create(
                run=run, target=row.target, triangles=row.N if not row.failed else 0,
                error=None if row.failed else row.error, scaled=None if row.failed else row.scaled,
                predicted=row.predicted, ratio=None if row.failed else row.ratio,
                failure=row.failure or '',
            )
            if row.failed:
                self.stdout.write(self.style.WARNING(f'N={row.target}: failed ({row.failure})'))
            else:
                self.stdout.write(f'N={row.N}: e={row.error:.6g} scaled={row.scaled:.6g} ratio={row.ratio:.4f}')

        run.status = 'done'
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'finished_at'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(rows)} rows to {data["out"]}'))
        return {'run': run.pk, 'rows': len(rows), 'failed': sum(row.failed for row in rows)}
