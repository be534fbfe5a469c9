from core.corpus import get_function
from core.forms import MetricEvalForm, MetricFieldForm
from core.management.base import ActionCommand
from core.meshgen import Polygon
from core.metric import (
    grid_points,
    hmatrix2,
    hmatrix2_constrained,
    hmatrix3,
    hmatrix3_constrained,
    metric_field,
    regime_thresholds,
    write_metric_csv,
)


class Command(ActionCommand):
    help = 'Optimal anisotropy metrics h_pi and metric fields'
    source = 'metric'
    actions = {
        'eval': ('Metric of one form, optionally with a diameter floor alpha', 'add_eval_arguments'),
        'field': ('Sample the metric field of a corpus function to CSV', 'add_field_arguments'),
    }

    def add_eval_arguments(self, parser):
        parser.add_argument('--form', required=True, help='Form token "m:a_0,...,a_m" with m = 2 or 3')
        parser.add_argument('--alpha', type=float)

    def add_field_arguments(self, parser):
        parser.add_argument('--fn', required=True, help='Corpus function name')
        parser.add_argument('--domain', help='Polygon file, one "x y" vertex per line')
        parser.add_argument('--m', required=True)
        parser.add_argument('--p', default='2')
        parser.add_argument('--nu', type=float, required=True)
        parser.add_argument('--grid', type=int, default=64)
        parser.add_argument('--alpha-floor', dest='alpha_floor', type=float)
        parser.add_argument('--out', required=True)

    def handle_eval(self, config, options):
        data = self.validated(MetricEvalForm, options)
        pi, alpha = data['form'], data.get('alpha')
        details = {'form': pi.to_token()}

        if pi.degree == 2:
            h = hmatrix2_constrained(pi, alpha) if alpha else hmatrix2(pi)
        else:
            thresholds = regime_thresholds(pi, config.ellipse_directions)
            self.stdout.write(f'mu = {thresholds.mu:.12g}')
            self.stdout.write(f'alpha* = {thresholds.alpha_star:.12g}')
            self.stdout.write(f'beta = {thresholds.beta:.12g}')
            details.update(mu=thresholds.mu, alpha_star=thresholds.alpha_star, beta=thresholds.beta)
            if alpha:
                h = hmatrix3_constrained(pi, alpha, thresholds)
                regime = thresholds.regime(alpha)
                self.stdout.write(f'regime = {regime}')
                details['regime'] = regime
            else:
                h = hmatrix3(pi)

        self.stdout.write(self.style.SUCCESS(f'h11 = {h.h11:.12g}  h12 = {h.h12:.12g}  h22 = {h.h22:.12g}'))
        self.stdout.write(f'det = {h.det():.12g}')
        details.update(h11=h.h11, h12=h.h12, h22=h.h22, det=h.det())
        return details

    def handle_field(self, config, options):
        data = self.validated(MetricFieldForm, options)
        function = get_function(data['fn'], data['m'])
        domain = Polygon.load(data['domain']) if data.get('domain') else function.domain()
        field = metric_field(function.field(), domain, data['m'], data['p'], data['nu'], data.get('alpha_floor'))
        points = grid_points(domain, data.get('grid') or 64)
        values = field.sample(points)
        write_metric_csv(data['out'], points, values)
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(points)} metric samples to {data["out"]}'))
        return {'samples': len(points), 'out': data['out']}
