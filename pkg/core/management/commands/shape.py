from core.binary_forms import HomogeneousForm
from core.forms import ShapeEvalForm, ShapeSigmaForm
from core.management.base import ActionCommand
from core.models import SigmaConstant
from core.shapefn import (
    ShapeQuery,
    SigmaTable,
    invariant_equiv,
    invariant_equiv4,
    shape_closed,
    shape_ellipse,
    shape_oracle,
)


class Command(ActionCommand):
    help = 'Evaluate shape functions K_{m,p} and compute the sigma constants'
    source = 'shape'
    actions = {
        'eval': ('Evaluate K_{m,p}(pi) for one form', 'add_eval_arguments'),
        'sigma': ('Compute and store sigma constants for m = 2 or 3', 'add_sigma_arguments'),
    }

    def add_eval_arguments(self, parser):
        parser.add_argument('--form', required=True, help='Form token "m:a_0,...,a_m"')
        parser.add_argument('--p', default='2', help='1, 2 or inf')
        parser.add_argument('--method', default='oracle', help='oracle, closed, ellipse or invariant')
        parser.add_argument('--cap', type=float, help='Diameter cap M of the oracle')

    def add_sigma_arguments(self, parser):
        parser.add_argument('--m', required=True)
        parser.add_argument('--p', default='2')
        parser.add_argument('--cap', type=float)

    def handle_eval(self, config, options):
        data = self.validated(ShapeEvalForm, options)
        pi: HomogeneousForm = data['form']
        p, method = data['p'], data['method']
        cap = data.get('cap') or config.shape_cap

        if method == 'oracle':
            result = shape_oracle(pi, ShapeQuery.from_config(pi.degree, p, config, cap=cap))
            self.stdout.write(self.style.SUCCESS(f'K_M = {result.value:.12g} (M = {cap:g})'))
            for x, y in result.triangle.vertices:
                self.stdout.write(f'  vertex {x:.12g} {y:.12g}')
            if not result.converged:
                self.stdout.write(self.style.WARNING('optimizer budget exhausted; value is the best found'))
            return {'value': result.value, 'converged': result.converged, 'evaluations': result.evaluations}

        if method == 'closed':
            table = SigmaTable(cap, config.shape_grid, config.lattice_samples)
            value = shape_closed(pi, p, table)
        elif method == 'ellipse':
            value = shape_ellipse(pi, config.ellipse_directions)
        elif pi.degree == 4:
            value = invariant_equiv4(pi)
        else:
            value = invariant_equiv(pi, config.multiplicity_tol)
        self.stdout.write(self.style.SUCCESS(f'{method} = {value:.12g}'))
        return {'value': value, 'method': method}

    def handle_sigma(self, config, options):
        data = self.validated(ShapeSigmaForm, options)
        m, p = data['m'], data['p']
        cap = data.get('cap') or config.shape_cap
        table = SigmaTable(cap, config.shape_grid, config.lattice_samples)
        stored = {}
        for sign in (1, -1):
            value = table.get(m, p, sign)
            SigmaConstant.objects.update_or_create(
                m=m, p=p, sign=sign, cap=cap,
                defaults={'value': value, 'provenance': table.provenance(m, p, sign) or ''},
            )
            label = 'sigma' if m == 2 else 'sigma*'
            self.stdout.write(f'{label}_{p:g}({"+" if sign > 0 else "-"}) = {value:.12g}')
            stored[f'sign{sign:+d}'] = value
        self.stdout.write(self.style.SUCCESS(f'Stored sigma constants for m={m}, p={p:g}, M={cap:g}'))
        return stored
