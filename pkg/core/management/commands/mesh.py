from django.core.management.base import CommandError

from core.corpus import get_function
from core.forms import MeshAdaptForm, MeshUniformForm
from core.management.base import ActionCommand
from core.meshgen import Mesh, Polygon, adapt_mesh, check_conforming, equidistribution_report, uniform_mesh
from core.shapefn import ShapeQuery


class Command(ActionCommand):
    help = 'Build adapted or uniform meshes and check them'
    source = 'mesh'
    actions = {
        'adapt': ('Adapted mesh for a corpus function', 'add_adapt_arguments'),
        'uniform': ('Uniform baseline mesh', 'add_uniform_arguments'),
        'check': ('Check that a MESH2 file is conforming', 'add_check_arguments'),
    }

    def add_adapt_arguments(self, parser):
        parser.add_argument('--fn', required=True)
        parser.add_argument('--m', required=True)
        parser.add_argument('--p', default='2')
        parser.add_argument('--N', required=True, help='Target triangle count')
        parser.add_argument('--cap', type=float, help='Diameter cap M of the shape oracle')
        parser.add_argument('--out', required=True)

    def add_uniform_arguments(self, parser):
        parser.add_argument('--n', required=True)
        parser.add_argument('--domain', help='Polygon file; defaults to the unit square')
        parser.add_argument('--out', required=True)

    def add_check_arguments(self, parser):
        parser.add_argument('path')
        parser.add_argument('--domain', help='Polygon file to check coverage against')

    def handle_adapt(self, config, options):
        data = self.validated(MeshAdaptForm, options)
        function = get_function(data['fn'], data['m'])
        m, p = data['m'], data['p']
        cap = data.get('cap') or config.shape_cap
        query = ShapeQuery.from_config(m, p, config, cap=cap)
        mesh = adapt_mesh(function.field(), function.domain(), m, p, data['N'], M=cap, query=query,
                          macro_tiles=config.macro_tiles, workers=config.threads)
        mesh.save(data['out'])

        report = equidistribution_report(function.field(), mesh, m, p, config.lattice_samples, config.threads)
        self.stdout.write(self.style.SUCCESS(f'Wrote {mesh.n_triangles} triangles to {data["out"]}'))
        self.stdout.write(f'admissibility sup diam * sqrt(N) = {report.admissibility:.6g}')
        self.stdout.write(f'error percentile ratio p90/p10 = {report.percentile_ratio:.6g}')
        self.stdout.write(f'boundary-layer fraction = {report.boundary_fraction:.4f}')
        return {'triangles': mesh.n_triangles, **report.as_dict()}

    def handle_uniform(self, config, options):
        data = self.validated(MeshUniformForm, options)
        domain = Polygon.load(data['domain']) if data.get('domain') else Polygon.unit_square()
        mesh = uniform_mesh(domain, data['n'])
        mesh.save(data['out'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {mesh.n_triangles} triangles to {data["out"]}'))
        return {'triangles': mesh.n_triangles}

    def handle_check(self, config, options):
        mesh = Mesh.load(options['path'])
        domain = Polygon.load(options['domain']) if options.get('domain') else None
        report = check_conforming(mesh, domain)
        if not report.passed:
            raise CommandError(f'{options["path"]}: {report}')
        self.stdout.write(self.style.SUCCESS(f'{options["path"]}: conforming, {mesh.n_triangles} triangles'))
        return {'triangles': mesh.n_triangles, 'passed': True}
