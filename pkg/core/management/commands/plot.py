from core.forms import LevelsetForm
from core.management.base import ActionCommand
from core.meshgen import Mesh
from core.plotting import plot_levelset, plot_mesh, plot_study
from core.study import read_study_csv


class Command(ActionCommand):
    help = 'Render level sets, meshes and convergence studies to SVG'
    source = 'plot'
    actions = {
        'levelset': ('Level set |pi| = 1 with maximal ellipses', 'add_levelset_arguments'),
        'mesh': ('Triangle edges of a MESH2 file', 'add_mesh_arguments'),
        'study': ('Scaled error against N from a study CSV', 'add_study_arguments'),
    }

    def add_levelset_arguments(self, parser):
        parser.add_argument('--form', required=True)
        parser.add_argument('--alphas', default='', help='Comma-separated diameter floors')
        parser.add_argument('--out', required=True)

    def add_mesh_arguments(self, parser):
        parser.add_argument('--in', dest='path', required=True)
        parser.add_argument('--out', required=True)

    def add_study_arguments(self, parser):
        parser.add_argument('--in', dest='path', required=True)
        parser.add_argument('--out', required=True)

    def handle_levelset(self, config, options):
        data = self.validated(LevelsetForm, options)
        scene = plot_levelset(data['form'], data['alphas'], data['out'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {data["out"]}'))
        return {'ellipses': len(scene.ellipses), 'contours': len(scene.polylines)}

    def handle_mesh(self, config, options):
        mesh = Mesh.load(options['path'])
        plot_mesh(mesh, options['out'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {options["out"]}'))
        return {'triangles': mesh.n_triangles}

    def handle_study(self, config, options):
        header, rows = read_study_csv(options['path'])
        title = ' '.join(f'{k}={header[k]}' for k in ('fn', 'm', 'p', 'strategy') if k in header)
        plot_study(rows, options['out'], title)
        self.stdout.write(self.style.SUCCESS(f'Wrote {options["out"]}'))
        return {'rows': len(rows)}
