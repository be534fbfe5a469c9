import logging
import time

from django.core.management.base import BaseCommand, CommandError

from core.binary_forms import FormError
from core.corpus import StudyError
from core.forms import form_errors
from core.lagrange import LagrangeError
from core.meshgen import MeshError
from core.metric import MetricError
from core.models import LogEntry
from core.plotting import PlotError
from core.shapefn import ShapeError
from core.utils import ConfigError, load_config

logger = logging.getLogger(__name__)

LIBRARY_ERRORS = (FormError, LagrangeError, ShapeError, MetricError, MeshError, StudyError, PlotError, ConfigError)


class ActionCommand(BaseCommand):
    """Command with `<group> <action>` sub-actions and LogEntry bookkeeping.

    Subclasses fill ``actions`` with name -> (help, add_arguments) pairs and
    implement ``handle_<action>(config, options)``.
    """

    source = 'anisoshape'
    actions = {}

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)
        for name, (help_text, configure) in self.actions.items():
            sub = subparsers.add_parser(name, help=help_text)
            sub.add_argument('--config', help='key=value file overriding the numerical defaults')
            getattr(self, configure)(sub)

    def log_entry(self, level, message, **metadata):
        LogEntry.objects.create(level=level, source=self.source, message=message, metadata=metadata)

    def validated(self, form_class, options, **extra):
        """Run a Django form over the parsed options; CommandError on invalid input."""
        data = {name: options.get(name) for name in form_class.base_fields}
        data.update(extra)
        data = {k: ('' if v is None else str(v)) for k, v in data.items()}
        form = form_class(data)
        if not form.is_valid():
            raise CommandError(form_errors(form))
        return form.cleaned_data

    def handle(self, *args, **options):
        action = options['action']
        start_time = time.time()
        arguments = {k: v for k, v in options.items()
                     if k not in ('stdout', 'stderr', 'verbosity', 'settings', 'pythonpath', 'traceback',
                                  'no_color', 'force_color', 'skip_checks') and v is not None}
        self.log_entry('INFO', f'Starting {self.source} {action}', options=_jsonable(arguments))

        try:
            config = load_config(options.get('config'))
            details = getattr(self, f'handle_{action}')(config, options) or {}
        except CommandError as e:
            self.log_entry('ERROR', f'Invalid input for {self.source} {action}: {e}')
            raise
        except LIBRARY_ERRORS as e:
            logger.error(f"{self.source} {action} failed: {e}")
            self.log_entry('ERROR', f'Error during {self.source} {action}: {str(e)}',
                           exception_type=type(e).__name__)
            raise CommandError(str(e))

        duration = round(time.time() - start_time, 2)
        self.log_entry('INFO', f'{self.source} {action} completed', duration_seconds=duration,
                       **_jsonable(details))


def _jsonable(values):
    out = {}
    for key, value in values.items():
        if isinstance(value, float) and value != value:
            out[key] = 'nan'
        elif isinstance(value, float) and value in (float('inf'), float('-inf')):
            out[key] = str(value)
        elif isinstance(value, (str, int, float, bool)) or value is None:
            out[key] = value
        else:
            out[key] = str(value)
    return out
