import csv
import os
import logging
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import environ
from django.conf import settings

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Custom exception for run configuration errors."""
    pass


@dataclass(frozen=True)
class RunConfig:
    """Snapshot of the tunable numerical defaults.

    Built from Django settings; a plain ``key=value`` file may override any
    field (keys are the upper-case setting names, e.g. ``SHAPE_CAP=32``).
    """

    shape_cap: float = 16.0
    shape_grid: Tuple[int, int, int] = (24, 24, 16)
    shape_tol: float = 1e-6
    shape_max_iter: int = 400
    lattice_samples: int = 64
    ellipse_directions: int = 720
    multiplicity_tol: float = 1e-6
    predicted_grid: int = 128
    study_seed: int = 0x5EED
    macro_tiles: int = 2500
    threads: int = 1

    @classmethod
    def from_settings(cls) -> 'RunConfig':
        return cls(
            shape_cap=float(getattr(settings, 'SHAPE_CAP', 16.0)),
            shape_grid=tuple(getattr(settings, 'SHAPE_GRID', (24, 24, 16))),
            shape_tol=float(getattr(settings, 'SHAPE_TOL', 1e-6)),
            shape_max_iter=int(getattr(settings, 'SHAPE_MAX_ITER', 400)),
            lattice_samples=int(getattr(settings, 'LATTICE_SAMPLES', 64)),
            ellipse_directions=int(getattr(settings, 'ELLIPSE_DIRECTIONS', 720)),
            multiplicity_tol=float(getattr(settings, 'MULTIPLICITY_TOL', 1e-6)),
            predicted_grid=int(getattr(settings, 'PREDICTED_GRID', 128)),
            study_seed=int(getattr(settings, 'STUDY_SEED', 0x5EED)),
            macro_tiles=int(getattr(settings, 'MACRO_TILES', 2500)),
            threads=worker_count(),
        )

    @classmethod
    def from_file(cls, path: str, base: 'RunConfig' = None) -> 'RunConfig':
        """Overlay a ``key=value`` file on ``base`` (default: settings)."""
        base = base or cls.from_settings()
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")

        # Private ENVIRON so the file never leaks into os.environ.
        reader = type('FileEnv', (environ.Env,), {'ENVIRON': {}})
        reader.read_env(path, overwrite=True)
        return base.with_overrides(reader.ENVIRON)

    def with_overrides(self, values: Dict[str, Any]) -> 'RunConfig':
        known = {f.name: f for f in fields(self)}
        aliases = {'anisoshape_threads': 'threads'}
        changes: Dict[str, Any] = {}
        for key, raw in values.items():
            name = aliases.get(key.lower(), key.lower())
            if name not in known:
                raise ConfigError(f"Unknown config key: {key}")
            changes[name] = _coerce(name, getattr(self, name), raw)
        if changes:
            logger.info(f"Config overrides applied: {sorted(changes)}")
        config = replace(self, **changes)
        config.validate()
        return config

    def validate(self) -> None:
        if self.shape_cap <= 0:
            raise ConfigError("shape_cap must be positive")
        if len(self.shape_grid) != 3 or min(self.shape_grid) < 2:
            raise ConfigError("shape_grid needs three sizes >= 2")
        if self.lattice_samples < 2 or self.ellipse_directions < 8:
            raise ConfigError("sampling densities too small")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.macro_tiles < 1:
            raise ConfigError("macro_tiles must be >= 1")


def _coerce(name: str, current: Any, raw: Any) -> Any:
    try:
        if isinstance(current, tuple):
            if isinstance(raw, str):
                raw = [part for part in raw.replace(';', ',').split(',') if part.strip()]
            return tuple(int(part) for part in raw)
        if isinstance(current, bool):
            return str(raw).lower() in ('1', 'true', 'yes', 'on')
        if isinstance(current, int):
            return int(str(raw), 0)
        return type(current)(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad value for {name}: {raw!r} ({e})")


def worker_count() -> int:
    """Thread-pool size, capped by ANISOSHAPE_THREADS."""
    configured = getattr(settings, 'ANISOSHAPE_THREADS', None)
    if configured is None:
        configured = os.cpu_count() or 1
    return max(1, int(configured))


def load_config(path: str = None) -> RunConfig:
    if path:
        return RunConfig.from_file(path)
    return RunConfig.from_settings()


def write_csv_table(path: str, columns: Sequence[str], records: Iterable[Sequence[Any]],
                    comments: Sequence[str] = ()) -> int:
    """'# ' comment lines, a header row, then one CSV record per row. Returns the record count."""
    count = 0
    with open(path, 'w', newline='') as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle)
        writer.writerow(list(columns))
        for record in records:
            writer.writerow(list(record))
            count += 1
    return count


def read_csv_table(path: str) -> Tuple[List[str], List[str], List[List[str]]]:
    """(comments, columns, records) of a file laid out by write_csv_table."""
    with open(path, newline='') as handle:
        lines = handle.read().splitlines()
    comments = [line[1:].strip() for line in lines if line.startswith('#')]
    body = [line for line in lines if line.strip() and not line.startswith('#')]
    reader = csv.reader(body)
    columns = next(reader, [])
    return comments, columns, [record for record in reader]
