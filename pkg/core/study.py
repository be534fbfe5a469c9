"""
Convergence studies: measured N^(m/2) e against the predicted limit
||K_{m,p}(d^m f/m!)||_{L^q}.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.binary_forms import coeff_norm
from core.corpus import CorpusFunction, StudyError
from core.lagrange import global_error
from core.meshgen import MeshError, Polygon, adapt_mesh, holder_exponent, uniform_mesh
from core.shapefn import ShapeError, ShapeQuery, SigmaTable, default_sigma_table, shape_closed, shape_oracle
from core.utils import RunConfig, read_csv_table, write_csv_table

logger = logging.getLogger(__name__)

STRATEGIES = ('adapted', 'uniform')
CSV_COLUMNS = ['N', 'error', 'scaled', 'predicted', 'ratio']


@dataclass(frozen=True)
class StudyRow:
    N: int
    error: float
    scaled: float
    predicted: float
    ratio: float
    target: int = 0
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def _midpoint_grid(domain: Polygon, n: int) -> Tuple[np.ndarray, float]:
    (xmin, ymin), (xmax, ymax) = domain.bounds()
    dx, dy = (xmax - xmin) / n, (ymax - ymin) / n
    cx = xmin + dx * (np.arange(n) + 0.5)
    cy = ymin + dy * (np.arange(n) + 0.5)
    gx, gy = np.meshgrid(cx, cy, indexing='xy')
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    return centers[domain.contains(centers)], dx * dy


def predicted_limit(f: CorpusFunction, domain: Polygon, m: int, p: float, grid: int = 128,
                    table: SigmaTable = None, query: ShapeQuery = None, oracle: bool = False) -> float:
    """||K_{m,p}(d^m f/m!)||_{L^q(domain)} by the midpoint rule on a clipped grid."""
    if m not in (2, 3) and not oracle:
        raise StudyError(f"Closed-form shape functions exist for m in (2, 3); pass oracle=True for m={m}")
    field = f.field()
    centers, cell = _midpoint_grid(domain, grid)
    if centers.shape[0] == 0:
        raise StudyError("Prediction grid does not meet the domain")
    q = holder_exponent(m, p)
    table = table or (default_sigma_table() if not oracle else None)
    query = query or ShapeQuery(m=m, p=p)

    values = np.empty(centers.shape[0])
    for k, z in enumerate(centers):
        pi = field.taylor_form(z, m)
        if coeff_norm(pi) == 0.0:
            values[k] = 0.0
        elif oracle:
            values[k] = shape_oracle(pi, query).value
        else:
            values[k] = shape_closed(pi, p, table)
    limit = float(np.sum(values ** q) * cell) ** (1.0 / q)
    logger.info(f"Predicted limit for {f.name} m={m} p={p}: {limit:.8g} ({centers.shape[0]} cells)")
    return limit


def uniform_size(domain: Polygon, target: int) -> int:
    """n for which uniform_mesh(domain, n) has about target triangles."""
    (xmin, ymin), (xmax, ymax) = domain.bounds()
    side = max(xmax - xmin, ymax - ymin)
    if domain.is_rectangle():
        # 2n^2 triangles
        return max(1, int(round(math.sqrt(target / 2.0))))
    return max(1, int(round(side * math.sqrt(target / (2.0 * domain.area())))))


def _study_point(f: CorpusFunction, domain: Polygon, m: int, p: float, strategy: str, target: int,
                 predicted: float, config: RunConfig, workers: int = 1) -> StudyRow:
    field = f.field()
    try:
        if strategy == 'adapted':
            query = ShapeQuery.from_config(m, p, config)
            mesh = adapt_mesh(field, domain, m, p, target, M=config.shape_cap, query=query,
                              macro_tiles=config.macro_tiles, workers=workers)
        else:
            mesh = uniform_mesh(domain, uniform_size(domain, target))
        error = global_error(field, mesh, m, p, config.lattice_samples, workers)
    except (MeshError, ShapeError) as e:
        logger.error(f"Study point N={target} for {f.name} failed: {e}")
        return StudyRow(target, math.nan, math.nan, predicted, math.nan, target, str(e))

    n = mesh.n_triangles
    scaled = n ** (m / 2.0) * error
    ratio = scaled / predicted if predicted > 0 else math.inf
    logger.info(f"{strategy} {f.name} N={n} (target {target}): e={error:.6g} scaled={scaled:.6g} ratio={ratio:.4g}")
    return StudyRow(n, error, scaled, predicted, ratio, target)


def converge_study(f: CorpusFunction, m: int, p: float, strategy: str, N_list: Sequence[int],
                   config: RunConfig = None, domain: Polygon = None,
                   predicted: float = None) -> List[StudyRow]:
    """One row per target triangle count, in the order of N_list."""
    if strategy not in STRATEGIES:
        raise StudyError(f"Unknown strategy {strategy!r}; choose one of {', '.join(STRATEGIES)}")
    N_list = [int(n) for n in N_list]
    if not N_list or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise StudyError(f"N_list must be non-empty and strictly increasing, got {N_list}")
    if not f.supports(m):
        logger.warning(f"{f.name} is not a standard corpus entry for m={m}")
    config = config or RunConfig.from_settings()
    domain = domain or f.domain()
    if predicted is None:
        table = SigmaTable(config.shape_cap, config.shape_grid, config.lattice_samples)
        predicted = predicted_limit(f, domain, m, p, config.predicted_grid, table)

    # outer pool over N, the rest of the threads go to each point
    outer = min(config.threads, len(N_list)) if config.threads > 1 else 1
    workers = max(1, config.threads // outer)

    def run(target):
        return _study_point(f, domain, m, p, strategy, target, predicted, config, workers)

    if outer > 1:
        logger.debug(f"Study over {len(N_list)} points: {outer} concurrent, {workers} workers each")
        with ThreadPoolExecutor(max_workers=outer) as pool:
            rows = list(pool.map(run, N_list))
    else:
        rows = [run(target) for target in N_list]
    return rows


def study_header(seed: int, fn: str, m: int, p: float, strategy: str, threads: int) -> Dict[str, str]:
    return {'seed': str(seed), 'fn': fn, 'm': str(m), 'p': _format_p(p), 'strategy': strategy,
            'threads': str(threads)}


def _format_p(p: float) -> str:
    return 'inf' if np.isinf(p) else f"{p:g}"


def write_study_csv(path: str, rows: Sequence[StudyRow], header: Dict[str, str]) -> None:
    comments = [' '.join(f"{key}={value}" for key, value in header.items())]
    comments += [f"failed N={row.target}: {row.failure}" for row in rows if row.failed]
    records = ([str(row.N)] + [repr(float(getattr(row, c))) for c in CSV_COLUMNS[1:]] for row in rows)
    write_csv_table(path, CSV_COLUMNS, records, comments)
    logger.info(f"Wrote {len(rows)} study rows to {path}")


def read_study_csv(path: str) -> Tuple[Dict[str, str], List[StudyRow]]:
    header: Dict[str, str] = {}
    failures: Dict[int, str] = {}
    rows: List[StudyRow] = []
    comments, columns, records = read_csv_table(path)

    for comment in comments:
        if comment.startswith('failed N='):
            target, _, message = comment[len('failed N='):].partition(': ')
            failures[int(target)] = message
        else:
            for item in comment.split():
                key, _, value = item.partition('=')
                header[key] = value

    if columns != CSV_COLUMNS:
        raise StudyError(f"{path}: expected columns {CSV_COLUMNS}, got {columns}")
    for record in records:
        try:
            N = int(record[0])
            values = [float(v) for v in record[1:]]
        except (ValueError, IndexError) as e:
            raise StudyError(f"{path}: malformed row {record} ({e})")
        rows.append(StudyRow(N, *values, target=N, failure=failures.get(N)))
    return header, rows


def scaled_spread(rows: Sequence[StudyRow]) -> float:
    """max/min of N^(m/2) e over the successful rows."""
    scaled = [row.scaled for row in rows if not row.failed]
    if not scaled:
        raise StudyError("No successful rows")
    return max(scaled) / min(scaled)


def row_dicts(rows: Sequence[StudyRow]) -> List[Dict]:
    return [asdict(row) for row in rows]
