"""
Deterministic SVG figures: level sets with their maximal ellipses, meshes,
and convergence plots.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import contourpy
import matplotlib
import numpy as np
from matplotlib.collections import LineCollection, PolyCollection
from matplotlib.figure import Figure
from matplotlib.patches import Ellipse

from core.binary_forms import HomogeneousForm, evaluate, unit_circle_profile
from core.meshgen import Mesh
from core.metric import MetricError, SymMetric2, constrained_metric
from core.shapefn import maximal_ellipse
from core.study import StudyRow

logger = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'anisoshape'
matplotlib.rcParams['svg.fonttype'] = 'path'

LEVELSET_GRID = 512
ELLIPSE_COLORS = ('tab:blue', 'tab:orange', 'tab:green', 'tab:red', 'tab:purple', 'tab:brown')


class PlotError(Exception):
    """Custom exception for plotting errors."""
    pass


@dataclass
class SvgScene:
    viewport: Tuple[float, float, float, float]
    title: str = ''
    polylines: List[Tuple[np.ndarray, str]] = field(default_factory=list)
    fills: List[Tuple[np.ndarray, str]] = field(default_factory=list)
    ellipses: List[Tuple[np.ndarray, SymMetric2, str]] = field(default_factory=list)
    series: List[Tuple[np.ndarray, np.ndarray, str]] = field(default_factory=list)
    hlines: List[Tuple[float, str]] = field(default_factory=list)
    log_axes: bool = False
    labels: Tuple[str, str] = ('x', 'y')

    def add_polyline(self, points, color: str = 'black') -> None:
        self.polylines.append((np.asarray(points, dtype=float), color))

    def add_ellipse(self, center, metric: SymMetric2, label: str = '') -> None:
        if metric.min_eigenvalue() <= 0:
            raise PlotError(f"Cannot draw the unbounded ellipse of {metric}")
        self.ellipses.append((np.asarray(center, dtype=float), metric, label))

    def figure(self) -> Figure:
        fig = Figure(figsize=(6, 6))
        ax = fig.add_subplot()
        if self.fills:
            colors = [color for _, color in self.fills]
            ax.add_collection(PolyCollection([pts for pts, _ in self.fills], facecolors=colors,
                                             edgecolors='none'))
        if self.polylines:
            ax.add_collection(LineCollection([pts for pts, _ in self.polylines],
                                             colors=[c for _, c in self.polylines], linewidths=0.6))
        for k, (center, metric, label) in enumerate(self.ellipses):
            eigvals, vectors = np.linalg.eigh(metric.matrix())
            angle = float(np.degrees(np.arctan2(vectors[1, 0], vectors[0, 0])))
            ax.add_patch(Ellipse(center, 2.0 / np.sqrt(eigvals[0]), 2.0 / np.sqrt(eigvals[1]), angle=angle,
                                 fill=False, linewidth=1.2, label=label or None,
                                 edgecolor=ELLIPSE_COLORS[k % len(ELLIPSE_COLORS)]))
        for x, y, label in self.series:
            ax.plot(x, y, 'o-', label=label)
        for value, label in self.hlines:
            ax.axhline(value, linestyle=':', color='black', label=label)

        if self.log_axes:
            ax.set_xscale('log')
            ax.set_yscale('log')
            ax.grid(True, which='both', linewidth=0.3)
        else:
            xmin, xmax, ymin, ymax = self.viewport
            ax.set_xlim(xmin, xmax)
            ax.set_ylim(ymin, ymax)
            ax.set_aspect('equal')
        ax.set_xlabel(self.labels[0])
        ax.set_ylabel(self.labels[1])
        if self.title:
            ax.set_title(self.title)
        if any(label for *_, label in self.ellipses) or self.series:
            ax.legend(loc='upper right', fontsize=8)
        return fig

    def write(self, path: str) -> None:
        fig = self.figure()
        fig.savefig(path, format='svg', metadata={'Date': None}, bbox_inches='tight')
        logger.info(f"Wrote {path}")


def _levelset_metric(pi: HomogeneousForm, alpha: float) -> SymMetric2:
    if pi.degree in (2, 3):
        return constrained_metric(pi, alpha)
    return SymMetric2.from_matrix(maximal_ellipse(pi, floor=alpha).matrix)


def plot_levelset(pi: HomogeneousForm, alphas: Sequence[float], out: Optional[str] = None,
                  grid: int = LEVELSET_GRID) -> SvgScene:
    """|pi| = 1 with the ellipses E(h_{pi,alpha}) for each alpha."""
    if pi.is_zero():
        raise PlotError("The level set of the zero form is the whole plane")
    metrics = []
    for alpha in alphas:
        if alpha <= 0:
            raise PlotError(f"alpha must be positive, got {alpha}")
        try:
            metrics.append((alpha, _levelset_metric(pi, alpha)))
        except MetricError as e:
            raise PlotError(str(e))

    _, profile = unit_circle_profile(pi, 720)
    reach = float(profile.max()) ** (-1.0 / pi.degree)
    if metrics:
        reach = max(reach, max(1.0 / np.sqrt(h.min_eigenvalue()) for _, h in metrics))
    half = 1.15 * reach

    xs = np.linspace(-half, half, grid)
    gx, gy = np.meshgrid(xs, xs, indexing='xy')
    values = np.abs(evaluate(pi, np.stack([gx, gy], axis=-1)))
    scene = SvgScene((-half, half, -half, half), title=f"|{pi}| = 1")
    for line in contourpy.contour_generator(gx, gy, values).lines(1.0):
        scene.add_polyline(line, 'black')
    for alpha, metric in metrics:
        scene.add_ellipse((0.0, 0.0), metric, f"alpha={alpha:g}")
    if out:
        scene.write(out)
    return scene


def plot_mesh(mesh: Mesh, out: Optional[str] = None, title: str = '') -> SvgScene:
    """Triangle edges; boundary-layer triangles of adapted meshes are shaded."""
    if mesh.n_triangles == 0:
        raise PlotError("Mesh has no triangles")
    (xmin, ymin), (xmax, ymax) = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    pad = 0.02 * max(xmax - xmin, ymax - ymin)
    scene = SvgScene((xmin - pad, xmax + pad, ymin - pad, ymax + pad),
                     title=title or f"{mesh.n_triangles} triangles")
    corners = mesh.vertices[mesh.triangles]
    if mesh.tags is not None:
        for pts in corners[mesh.tags == 1]:
            scene.fills.append((pts, '#f4c7a1'))
    for i, j in sorted(mesh.edge_map()):
        scene.add_polyline(mesh.vertices[[i, j]], 'black')
    if out:
        scene.write(out)
    return scene


def plot_study(rows: Sequence[StudyRow], out: Optional[str] = None, title: str = '') -> SvgScene:
    """Scaled error N^(m/2) e against N with the predicted limit."""
    good = [row for row in rows if not row.failed]
    if not good:
        raise PlotError("No successful study rows to plot")
    scene = SvgScene((0, 1, 0, 1), title=title, log_axes=True, labels=('N', 'N^(m/2) e'))
    scene.series.append((np.array([r.N for r in good], dtype=float),
                         np.array([r.scaled for r in good]), 'measured'))
    scene.hlines.append((good[0].predicted, 'predicted limit'))
    if out:
        scene.write(out)
    return scene
