"""Geodesic-error evaluation of correspondence predictions.

The error of a predicted target vertex is its geodesic distance to the true
target vertex on the target mesh, divided by the square root of the target
mesh's surface area. Geodesic distances are shortest paths over the edge graph
weighted by Euclidean edge lengths. Symmetric flips count as errors.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse import csgraph

from .checkpoint import Checkpoint
from .features import FeatureMatrix
from .ioformat import Table, write_table
from .mesh import HalfEdgeMesh, VertexId
from .model import Prediction
from .training import infer
from .util import UsageError, ValidationError, debug, default_threads, derive_seed, parallel_map

DEFAULT_RADII = "0:0.25:0.0025"


@dataclass(frozen=True)
class GeodesicField:
    """Edge-graph distances from `source` to every vertex; unreachable
    vertices are at `inf`."""

    source: VertexId
    distances: np.ndarray
    scale: float  # sqrt of the surface area

    @property
    def normalized(self) -> np.ndarray:
        return self.distances / self.scale

    @property
    def unreachable(self) -> np.ndarray:
        return np.flatnonzero(np.isinf(self.distances))


def _check_vertex(mesh: HalfEdgeMesh, v: int, what: str = "vertex") -> None:
    if not 0 <= v < mesh.num_vertices:
        raise ValidationError(f"{what} {v} out of range for a mesh of {mesh.num_vertices} vertices")


def normalization(mesh: HalfEdgeMesh) -> float:
    area = mesh.surface_area()
    if area <= 0:
        raise ValidationError("cannot normalize distances on a mesh without area")
    return float(np.sqrt(area))


def geodesic_distances(mesh: HalfEdgeMesh, source: VertexId) -> GeodesicField:
    _check_vertex(mesh, source, "source vertex")
    distances = csgraph.dijkstra(mesh.edge_graph, directed=False, indices=source)
    field = GeodesicField(source, distances, normalization(mesh))
    if len(field.unreachable):
        debug(f"{len(field.unreachable)} vertices unreachable from vertex {source}")
    return field


def distance_matrix(
    mesh: HalfEdgeMesh, sources: Sequence[VertexId], threads: Optional[int] = 1
) -> np.ndarray:
    """Rows of edge-graph distances from each of `sources`. With several
    threads the sources are split into chunks; every row is computed on its
    own, so the result does not depend on the thread count."""
    sources = np.asarray(sources, dtype=np.int64)
    threads = threads or default_threads()
    if threads <= 1 or len(sources) < 2:
        return csgraph.dijkstra(mesh.edge_graph, directed=False, indices=sources)
    chunks = np.array_split(sources, min(threads, len(sources)))
    rows = parallel_map(
        lambda chunk: csgraph.dijkstra(mesh.edge_graph, directed=False, indices=chunk),
        chunks,
        threads,
    )
    return np.vstack(rows)


def _check_labels(labels: np.ndarray, mesh: HalfEdgeMesh, what: str) -> None:
    if len(labels) and (labels.min() < 0 or labels.max() >= mesh.num_vertices):
        raise ValidationError(
            f"{what} must lie in [0, {mesh.num_vertices}), "
            f"found [{labels.min()}, {labels.max()}]"
        )


def vertex_errors(
    prediction: Prediction,
    ground_truth: np.ndarray,
    target_mesh: HalfEdgeMesh,
    threads: Optional[int] = 1,
) -> np.ndarray:
    """Normalized geodesic error of every source vertex."""
    predicted = np.asarray(prediction.targets)
    truth = np.asarray(ground_truth)
    if predicted.shape != truth.shape:
        raise ValidationError(
            f"prediction covers {len(predicted)} vertices but ground truth covers {len(truth)}"
        )
    _check_labels(predicted, target_mesh, "predicted targets")
    _check_labels(truth, target_mesh, "ground-truth targets")
    sources, inverse = np.unique(truth, return_inverse=True)
    distances = distance_matrix(target_mesh, sources, threads)
    return distances[inverse.ravel(), predicted] / normalization(target_mesh)


@dataclass(frozen=True)
class GeodesicErrorCurve:
    radii: np.ndarray
    fractions: np.ndarray
    auc: float

    @classmethod
    def from_errors(cls, errors: np.ndarray, radii: np.ndarray) -> "GeodesicErrorCurve":
        """The empirical CDF of `errors` sampled at `radii`."""
        if not len(errors):
            raise ValidationError("cannot build a curve from zero correspondences")
        ordered = np.sort(errors)
        fractions = np.searchsorted(ordered, radii, side="right") / len(ordered)
        return cls(radii, fractions, trapezoid_area(radii, fractions))

    def table(self) -> Table:
        return Table(
            zip(self.radii.tolist(), self.fractions.tolist()),
            header=["radius", "fraction"],
            comments=[f"auc={self.auc!r}"],
        )


def trapezoid_area(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)


def parse_radii(spec: str = DEFAULT_RADII) -> np.ndarray:
    """Parses a radius grid, either `start:stop:step` (stop included) or a
    comma-separated list of ascending radii."""
    try:
        if ":" in spec:
            start, stop, step = (float(x) for x in spec.split(":"))
            if step <= 0 or stop < start:
                raise UsageError(f"bad radius grid {spec!r}: need step > 0 and stop >= start")
            count = int(round((stop - start) / step)) + 1
            radii = np.linspace(start, stop, count)
        else:
            radii = np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise UsageError(f"bad radius grid {spec!r}") from None
    if (radii < 0).any() or (np.diff(radii) <= 0).any():
        raise UsageError(f"radii must be non-negative and ascending: {spec!r}")
    return radii


def evaluate(
    prediction: Prediction,
    ground_truth: np.ndarray,
    target_mesh: HalfEdgeMesh,
    radii: Optional[np.ndarray] = None,
    threads: Optional[int] = 1,
) -> GeodesicErrorCurve:
    """Fraction of vertices whose prediction lies within each normalized
    geodesic radius of the true target."""
    radii = parse_radii() if radii is None else np.asarray(radii, dtype=np.float64)
    errors = vertex_errors(prediction, ground_truth, target_mesh, threads)
    curve = GeodesicErrorCurve.from_errors(errors, radii)
    debug(f"exact matches: {curve.fractions[0] if radii[0] == 0 else 'n/a'}, auc={curve.auc}")
    return curve


@dataclass(frozen=True)
class SweepResult:
    seeds: List[int]
    curves: List[GeodesicErrorCurve]

    @property
    def radii(self) -> np.ndarray:
        return self.curves[0].radii

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([c.fractions for c in self.curves])

    @property
    def mean(self) -> np.ndarray:
        return self.stacked.mean(axis=0)

    @property
    def min(self) -> np.ndarray:
        return self.stacked.min(axis=0)

    @property
    def max(self) -> np.ndarray:
        return self.stacked.max(axis=0)

    @property
    def spread(self) -> float:
        """Largest per-radius gap between the best and the worst run."""
        return float((self.max - self.min).max())

    def table(self) -> Table:
        return Table(
            zip(self.radii.tolist(), self.mean.tolist(), self.min.tolist(), self.max.tolist()),
            header=["radius", "mean", "min", "max"],
        )


def run_seed(base_seed: int, run: int) -> int:
    """Inference seed of sweep run `run`."""
    return derive_seed(base_seed, run)


def robustness_sweep(
    checkpoint: Checkpoint,
    mesh: HalfEdgeMesh,
    features: FeatureMatrix,
    ground_truth: np.ndarray,
    runs: int,
    base_seed: int,
    radii: Optional[np.ndarray] = None,
    *,
    target_mesh: Optional[HalfEdgeMesh] = None,
    threads: Optional[int] = 1,
) -> SweepResult:
    """Repeats inference with `runs` different spiral-start seeds and
    evaluates every run.

    `target_mesh` is the template the labels index. It may only be omitted
    when `mesh` is itself the template: its vertex count must equal the
    network's class count."""
    if runs < 1:
        raise ValidationError(f"a sweep needs at least one run, got {runs}")
    if target_mesh is None:
        classes = checkpoint.spec.classes
        if mesh.num_vertices != classes:
            raise ValidationError(
                f"the network predicts {classes} template vertices but the source mesh has "
                f"{mesh.num_vertices}; pass the template as the target mesh"
            )
        target_mesh = mesh
    seeds = [run_seed(base_seed, run) for run in range(runs)]
    curves = []
    for run, seed in enumerate(seeds):
        prediction = infer(checkpoint, mesh, features, seed, threads=threads)
        curves.append(evaluate(prediction, ground_truth, target_mesh, radii, threads))
        debug(f"sweep run {run}: seed={seed} auc={curves[-1].auc}")
    return SweepResult(seeds, curves)


def write_curve(curve: GeodesicErrorCurve, path: Optional[str] = None) -> None:
    """CSV with a `radius,fraction` header and a trailing `# auc=` line."""
    write_table(curve.table(), path, "csv")


def write_sweep(result: SweepResult, path: Optional[str] = None) -> None:
    write_table(result.table(), path, "csv")


def write_vertex_errors(errors: np.ndarray, path: Optional[str] = None) -> None:
    write_table(Table(enumerate(errors.tolist()), header=["vertex", "error"]), path, "csv")
