"""Per-vertex descriptors: VFEAT1 files, raw geometric fallbacks, metric
augmentation and serialization of features along spirals."""

from dataclasses import dataclass
import os
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .ioformat import Table, read_int_rows, write_table
from .mesh import HalfEdgeMesh
from .spiral import PAD, SpiralSequence, SpiralTable, stack_spirals
from .util import DataFormatError, NumericError, ValidationError, check_finite, debug

MAGIC = b"VFEAT1\n"
RAW_KINDS = ("position", "normal", "position+normal")
DISTANCES = ("euclidean", "geodesic")


@dataclass(frozen=True)
class FeatureMatrix:
    """`V×D` descriptor rows, one per mesh vertex."""

    values: np.ndarray
    name: str = "features"

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-dimensional, got shape {values.shape}")
        if not self.name or any(c.isspace() for c in self.name):
            raise ValidationError(f"descriptor name must be a single token, got {self.name!r}")
        check_finite(values, f"descriptor {self.name!r}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def num_vertices(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def save_descriptors(matrix: FeatureMatrix, path: Union[str, os.PathLike]) -> None:
    """Writes the VFEAT1 format: the magic line, an ascii `V D name` line,
    then `V*D` little-endian float64 values in row-major order."""
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(f"{matrix.num_vertices} {matrix.dim} {matrix.name}\n".encode("ascii"))
        out.write(matrix.values.astype("<f8").tobytes(order="C"))


def read_descriptors(path: Union[str, os.PathLike]) -> FeatureMatrix:
    """Reads a VFEAT1 file without checking it against a mesh."""
    try:
        with open(path, "rb") as stream:
            if stream.readline() != MAGIC:
                raise DataFormatError(f"{os.fspath(path)}: missing VFEAT1 magic")
            try:
                rows, dim, name = stream.readline().decode("ascii").split()
                num_rows, num_dims = int(rows), int(dim)
            except (UnicodeDecodeError, ValueError):
                raise DataFormatError(f"{os.fspath(path)}: malformed VFEAT1 header") from None
            payload = stream.read()
    except FileNotFoundError:
        raise DataFormatError(f"No such descriptor file: {os.fspath(path)!r}") from None
    if len(payload) != 8 * num_rows * num_dims:
        raise DataFormatError(
            f"{os.fspath(path)}: header declares {num_rows}x{num_dims} values "
            f"but payload holds {len(payload) // 8}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(num_rows, num_dims).astype(np.float64)
    try:
        return FeatureMatrix(values, name)
    except NumericError as exc:
        raise NumericError(f"{os.fspath(path)}: {exc}") from None


def load_descriptors(path: Union[str, os.PathLike], mesh: HalfEdgeMesh) -> FeatureMatrix:
    """Reads a VFEAT1 file whose row count must match the mesh."""
    matrix = read_descriptors(path)
    if matrix.num_vertices != mesh.num_vertices:
        raise ValidationError(
            f"{os.fspath(path)} has {matrix.num_vertices} rows "
            f"but the mesh has {mesh.num_vertices} vertices"
        )
    return matrix


def convert_table(
    table_path: Union[str, os.PathLike], out_path: Union[str, os.PathLike], name: str
) -> FeatureMatrix:
    """Converts a whitespace or comma separated descriptor table (one row per
    vertex, no header) to VFEAT1."""
    import pandas as pd  # pylint:disable=import-outside-toplevel

    try:
        frame = pd.read_csv(
            table_path, sep=r"[\s,]+", header=None, comment="#", engine="python"
        )
    except FileNotFoundError:
        raise DataFormatError(f"No such descriptor table: {os.fspath(table_path)!r}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"{os.fspath(table_path)}: {exc}") from None
    frame = frame.dropna(axis=1, how="all")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError:
        raise DataFormatError(f"{os.fspath(table_path)}: non-numeric descriptor values") from None
    matrix = FeatureMatrix(values, name)
    save_descriptors(matrix, out_path)
    debug(f"converted {os.fspath(table_path)}: {matrix.num_vertices}x{matrix.dim}")
    return matrix


def vertex_normals(mesh: HalfEdgeMesh) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    normals = np.zeros_like(mesh.positions)
    for corner in range(3):
        np.add.at(normals, mesh.faces[:, corner], mesh.face_normals)
    lengths = np.linalg.norm(normals, axis=1)
    degenerate = np.flatnonzero(lengths <= 0)
    if len(degenerate):
        raise NumericError(f"vertex {int(degenerate[0])} has a zero-area fan; its normal is undefined")
    return normals / lengths[:, None]


def raw_features(mesh: HalfEdgeMesh, kind: str = "position") -> FeatureMatrix:
    """Geometric per-vertex features for running without external descriptors."""
    if kind == "position":
        return FeatureMatrix(mesh.positions.copy(), "position")
    if kind == "normal":
        return FeatureMatrix(vertex_normals(mesh), "normal")
    if kind == "position+normal":
        return FeatureMatrix(np.hstack([mesh.positions, vertex_normals(mesh)]), "position+normal")
    raise ValidationError(f"unknown raw feature kind {kind!r}; expected one of {RAW_KINDS}")


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension z-score fitted on training descriptors only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices: Sequence[FeatureMatrix]) -> "Normalizer":
        if not matrices:
            raise ValidationError("cannot fit a normalizer on an empty dataset")
        stacked = np.vstack([m.values for m in matrices])
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        if matrix.dim != len(self.mean):
            raise ValidationError(
                f"normalizer expects {len(self.mean)} dimensions, got {matrix.dim}"
            )
        return FeatureMatrix((matrix.values - self.mean) / self.std, matrix.name)


def _center_distances(
    mesh: HalfEdgeMesh, indices: np.ndarray, mask: np.ndarray, distance: str
) -> np.ndarray:
    centers = indices[:, 0]
    safe = np.where(mask, indices, centers[:, None])
    if distance == "euclidean":
        offsets = mesh.positions[safe] - mesh.positions[centers][:, None, :]
        return np.linalg.norm(offsets, axis=-1)
    if distance != "geodesic":
        raise ValidationError(f"unknown distance {distance!r}; expected one of {DISTANCES}")
    graph = mesh.edge_graph
    # A spiral of N vertices stays within N-1 edges of its center.
    limit = indices.shape[1] * float(graph.data.max()) if graph.nnz else 0.0
    result = np.zeros(indices.shape)
    for lo in range(0, len(centers), 256):
        rows = dijkstra(graph, directed=False, indices=centers[lo : lo + 256], limit=limit)
        result[lo : lo + 256] = np.take_along_axis(rows, safe[lo : lo + 256], axis=1)
    return result


def augment_batch(
    mesh: HalfEdgeMesh, indices: np.ndarray, mask: np.ndarray, distance: str = "euclidean"
) -> np.ndarray:
    """The `(distance to center, angle at center)` pair for every step of a
    batch of spirals, as a `B×N×2` array.

    The angle at step `t >= 2` is measured at the center `a` between the rays
    to the previous vertex `b` and the current vertex `c`. The center step,
    the first 1-ring step (whose previous vertex is the center) and padded
    steps get `(0, 0)`."""
    positions = mesh.positions
    centers = indices[:, 0]
    safe = np.where(mask, indices, centers[:, None])
    pairs = np.zeros(indices.shape + (2,))
    pairs[..., 0] = np.where(mask, _center_distances(mesh, indices, mask, distance), 0.0)
    pairs[:, 0, 0] = 0.0
    if indices.shape[1] < 3:
        return pairs
    rays = positions[safe] - positions[centers][:, None, :]
    previous, current = rays[:, 1:-1], rays[:, 2:]
    steps = mask[:, 2:]
    prev_len = np.linalg.norm(previous, axis=-1)
    cur_len = np.linalg.norm(current, axis=-1)
    gap = np.linalg.norm(current - previous, axis=-1)
    degenerate = steps & ((prev_len == 0) | (cur_len == 0) | (gap == 0))
    if degenerate.any():
        row, col = (int(x) for x in np.argwhere(degenerate)[0])
        raise NumericError(
            f"angle undefined at vertex {int(centers[row])} between vertices "
            f"{int(indices[row, col + 1])} and {int(indices[row, col + 2])}: coincident positions"
        )
    cross = np.linalg.norm(np.cross(previous, current), axis=-1)
    dot = np.einsum("...i,...i->...", previous, current)
    pairs[:, 2:, 1] = np.where(steps, np.arctan2(cross, dot), 0.0)
    return pairs


def metric_augment(
    mesh: HalfEdgeMesh,
    spiral: SpiralSequence,
    base: FeatureMatrix,
    distance: str = "euclidean",
) -> np.ndarray:
    """The `N×(D+2)` rows of one spiral: the gathered base features followed by
    the metric pair of each step."""
    if base.num_vertices != mesh.num_vertices:
        raise ValidationError(
            f"features have {base.num_vertices} rows but the mesh has {mesh.num_vertices} vertices"
        )
    indices = np.array([spiral.vertices], dtype=np.int64)
    mask = np.array([spiral.pad_mask], dtype=bool)
    gathered = gather_features(base.values, indices, mask)
    return np.concatenate([gathered, augment_batch(mesh, indices, mask, distance)], axis=-1)[0]


def gather_features(values: np.ndarray, indices: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """`values[indices]` with exact zeros on padded steps."""
    gathered = values[np.where(mask, indices, 0)]
    return np.where(mask[..., None], gathered, 0.0)


@dataclass(frozen=True)
class SerializedBatch:
    """Model input for every vertex of one mesh.

    `inputs[v, t]` holds the features of `indices[v, t]`, the `t`-th vertex of
    the spiral of `v` (plus the metric pair when `augmented`)."""

    inputs: np.ndarray  # V×N×D'
    pad_mask: np.ndarray  # V×N
    indices: np.ndarray  # V×N, PAD on padded steps
    augmented: bool

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[2]

    def take(self, rows: Sequence[int]) -> "SerializedBatch":
        """The batch restricted to (or permuted by) the given rows."""
        rows = np.asarray(rows)
        return SerializedBatch(
            self.inputs[rows], self.pad_mask[rows], self.indices[rows], self.augmented
        )


def serialize_spirals(
    mesh: HalfEdgeMesh,
    features: FeatureMatrix,
    spirals: List[SpiralSequence],
    augment: bool = False,
    distance: str = "euclidean",
) -> SerializedBatch:
    """Gathers feature rows along the given spirals (one per vertex)."""
    if features.num_vertices != mesh.num_vertices:
        raise ValidationError(
            f"features have {features.num_vertices} rows but the mesh has {mesh.num_vertices} vertices"
        )
    indices, mask = stack_spirals(spirals)
    inputs = gather_features(features.values, indices, mask)
    if augment:
        inputs = np.concatenate([inputs, augment_batch(mesh, indices, mask, distance)], axis=-1)
    return SerializedBatch(inputs, mask, indices, augment)


def serialize_batch(
    mesh: HalfEdgeMesh,
    features: FeatureMatrix,
    seq_len: int,
    seed: int,
    augment: bool = False,
    *,
    table: Optional[SpiralTable] = None,
    normalizer: Optional[Normalizer] = None,
    distance: str = "euclidean",
    threads: Optional[int] = 1,
) -> SerializedBatch:
    """Serializes every vertex of `mesh`: a random start per vertex drawn from
    `vertex_rng(seed, v)`, the fixed-length spiral of `seq_len` vertices, the
    gathered feature rows and, if `augment`, the metric pairs.

    Pass a `SpiralTable` to reuse spirals across calls (or to serialize
    by-ring spirals instead)."""
    table = table or SpiralTable(mesh, seq_len=seq_len)
    if normalizer is not None:
        features = normalizer.apply(features)
    spirals = table.draw(seed, threads)
    return serialize_spirals(mesh, features, spirals, augment, distance)


def load_labels(path: Union[str, os.PathLike], num_vertices: Optional[int] = None) -> np.ndarray:
    """Reads a correspondence file: either `source target` lines or one target
    per line in source-vertex order. Every source vertex must appear once.

    Without `num_vertices` the file is taken to cover one source vertex per
    line."""
    rows = read_int_rows(os.fspath(path))
    if num_vertices is None:
        num_vertices = len(rows)
    labels = np.full(num_vertices, PAD, dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) == 1:
            source, target = i, row[0]
        elif len(row) == 2:
            source, target = row
        else:
            raise DataFormatError(f"{os.fspath(path)}: expected 1 or 2 columns, got {len(row)}")
        if not 0 <= source < num_vertices:
            raise ValidationError(f"{os.fspath(path)}: source vertex {source} out of range")
        labels[source] = target
    if (labels == PAD).any():
        missing = int(np.flatnonzero(labels == PAD)[0])
        raise ValidationError(f"{os.fspath(path)}: no correspondence for vertex {missing}")
    return labels


def save_labels(labels: np.ndarray, path: Union[str, os.PathLike]) -> None:
    """Writes `source target` lines."""
    write_table(Table(enumerate(np.asarray(labels).tolist())), os.fspath(path), "txt")
