"""Half-edge triangle meshes: loading, manifold validation and oriented one-ring
traversal."""

from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
import os
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .ioformat import create_reader, guess_format, write_obj, write_ply
from .util import DataFormatError, ValidationError, debug

VertexId = int


class HalfEdgeMesh:
    """An immutable triangle mesh with half-edge adjacency.

    Half-edge `h = 3 * f + i` runs from `faces[f, i]` to `faces[f, (i + 1) % 3]`.
    `twin[h]` is `-1` on boundary edges and on edges that are not shared by
    exactly one oppositely oriented pair of half-edges (see `validate_manifold`).

    Rotation around a vertex is "clockwise" when it runs against the face
    winding; every ordered one-ring in this package uses that direction.
    """

    def __init__(self, positions, faces):
        positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(positions)):
            raise DataFormatError(
                f"face indices must lie in [0, {len(positions)}), "
                f"found range [{faces.min()}, {faces.max()}]"
            )
        positions.flags.writeable = False
        faces.flags.writeable = False
        self.positions = positions
        self.faces = faces

        num_half_edges = 3 * len(faces)
        half_edges = np.arange(num_half_edges)
        self.origin = faces.reshape(-1)
        self.destination = faces[:, [1, 2, 0]].reshape(-1)
        self.next = 3 * (half_edges // 3) + (half_edges % 3 + 1) % 3
        self.face = half_edges // 3

        directed: Dict[Tuple[int, int], List[int]] = defaultdict(list)
        for h, (u, v) in enumerate(zip(self.origin.tolist(), self.destination.tolist())):
            directed[(u, v)].append(h)
        twin = np.full(num_half_edges, -1, dtype=np.int64)
        for (u, v), forward in directed.items():
            backward = directed.get((v, u), ())
            if len(forward) == 1 and len(backward) == 1:
                twin[forward[0]] = backward[0]
        self.twin = twin
        self._directed = dict(directed)

        outgoing: List[List[int]] = [[] for _ in range(len(positions))]
        for h, u in enumerate(self.origin.tolist()):
            outgoing[u].append(h)
        self._fans = [self._fan_components(v, hs) for v, hs in enumerate(outgoing)]
        self._rings = [tuple(n for chain, _ in fan for n in chain) for fan in self._fans]
        for array in (self.origin, self.destination, self.next, self.face, self.twin):
            array.flags.writeable = False

    def _fan_components(
        self, vertex: int, outgoing: Sequence[int]
    ) -> List[Tuple[Tuple[int, ...], bool]]:
        """Splits the faces around `vertex` into chains of neighbors ordered
        clockwise. Returns `(chain, closed)` pairs; a manifold vertex has exactly
        one (or zero, if isolated)."""
        successor: Dict[int, int] = {}
        for h in outgoing:
            a = int(self.destination[h])
            b = int(self.origin[self.next[self.next[h]]])
            if a == vertex or b == vertex:
                continue  # degenerate face
            # Face (vertex, a, b) in winding order: clockwise, b is followed by a.
            successor.setdefault(b, a)
        if not successor:
            return []
        neighbors = set(successor) | set(successor.values())
        targets = set(successor.values())
        heads = sorted(n for n in successor if n not in targets)
        visited: set = set()
        components = []

        def walk(first: int) -> Tuple[int, ...]:
            chain = []
            current: Optional[int] = first
            while current is not None and current not in visited:
                visited.add(current)
                chain.append(current)
                current = successor.get(current)
            return tuple(chain)

        for head in heads:
            if head not in visited:
                components.append((walk(head), False))
        for n in sorted(neighbors):
            if n not in visited:
                components.append((walk(n), True))
        return components

    def __repr__(self) -> str:
        return f"HalfEdgeMesh(V={self.num_vertices}, F={self.num_faces}, E={self.num_edges})"

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as an `E×2` array of sorted vertex pairs."""
        pairs = np.sort(np.stack([self.origin, self.destination], axis=1), axis=1)
        return np.unique(pairs, axis=0) if len(pairs) else np.zeros((0, 2), dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_faces

    def neighbors(self, v: VertexId) -> Tuple[int, ...]:
        """The 1-ring of `v` in clockwise order, starting at an arbitrary but
        fixed neighbor. Use `ordered_one_ring` to choose the start."""
        return self._rings[v]

    def valence(self, v: VertexId) -> int:
        return len(self._rings[v])

    def is_boundary(self, v: VertexId) -> bool:
        return any(not closed for _, closed in self._fans[v])

    def fan_count(self, v: VertexId) -> int:
        """Number of connected face fans around `v` (1 for manifold vertices)."""
        return len(self._fans[v])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unnormalized face normals (twice the face area in length)."""
        p = self.positions[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of Euclidean edge lengths."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        lengths = np.linalg.norm(self.positions[i] - self.positions[j], axis=1)
        n = self.num_vertices
        return sparse.csr_matrix(
            (np.concatenate([lengths, lengths]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        )

    def with_positions(self, positions) -> "HalfEdgeMesh":
        """A mesh with the same connectivity and new vertex positions."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise ValidationError(
                f"expected positions of shape {self.positions.shape}, got {positions.shape}"
            )
        return HalfEdgeMesh(positions, self.faces)

    def flipped(self) -> "HalfEdgeMesh":
        """The same mesh with every face winding reversed."""
        return HalfEdgeMesh(self.positions, self.faces[:, ::-1])

    def save(self, path: Union[str, os.PathLike], mesh_format: Optional[str] = None) -> None:
        save_mesh(self, path, mesh_format)


def load_mesh(
    path: Union[str, os.PathLike],
    mesh_format: Optional[str] = None,
    *,
    check: bool = True,
) -> HalfEdgeMesh:
    """Loads a triangle mesh from an OBJ or PLY file, preserving vertex order.

    With `check` (the default) the mesh must pass `validate_manifold` without
    errors, otherwise `ValidationError` lists the first violations."""
    mesh_format = mesh_format or guess_format(path)
    reader = create_reader(mesh_format)
    try:
        with open(path, "rb") as stream:
            positions, faces = reader.read(stream)
    except FileNotFoundError:
        raise DataFormatError(f"No such mesh file: {os.fspath(path)!r}") from None
    mesh = HalfEdgeMesh(positions, faces)
    debug(f"loaded {os.fspath(path)}: {mesh!r}")
    if check:
        report = validate_manifold(mesh)
        if not report.ok:
            errors = [v for v in report if v.severity == "error"]
            summary = "; ".join(f"{v.element}: {v.message}" for v in errors[:3])
            raise ValidationError(
                f"{os.fspath(path)} is not a manifold triangle mesh "
                f"({len(errors)} violations: {summary})"
            )
    return mesh


def save_mesh(
    mesh: HalfEdgeMesh, path: Union[str, os.PathLike], mesh_format: Optional[str] = None
) -> None:
    """Writes the mesh as OBJ or ascii PLY."""
    mesh_format = mesh_format or guess_format(path)
    writer = write_obj if mesh_format == "obj" else write_ply
    with open(path, "w", encoding="utf-8", newline="\n") as stream:
        writer(stream, mesh.positions, mesh.faces)


@dataclass(frozen=True)
class Violation:
    """A single entry of a `ValidationReport`."""

    severity: str  # "error" or "warning"
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}\t{self.element}\t{self.message}"


@dataclass
class ValidationReport:
    """Violations of the manifold triangle mesh invariants. Empty means the
    mesh is a valid, consistently oriented, vertex-manifold triangle mesh."""

    violations: List[Violation] = field(default_factory=list)

    def add(self, severity: str, element: str, message: str) -> None:
        self.violations.append(Violation(severity, element, message))

    @property
    def ok(self) -> bool:
        return not any(v.severity == "error" for v in self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def lines(self) -> List[str]:
        return [str(v) for v in self.violations]

    def kinds(self) -> List[str]:
        return [v.message.split(":")[0] for v in self.violations]


def validate_manifold(mesh: HalfEdgeMesh) -> ValidationReport:
    """Checks all `HalfEdgeMesh` invariants and reports every violation.

    Never raises; each violation becomes a report entry."""
    report = ValidationReport()
    faces = mesh.faces

    seen_faces: Dict[Tuple[int, ...], int] = {}
    for f, (a, b, c) in enumerate(faces.tolist()):
        if a == b or b == c or a == c:
            report.add("error", f"face {f}", f"degenerate face: repeated vertex in ({a}, {b}, {c})")
            continue
        key = tuple(sorted((a, b, c)))
        if key in seen_faces:
            report.add("error", f"face {f}", f"duplicate face: same vertices as face {seen_faces[key]}")
        else:
            seen_faces[key] = f

    incidence: Dict[Tuple[int, int], List[Tuple[int, int]]] = defaultdict(list)
    for (u, v), hs in mesh._directed.items():  # pylint:disable=protected-access
        if u == v:
            continue
        incidence[(min(u, v), max(u, v))].extend((u, v) for _ in hs)
    for (u, v), directions in sorted(incidence.items()):
        if len(directions) > 2:
            report.add(
                "error", f"edge {u}-{v}", f"non-manifold edge: {len(directions)} incident faces"
            )
        elif len(directions) == 2 and directions[0] == directions[1]:
            report.add(
                "error",
                f"edge {u}-{v}",
                "inconsistent orientation: both incident faces traverse "
                f"{directions[0][0]}->{directions[0][1]}",
            )

    for v in range(mesh.num_vertices):
        fans = mesh.fan_count(v)
        if fans > 1:
            report.add("error", f"vertex {v}", f"non-manifold vertex: {fans} disconnected face fans")
        elif fans == 0:
            report.add("warning", f"vertex {v}", "isolated vertex: no incident faces")
    return report


def ordered_one_ring(mesh: HalfEdgeMesh, v: VertexId, start: VertexId) -> List[VertexId]:
    """All 1-ring neighbors of `v`, beginning at `start`, in clockwise order.

    For interior vertices the result is the neighbor cycle rotated to begin at
    `start`. For boundary vertices the open chain is walked clockwise from
    `start` to its end, then wraps around to the chain's first vertex and
    continues up to `start`.
    """
    ring = mesh.neighbors(v)
    try:
        i = ring.index(start)
    except ValueError:
        raise ValidationError(f"vertex {start} is not adjacent to vertex {v}") from None
    return list(ring[i:] + ring[:i])
