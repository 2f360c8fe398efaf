"""The spiral operator: ordered ring decomposition of a vertex neighborhood,
concatenated into a sequence and optionally truncated to a fixed length.

Ring order rule: the 1-ring is ordered clockwise from the chosen start vertex.
Each vertex `w` of ring `k+1` gets the key `(p, q)` where `p` is the ring
position of its earliest ring-`k` neighbor `u`, and `q` is the position of `w`
in the clockwise one-ring of `u` started at `u`'s anchor. The anchor of `u` is
its predecessor in the sequence when the two are adjacent, otherwise its
earliest neighbor in an inner ring. Ring `k+1` is sorted by key.
"""

from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .mesh import HalfEdgeMesh, VertexId, ordered_one_ring
from .util import ValidationError, parallel_map, vertex_rng

PAD = -1

BY_RING = "by-ring"
FIXED_LENGTH = "fixed-length"


@dataclass(frozen=True)
class RingDecomposition:
    center: VertexId
    rings: Tuple[Tuple[VertexId, ...], ...]

    @property
    def sizes(self) -> List[int]:
        return [len(r) for r in self.rings]

    @property
    def disk(self) -> List[VertexId]:
        return [v for ring in self.rings for v in ring]


@dataclass(frozen=True)
class SpiralSequence:
    """A serialized neighborhood: the center first, then the ordered rings.

    `pad_mask[i]` is False where `vertices[i]` is the `PAD` sentinel."""

    vertices: Tuple[VertexId, ...]
    pad_mask: Tuple[bool, ...]
    start_neighbor: Optional[VertexId]
    mode: str
    size: int  # k for by-ring spirals, N for fixed-length ones

    @property
    def center(self) -> VertexId:
        return self.vertices[0]

    @property
    def real_vertices(self) -> Tuple[VertexId, ...]:
        return tuple(v for v, real in zip(self.vertices, self.pad_mask) if real)

    def __len__(self) -> int:
        return len(self.vertices)


def bfs_layers(mesh: HalfEdgeMesh, v: VertexId, k: int) -> List[List[VertexId]]:
    """Graph-distance layers 0..k around `v`, each sorted by vertex id.
    Layers past the end of the connected component are empty."""
    depth = {v: 0}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if depth[u] == k:
            continue
        for w in mesh.neighbors(u):
            if w not in depth:
                depth[w] = depth[u] + 1
                queue.append(w)
    layers: List[List[VertexId]] = [[] for _ in range(k + 1)]
    for u, d in depth.items():
        layers[d].append(u)
    return [sorted(layer) for layer in layers]


def _iter_ordered_rings(
    mesh: HalfEdgeMesh, v: VertexId, start: Optional[VertexId]
) -> Iterator[Tuple[VertexId, ...]]:
    """Yields the ordered rings of `v` (the 0-ring first) until the first
    empty ring, which is yielded as well."""
    yield (v,)
    if start is None:
        if mesh.valence(v):
            raise ValidationError(f"a start neighbor is required for vertex {v}")
        yield ()
        return
    ring = ordered_one_ring(mesh, v, start)
    sequence: List[VertexId] = [v] + ring
    position: Dict[VertexId, int] = {u: i for i, u in enumerate(sequence)}
    ring_start = 1
    yield tuple(ring)
    while ring:
        keyed: Dict[VertexId, None] = {}
        for u in ring:
            neighbors = mesh.neighbors(u)
            predecessor = sequence[position[u] - 1]
            if predecessor not in neighbors:
                predecessor = min(
                    (w for w in neighbors if position.get(w, ring_start) < ring_start),
                    key=position.__getitem__,
                )
            for w in ordered_one_ring(mesh, u, predecessor):
                if w not in position and w not in keyed:
                    keyed[w] = None
        # Ring order is the insertion order: earliest ring-k neighbor first,
        # then clockwise position around it.
        ring = list(keyed)
        ring_start = len(sequence)
        for w in ring:
            position[w] = len(sequence)
            sequence.append(w)
        yield tuple(ring)


def ring_decompose(
    mesh: HalfEdgeMesh, v: VertexId, k: int, start: Optional[VertexId] = None
) -> RingDecomposition:
    """Rings 0..k of `v`. Without `start`, each ring is sorted by vertex id;
    with `start`, rings follow the spiral order."""
    if k < 0:
        raise ValidationError(f"ring count must be non-negative, got {k}")
    if start is None:
        return RingDecomposition(v, tuple(tuple(r) for r in bfs_layers(mesh, v, k)))
    rings: List[Tuple[VertexId, ...]] = []
    for ring in _iter_ordered_rings(mesh, v, start):
        if len(rings) == k + 1:
            break
        rings.append(ring)
    rings += [()] * (k + 1 - len(rings))
    return RingDecomposition(v, tuple(rings))


def spiral_by_ring(
    mesh: HalfEdgeMesh, v: VertexId, k: int, start: Optional[VertexId]
) -> SpiralSequence:
    """The concatenation of the ordered rings 0..k of `v`."""
    if start is not None and not mesh.valence(v):
        raise ValidationError(f"vertex {start} is not adjacent to vertex {v}")
    if start is None and mesh.valence(v):
        raise ValidationError(f"a start neighbor is required for vertex {v}")
    rings = ring_decompose(mesh, v, k, start) if start is not None else ring_decompose(mesh, v, k)
    vertices = tuple(rings.disk)
    return SpiralSequence(vertices, (True,) * len(vertices), start, BY_RING, k)


def spiral_fixed(
    mesh: HalfEdgeMesh,
    v: VertexId,
    n: int,
    start: Optional[VertexId],
    pad: VertexId = PAD,
) -> SpiralSequence:
    """The first `n` vertices of the spiral of `v`, grown ring by ring.

    If the whole connected neighborhood has fewer than `n` vertices, the
    sequence is completed with `pad` entries whose mask is False."""
    if n < 1:
        raise ValidationError(f"sequence length must be at least 1, got {n}")
    vertices: List[VertexId] = []
    for ring in _iter_ordered_rings(mesh, v, start if mesh.valence(v) else None):
        vertices.extend(ring)
        if len(vertices) >= n:
            break
    vertices = vertices[:n]
    real = len(vertices)
    vertices += [pad] * (n - real)
    return SpiralSequence(
        tuple(vertices), (True,) * real + (False,) * (n - real), start, FIXED_LENGTH, n
    )


def random_start(mesh: HalfEdgeMesh, v: VertexId, rng: np.random.Generator) -> VertexId:
    """A uniformly random 1-ring neighbor of `v`."""
    ring = mesh.neighbors(v)
    if not ring:
        raise ValidationError(f"vertex {v} is isolated and has no spiral start")
    return ring[int(rng.integers(len(ring)))]


class SpiralTable:
    """Memoized spirals of one mesh, keyed by `(vertex, start)`.

    Exactly one of `seq_len` (fixed-length spirals) or `rings` (by-ring
    spirals) must be given. Each vertex has at most `valence` distinct spirals,
    so re-randomizing starts every epoch only costs the first visit."""

    def __init__(
        self,
        mesh: HalfEdgeMesh,
        *,
        seq_len: Optional[int] = None,
        rings: Optional[int] = None,
    ):
        if (seq_len is None) == (rings is None):
            raise ValidationError("pass exactly one of seq_len or rings")
        self.mesh = mesh
        self.seq_len = seq_len
        self.rings = rings
        self._spirals: Dict[Tuple[VertexId, Optional[VertexId]], SpiralSequence] = {}

    def spiral(self, v: VertexId, start: Optional[VertexId]) -> SpiralSequence:
        key = (v, start)
        spiral = self._spirals.get(key)
        if spiral is None:
            if self.seq_len is not None:
                spiral = spiral_fixed(self.mesh, v, self.seq_len, start)
            else:
                assert self.rings is not None
                spiral = spiral_by_ring(self.mesh, v, self.rings, start)
            self._spirals[key] = spiral
        return spiral

    def draw(self, seed: int, threads: Optional[int] = 1) -> List[SpiralSequence]:
        """One spiral per vertex with a start drawn from `vertex_rng(seed, v)`."""

        def draw_one(v: int) -> SpiralSequence:
            start = None
            if self.mesh.valence(v):
                start = random_start(self.mesh, v, vertex_rng(seed, v))
            return self.spiral(v, start)

        return parallel_map(draw_one, range(self.mesh.num_vertices), threads)


def stack_spirals(spirals: Sequence[SpiralSequence]) -> Tuple[np.ndarray, np.ndarray]:
    """Stacks spirals into `(indices V×N, mask V×N)` arrays, padding shorter
    (by-ring) sequences with `PAD`."""
    length = max(len(s) for s in spirals)
    indices = np.full((len(spirals), length), PAD, dtype=np.int64)
    mask = np.zeros((len(spirals), length), dtype=bool)
    for row, spiral in enumerate(spirals):
        indices[row, : len(spiral)] = spiral.vertices
        mask[row, : len(spiral)] = spiral.pad_mask
    return indices, mask
