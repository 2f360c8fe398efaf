# pylint: disable=missing-function-docstring
# pylint: disable=missing-module-docstring
# pylint: disable=redefined-outer-name

import numpy as np
import pytest
from scipy.sparse import csgraph

from pyspiral import primitives
from pyspiral.mesh import HalfEdgeMesh
from pyspiral.spiral import (
    BY_RING,
    FIXED_LENGTH,
    PAD,
    SpiralTable,
    bfs_layers,
    random_start,
    ring_decompose,
    spiral_by_ring,
    spiral_fixed,
    stack_spirals,
)
from pyspiral.util import ValidationError

FIXTURES = {
    "tetrahedron": primitives.tetrahedron(),
    "icosahedron": primitives.icosahedron(),
    "grid": primitives.grid(30, 30),
    "strip": primitives.strip(12),
}


def hop_distances(mesh):
    return csgraph.shortest_path(mesh.edge_graph, unweighted=True)


def test_golden_interior_one_ring():
    mesh = primitives.grid(3, 3)
    assert mesh.neighbors(4) == (0, 3, 7, 8, 5, 1)
    spiral = spiral_by_ring(mesh, 4, 1, start=1)
    assert spiral.vertices == (4, 1, 0, 3, 7, 8, 5)
    assert spiral.pad_mask == (True,) * 7
    assert (spiral.mode, spiral.size, spiral.start_neighbor) == (BY_RING, 1, 1)


def test_golden_two_rings_from_corner():
    mesh = primitives.grid(3, 3)
    # Ring 1 is 4, 1, 3. Ring 2 walks around 4 from 0, around 1 from 4, and
    # around 3 from its inner neighbor 0 (1 and 3 are not adjacent).
    assert spiral_by_ring(mesh, 0, 2, start=4).vertices == (0, 4, 1, 3, 7, 8, 5, 2, 6)
    rings = ring_decompose(mesh, 0, 2, start=4)
    assert rings.rings == ((0,), (4, 1, 3), (7, 8, 5, 2, 6))
    assert rings.sizes == [1, 3, 5]


def test_tetrahedron_spirals(tetrahedron):
    assert spiral_by_ring(tetrahedron, 0, 1, start=3).vertices == (0, 3, 2, 1)
    assert spiral_by_ring(tetrahedron, 0, 3, start=3).vertices == (0, 3, 2, 1)
    spiral = spiral_fixed(tetrahedron, 0, 6, start=2)
    assert spiral.vertices == (0, 2, 1, 3, PAD, PAD)
    assert spiral.pad_mask == (True, True, True, True, False, False)
    assert spiral.real_vertices == (0, 2, 1, 3)
    assert (spiral.mode, spiral.size, len(spiral)) == (FIXED_LENGTH, 6, 6)


def test_custom_pad(tetrahedron):
    assert spiral_fixed(tetrahedron, 1, 5, start=0, pad=99).vertices[-1] == 99


@pytest.mark.parametrize("name", sorted(FIXTURES))
@pytest.mark.parametrize("k", [1, 2, 3])
def test_spiral_covers_disk(name, k):
    mesh = FIXTURES[name]
    hops = hop_distances(mesh)
    rng = np.random.default_rng(k)
    for v in range(mesh.num_vertices):
        spiral = spiral_by_ring(mesh, v, k, random_start(mesh, v, rng))
        expected = set(np.flatnonzero(hops[v] <= k).tolist())
        assert len(spiral) == len(expected)
        assert set(spiral.vertices) == expected
        assert spiral.center == v
        ring_of = hops[v][list(spiral.vertices)]
        assert (np.diff(ring_of) >= 0).all()


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_one_ring_rotation_equivariance(name):
    mesh = FIXTURES[name]
    for v in range(mesh.num_vertices):
        ring = list(mesh.neighbors(v))
        for i, start in enumerate(ring):
            spiral = spiral_by_ring(mesh, v, 1, start)
            assert list(spiral.vertices[1:]) == ring[i:] + ring[:i]


def test_every_start_covers_disk():
    mesh = primitives.icosphere(1)
    hops = hop_distances(mesh)
    for v in range(mesh.num_vertices):
        expected = set(np.flatnonzero(hops[v] <= 2).tolist())
        for start in mesh.neighbors(v):
            assert set(spiral_by_ring(mesh, v, 2, start).vertices) == expected


@pytest.mark.parametrize("n", [15, 20, 30])
def test_fixed_length_is_prefix_of_covering_spiral(n):
    mesh = FIXTURES["grid"]
    rng = np.random.default_rng(n)
    for v in range(mesh.num_vertices):
        start = random_start(mesh, v, rng)
        fixed = spiral_fixed(mesh, v, n, start)
        k = 1
        while len(spiral_by_ring(mesh, v, k, start)) < n:
            k += 1
        assert all(fixed.pad_mask)
        assert fixed.vertices == spiral_by_ring(mesh, v, k, start).vertices[:n]


def test_fixed_length_one(icosahedron):
    assert spiral_fixed(icosahedron, 3, 1, start=icosahedron.neighbors(3)[0]).vertices == (3,)


def test_fixed_length_invalid(icosahedron):
    with pytest.raises(ValidationError, match="at least 1"):
        spiral_fixed(icosahedron, 0, 0, start=icosahedron.neighbors(0)[0])


def test_start_must_be_adjacent(icosahedron):
    with pytest.raises(ValidationError, match="not adjacent"):
        spiral_by_ring(icosahedron, 0, 2, start=3)
    with pytest.raises(ValidationError, match="not adjacent"):
        spiral_fixed(icosahedron, 0, 10, start=3)


def test_start_required(icosahedron):
    with pytest.raises(ValidationError, match="start neighbor is required"):
        spiral_by_ring(icosahedron, 0, 1, None)


def test_isolated_vertex():
    mesh = HalfEdgeMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 5, 5)], [(0, 1, 2)])
    assert spiral_by_ring(mesh, 3, 2, None).vertices == (3,)
    spiral = spiral_fixed(mesh, 3, 4, None)
    assert spiral.vertices == (3, PAD, PAD, PAD)
    assert spiral.pad_mask == (True, False, False, False)
    with pytest.raises(ValidationError, match="isolated"):
        random_start(mesh, 3, np.random.default_rng(0))
    with pytest.raises(ValidationError, match="not adjacent"):
        spiral_by_ring(mesh, 3, 1, 0)


def test_ring_decompose_unordered(tetrahedron):
    rings = ring_decompose(tetrahedron, 0, 3)
    assert rings.rings == ((0,), (1, 2, 3), (), ())
    assert rings.disk == [0, 1, 2, 3]
    assert ring_decompose(tetrahedron, 2, 0).rings == ((2,),)
    with pytest.raises(ValidationError):
        ring_decompose(tetrahedron, 0, -1)


def test_bfs_layers():
    mesh = primitives.strip(6)
    # Vertex (i, j) is i * 6 + j; the faces at 0 are (0,1,7) and (0,7,6).
    assert bfs_layers(mesh, 0, 1) == [[0], [1, 6, 7]]
    assert bfs_layers(mesh, 0, 3) == [[0], [1, 6, 7], [2, 8], [3, 9]]


def test_random_start_is_uniform():
    mesh = primitives.grid(3, 3)
    assert mesh.valence(4) == 6
    rng = np.random.default_rng(42)
    draws = 60_000
    counts = {}
    for _ in range(draws):
        start = random_start(mesh, 4, rng)
        counts[start] = counts.get(start, 0) + 1
    assert set(counts) == set(mesh.neighbors(4))
    sigma = np.sqrt((1 / 6) * (5 / 6) / draws)
    for count in counts.values():
        assert abs(count / draws - 1 / 6) <= 3 * sigma


def test_spiral_table_memoizes(icosahedron):
    table = SpiralTable(icosahedron, seq_len=7)
    first = table.spiral(0, icosahedron.neighbors(0)[1])
    assert table.spiral(0, icosahedron.neighbors(0)[1]) is first
    assert first == spiral_fixed(icosahedron, 0, 7, icosahedron.neighbors(0)[1])


def test_spiral_table_needs_one_mode(icosahedron):
    with pytest.raises(ValidationError, match="exactly one"):
        SpiralTable(icosahedron)
    with pytest.raises(ValidationError, match="exactly one"):
        SpiralTable(icosahedron, seq_len=5, rings=1)


def test_draw_is_deterministic_and_thread_independent():
    mesh = primitives.grid(8, 8)
    single = SpiralTable(mesh, seq_len=12).draw(seed=5)
    threaded = SpiralTable(mesh, seq_len=12).draw(seed=5, threads=4)
    assert single == threaded
    assert [s.center for s in single] == list(range(mesh.num_vertices))
    other = SpiralTable(mesh, seq_len=12).draw(seed=6)
    assert [s.start_neighbor for s in other] != [s.start_neighbor for s in single]


def test_stack_spirals(tetrahedron):
    spirals = [
        spiral_by_ring(tetrahedron, 0, 1, 1),
        spiral_fixed(tetrahedron, 1, 6, 0),
    ]
    indices, mask = stack_spirals(spirals)
    assert indices.tolist() == [[0, 1, 3, 2, PAD, PAD], [1, 0, 2, 3, PAD, PAD]]
    assert mask.tolist() == [[True] * 4 + [False] * 2] * 2
