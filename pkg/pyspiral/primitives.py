"""Deterministic mesh generators: Platonic solids, triangulated grids, strips,
tori and subdivided spheres. Every generator returns a consistently oriented
`HalfEdgeMesh` (counter-clockwise winding seen from outside)."""

from typing import Dict, List, Tuple

import numpy as np

from .mesh import HalfEdgeMesh

_PHI = (1.0 + 5.0 ** 0.5) / 2.0


def tetrahedron() -> HalfEdgeMesh:
    positions = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    faces = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
    return HalfEdgeMesh(positions, faces)


def icosahedron() -> HalfEdgeMesh:
    positions = [
        (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
        (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
        (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return HalfEdgeMesh(positions, faces)


def icosphere(subdivisions: int = 2) -> HalfEdgeMesh:
    """Unit sphere from a recursively subdivided icosahedron."""
    base = icosahedron()
    positions: List[np.ndarray] = [p / np.linalg.norm(p) for p in base.positions]
    faces = [tuple(f) for f in base.faces.tolist()]
    for _ in range(subdivisions):
        midpoints: Dict[Tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = positions[a] + positions[b]
                positions.append(m / np.linalg.norm(m))
                midpoints[key] = len(positions) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    return HalfEdgeMesh(np.array(positions), faces)


def grid(rows: int, cols: int, spacing: float = 1.0) -> HalfEdgeMesh:
    """A planar `rows×cols` vertex grid in the z=0 plane. Every quad is split
    along the same diagonal, so interior vertices have valence 6.

    Vertex `(i, j)` has index `i * cols + j` and position `(j, i, 0) * spacing`.
    """
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    positions = np.stack([jj.ravel(), ii.ravel(), np.zeros(rows * cols)], axis=1) * spacing
    faces = []
    for i in range(rows - 1):
        for j in range(cols - 1):
            a, b = i * cols + j, i * cols + j + 1
            c, d = a + cols, b + cols
            faces += [(a, b, d), (a, d, c)]
    return HalfEdgeMesh(positions, faces)


def strip(length: int) -> HalfEdgeMesh:
    """A two-row triangle strip; every vertex lies on the boundary."""
    return grid(2, length)


def torus(rows: int = 6, cols: int = 8, major: float = 2.0, minor: float = 0.5) -> HalfEdgeMesh:
    """A closed genus-1 surface with the same regular connectivity as `grid`."""
    u = 2 * np.pi * np.arange(cols) / cols
    v = 2 * np.pi * np.arange(rows) / rows
    uu, vv = np.meshgrid(u, v)
    radius = major + minor * np.cos(vv)
    positions = np.stack(
        [radius * np.cos(uu), radius * np.sin(uu), minor * np.sin(vv)], axis=-1
    ).reshape(-1, 3)
    faces = []
    for i in range(rows):
        for j in range(cols):
            a, b = i * cols + j, i * cols + (j + 1) % cols
            c, d = ((i + 1) % rows) * cols + j, ((i + 1) % rows) * cols + (j + 1) % cols
            faces += [(a, b, d), (a, d, c)]
    return HalfEdgeMesh(positions, faces)


def single_triangle() -> HalfEdgeMesh:
    return HalfEdgeMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])


def bowtie() -> HalfEdgeMesh:
    """Two triangles sharing only vertex 0: the canonical non-manifold vertex."""
    positions = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (-1, 0, 0), (-1, -1, 0)]
    return HalfEdgeMesh(positions, [(0, 1, 2), (0, 3, 4)])
