"""Structured triangulations of the unit square and unit disk.

Meshes are immutable; :func:`refine_uniform` returns a new mesh whose
``parent`` points at the input and whose ``provenance`` array records, for
every fine node, the pair of coarse nodes it came from (``(i, i)`` for a
copied node, ``(i, j)`` for the midpoint of edge ``ij``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import HierarchyMismatchError, InvalidMeshError

UNIT_SQUARE = "unit_square"
UNIT_DISK = "unit_disk"

# Seed for the disk: centre plus a regular hexagon inscribed in the unit
# circle, fanned into six equilateral triangles.
DISK_SEED_NODES = np.array(
    [[0.0, 0.0]]
    + [[np.cos(k * np.pi / 3.0), np.sin(k * np.pi / 3.0)] for k in range(6)]
)
DISK_SEED_TRIANGLES = np.array([[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)])


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming P1 triangulation.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_mask : (N,) bool array
    level : int
        Refinement depth within its family.
    domain : str
        ``"unit_square"``, ``"unit_disk"`` or ``"polygon"``. Controls
        boundary snapping on refinement.
    parent : TriangleMesh or None
    provenance : (N, 2) int array or None
        Coarse-node pair each node was created from.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    level: int = 0
    domain: str = "polygon"
    parent: Optional["TriangleMesh"] = field(default=None, repr=False)
    provenance: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, float))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        object.__setattr__(self, "boundary_mask", _frozen(self.boundary_mask, bool))
        if self.provenance is not None:
            object.__setattr__(self, "provenance", _frozen(self.provenance, np.int64))

    def __repr__(self):
        return (f"TriangleMesh(domain={self.domain!r}, level={self.level}, "
                f"nodes={self.num_nodes}, triangles={self.num_triangles})")

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def num_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary_mask))

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        """Measure of the meshed domain."""
        return float(self.signed_areas().sum())

    def _edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return np.stack(
            [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)],
            axis=1,
        )

    def diameters(self) -> np.ndarray:
        return self._edge_lengths().max(axis=1)

    @property
    def h(self) -> float:
        """Mesh size, the largest element diameter."""
        return float(self.diameters().max())

    def quality(self) -> np.ndarray:
        """Per-element ratio of diameter to inscribed-circle diameter."""
        lengths = self._edge_lengths()
        inscribed = 4.0 * np.abs(self.signed_areas()) / lengths.sum(axis=1)
        return lengths.max(axis=1) / inscribed

    def edges(self):
        """Unique undirected edges and the triangle-to-edge map.

        Returns
        -------
        edges : (E, 2) int array, each row sorted
        tri_edges : (T, 3) int array; local edge k joins local vertices
            k and k+1
        counts : (E,) int array, number of triangles sharing each edge
        """
        t = self.triangles
        directed = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        flat = np.sort(directed.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            flat, axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1, 3), counts

    def check(self) -> None:
        """Raise :class:`InvalidMeshError` unless the mesh is a valid,
        conforming, positively oriented triangulation of a simply connected
        region."""
        if self.num_triangles == 0:
            raise InvalidMeshError("mesh has no triangles")
        if np.any(self.signed_areas() <= 0.0):
            raise InvalidMeshError("triangle with non-positive signed area")
        t = self.triangles
        directed = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        # a conforming, consistently oriented mesh uses every directed edge once
        if np.unique(directed, axis=0).shape[0] != directed.shape[0]:
            raise InvalidMeshError("edge shared with inconsistent orientation")
        edges, _, counts = self.edges()
        if np.any(counts > 2):
            raise InvalidMeshError("edge shared by more than two triangles")
        used = np.unique(t)
        if used.size != self.num_nodes:
            raise InvalidMeshError("mesh has unreferenced nodes")
        euler = self.num_nodes - edges.shape[0] + self.num_triangles
        if euler != 1:
            raise InvalidMeshError(
                f"Euler characteristic {euler} != 1 (hanging node or hole)"
            )


def _boundary_from_topology(num_nodes, triangles):
    mesh = TriangleMesh(np.zeros((num_nodes, 2)), triangles, np.zeros(num_nodes, bool))
    edges, _, counts = mesh.edges()
    mask = np.zeros(num_nodes, dtype=bool)
    mask[edges[counts == 1].ravel()] = True
    return mask


def unit_square_mesh(n: int) -> TriangleMesh:
    """Uniform ``n x n`` grid on (0,1)^2, each square cut along the diagonal
    from its lower-left to its upper-right corner.

    Node ``i + j*(n+1)`` sits at ``(i/n, j/n)``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"subdivisions must be a positive integer, got {n!r}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    x, y = np.meshgrid(ticks, ticks)  # index [j, i]
    nodes = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + j * (n + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])
    on_edge = np.isin(np.arange(n + 1), [0, n])
    bi, bj = np.meshgrid(on_edge, on_edge)
    boundary = (bi | bj).ravel()
    level = n.bit_length() - 1 if n & (n - 1) == 0 else 0
    return TriangleMesh(nodes, triangles, boundary, level=level, domain=UNIT_SQUARE)


def unit_disk_mesh(level: int) -> TriangleMesh:
    """Triangulation of the unit disk.

    The seed (level 0) is the hexagon fan :data:`DISK_SEED_NODES` /
    :data:`DISK_SEED_TRIANGLES`; each further level is one uniform
    refinement with new boundary nodes projected radially onto the circle.
    """
    if int(level) != level or level < 0:
        raise ValueError(f"level must be a nonnegative integer, got {level!r}")
    mesh = TriangleMesh(
        DISK_SEED_NODES,
        DISK_SEED_TRIANGLES,
        np.r_[False, np.ones(6, dtype=bool)],
        level=0,
        domain=UNIT_DISK,
    )
    for _ in range(int(level)):
        mesh = refine_uniform(mesh)
    return mesh


def project_to_circle(points: np.ndarray) -> np.ndarray:
    """Radial projection onto the unit circle."""
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def refine_uniform(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four through its edge midpoints.

    Fine nodes are numbered coarse nodes first, then one node per coarse
    edge in :meth:`TriangleMesh.edges` order.
    """
    mesh.check()
    edges, tri_edges, counts = mesh.edges()
    nc = mesh.num_nodes
    mid = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    on_boundary = counts == 1
    if mesh.domain == UNIT_DISK:
        mid[on_boundary] = project_to_circle(mid[on_boundary])
    nodes = np.vstack([mesh.nodes, mid])
    boundary = np.concatenate([mesh.boundary_mask, on_boundary])

    v0, v1, v2 = mesh.triangles.T
    m01, m12, m20 = (tri_edges + nc).T
    triangles = np.stack(
        [
            np.column_stack([v0, m01, m20]),
            np.column_stack([m01, v1, m12]),
            np.column_stack([m20, m12, v2]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)

    copied = np.arange(nc)
    provenance = np.vstack([np.column_stack([copied, copied]), edges])
    return TriangleMesh(
        nodes,
        triangles,
        boundary,
        level=mesh.level + 1,
        domain=mesh.domain,
        parent=mesh,
        provenance=provenance,
    )


def prolongation(coarse: TriangleMesh, fine: TriangleMesh) -> sp.csr_matrix:
    """Nodal interpolation of coarse P1 functions onto the refined mesh.

    Row ``i`` is a unit row when fine node ``i`` copies a coarse node and
    holds two entries ``0.5`` when it is an edge midpoint.
    """
    if fine.parent is not coarse or fine.provenance is None:
        raise HierarchyMismatchError("fine mesh is not the refinement of coarse mesh")
    pairs = fine.provenance
    n = fine.num_nodes
    rows = np.repeat(np.arange(n), 2)
    P = sp.csr_matrix(
        (np.full(2 * n, 0.5), (rows, pairs.ravel())),
        shape=(n, coarse.num_nodes),
    )
    P.sum_duplicates()
    P.sort_indices()
    return P


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Nested meshes from coarsest to finest with the prolongations between
    consecutive levels."""

    levels: tuple
    prolongations: tuple

    @classmethod
    def build(cls, coarsest: TriangleMesh, depth: int) -> "MeshHierarchy":
        """Refine ``coarsest`` ``depth`` times."""
        levels = [coarsest]
        for _ in range(depth):
            levels.append(refine_uniform(levels[-1]))
        prolongs = tuple(prolongation(c, f) for c, f in zip(levels[:-1], levels[1:]))
        return cls(tuple(levels), prolongs)

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self) -> TriangleMesh:
        return self.levels[-1]

    @property
    def coarsest(self) -> TriangleMesh:
        return self.levels[0]

    def index(self, level: int) -> int:
        """Position of the mesh with refinement depth ``level``."""
        pos = level - self.levels[0].level
        if not 0 <= pos < len(self.levels):
            raise HierarchyMismatchError(
                f"level {level} outside hierarchy "
                f"[{self.levels[0].level}, {self.levels[-1].level}]"
            )
        return pos

    def mesh(self, level: int) -> TriangleMesh:
        return self.levels[self.index(level)]

    def prolong(self, values: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
        """Carry nodal values from ``from_level`` up to ``to_level``."""
        i, j = self.index(from_level), self.index(to_level)
        if j < i:
            raise HierarchyMismatchError("prolongation only goes from coarse to fine")
        for P in self.prolongations[i:j]:
            values = P @ values
        return values


def write_mesh(mesh: TriangleMesh, path) -> None:
    """Plain-text dump: counts line, node lines ``x y flag``, triangle lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_nodes} {mesh.num_triangles}\n")
        for (x, y), flag in zip(mesh.nodes, mesh.boundary_mask):
            fh.write(f"{float(x)!r} {float(y)!r} {int(flag)}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path, domain: str = "polygon") -> TriangleMesh:
    with open(path) as fh:
        nn, nt = map(int, fh.readline().split())
        rows = [fh.readline().split() for _ in range(nn)]
        tris = [list(map(int, fh.readline().split())) for _ in range(nt)]
    nodes = np.array([[float(r[0]), float(r[1])] for r in rows])
    flags = np.array([r[2] == "1" for r in rows])
    return TriangleMesh(nodes, np.array(tris, dtype=np.int64), flags, domain=domain)
