"""Polygonal meshes of the unit square.

A :class:`PolyMesh` stores vertex coordinates and counter-clockwise vertex
loops; everything else (edges, adjacency, interior counts) is derived once at
construction and the object is treated as immutable afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, Voronoi


class MeshError(ValueError):
    """Invalid mesh data or generator parameters."""


class MeshFormatError(MeshError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


def signed_area(xy: np.ndarray) -> float:
    xy = xy - xy[0]  # shift first: avoids cancellation for small, far-off cells
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(xy: np.ndarray) -> np.ndarray:
    origin = xy[0]
    x, y = (xy - origin)[:, 0], (xy - origin)[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return origin + np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def diameter(xy: np.ndarray) -> float:
    d = xy[:, None, :] - xy[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def is_convex(xy: np.ndarray, tol: float = 1e-14) -> bool:
    e = np.roll(xy, -1, axis=0) - xy
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross > -tol * np.abs(e).max() ** 2))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def is_simple(xy: np.ndarray) -> bool:
    n = len(xy)
    if n < 3:
        return False
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(xy[i], xy[(i + 1) % n], xy[j], xy[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True, eq=False)
class Cell:
    vertex_ids: np.ndarray
    xy: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.vertex_ids)

    @cached_property
    def area(self) -> float:
        return signed_area(self.xy)

    @cached_property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.xy)

    @cached_property
    def diameter(self) -> float:
        return diameter(self.xy)

    @cached_property
    def convex(self) -> bool:
        return is_convex(self.xy)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Outward unit normals, one per edge ``(v_i, v_{i+1})``."""
        t = np.roll(self.xy, -1, axis=0) - self.xy
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self.xy, -1, axis=0) - self.xy, axis=1)

    def kernel_halfspaces(self) -> np.ndarray:
        # rows (a, b, c) meaning a*x + b*y + c <= 0
        n = self.edge_normals
        c = -np.einsum("ij,ij->i", n, self.xy)
        return np.column_stack([n, c])

    @cached_property
    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest disc inside the kernel.

        The kernel of a polygon is the intersection of the inner half-planes
        of its edges, so the disc follows from one small LP.
        """
        hs = self.kernel_halfspaces()
        a = hs[:, :2]
        norm = np.linalg.norm(a, axis=1)
        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=np.column_stack([a, norm]),
            b_ub=-hs[:, 2],
            bounds=[(None, None), (None, None), (0.0, None)],
            method="highs",
        )
        if res.status != 0 or res.x[2] <= 1e-14 * self.diameter:
            raise MeshError("cell is not star-shaped (empty kernel)")
        return res.x[:2], float(res.x[2])

    @cached_property
    def star_center(self) -> np.ndarray:
        if self.convex:
            return self.centroid
        return self.chebyshev_center[0]


@dataclass(frozen=True)
class Edge:
    v: tuple[int, int]  # v[0] < v[1]
    cells: tuple[int, ...]

    @property
    def is_boundary(self) -> bool:
        return len(self.cells) == 1


@dataclass(frozen=True, eq=False)
class PolyMesh:
    vertices: np.ndarray
    cell_loops: tuple[np.ndarray, ...]
    nominal_h: float | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or not np.all(np.isfinite(v)):
            raise MeshError("vertices must be a finite (N, 2) array")
        object.__setattr__(self, "vertices", v)
        loops = tuple(np.asarray(c, dtype=np.int64) for c in self.cell_loops)
        for i, c in enumerate(loops):
            if len(c) < 3:
                raise MeshError(f"cell {i} has fewer than 3 vertices")
            if c.min() < 0 or c.max() >= len(v):
                raise MeshError(f"cell {i} references a missing vertex")
            if len(set(c.tolist())) != len(c):
                raise MeshError(f"cell {i} repeats a vertex")
        object.__setattr__(self, "cell_loops", loops)
        self.edges  # validates conformity

    @property
    def n_cells(self) -> int:
        return len(self.cell_loops)

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        out = []
        for i, c in enumerate(self.cell_loops):
            cell = Cell(c, self.vertices[c])
            if cell.area <= 0:
                raise MeshError(f"cell {i} is not counter-clockwise")
            out.append(cell)
        return tuple(out)

    @cached_property
    def _edge_table(self):
        index: dict[tuple[int, int], int] = {}
        adj: list[list[int]] = []
        cell_edges = []
        for ci, loop in enumerate(self.cell_loops):
            ids = []
            for a, b in zip(loop, np.roll(loop, -1)):
                key = (int(min(a, b)), int(max(a, b)))
                if key not in index:
                    index[key] = len(adj)
                    adj.append([])
                e = index[key]
                adj[e].append(ci)
                ids.append(e)
            cell_edges.append(np.array(ids))
        edges = []
        for key, e in index.items():
            if len(adj[e]) > 2:
                raise MeshError(f"edge {key} is shared by more than two cells")
            edges.append(Edge(key, tuple(adj[e])))
        return tuple(edges), tuple(cell_edges)

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self._edge_table[0]

    @property
    def cell_edges(self) -> tuple[np.ndarray, ...]:
        """Global edge id of each local edge ``(v_i, v_{i+1})`` of every cell."""
        return self._edge_table[1]

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        for e in self.edges:
            if e.is_boundary:
                mask[list(e.v)] = True
        return mask

    @property
    def n_interior_vertices(self) -> int:
        used = np.zeros(len(self.vertices), dtype=bool)
        used[np.concatenate(self.cell_loops)] = True
        return int((used & ~self.boundary_vertex_mask).sum())

    @property
    def n_interior_edges(self) -> int:
        return sum(not e.is_boundary for e in self.edges)

    @property
    def n_boundary_edges(self) -> int:
        return sum(e.is_boundary for e in self.edges)

    @property
    def h(self) -> float:
        return max(c.diameter for c in self.cells)

    @property
    def area(self) -> float:
        return float(sum(c.area for c in self.cells))

    def counts(self) -> dict[str, int]:
        return {
            "n_P": self.n_cells,
            "n_V": self.n_interior_vertices,
            "n_E": self.n_interior_edges,
        }


# --------------------------------------------------------------- generators


def _check_n(n: int) -> None:
    if int(n) != n or n < 1:
        raise MeshError(f"cells per side must be a positive integer, got {n!r}")


def generate_quad_grid(n: int) -> PolyMesh:
    _check_n(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: j * (n + 1) + i  # noqa: E731
    cells = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for j in range(n)
        for i in range(n)
    ]
    return PolyMesh(verts, cells, nominal_h=1.0 / n)


TRIANGLE_PATTERNS = ("uniform", "checker")


def generate_triangle_grid(n: int, pattern: str = "uniform") -> PolyMesh:
    """Structured triangles, one diagonal per square.

    ``uniform`` cuts every square from lower-left to upper-right; ``checker``
    flips the diagonal on alternate squares, which removes the translation
    symmetry of the uniform pattern.
    """
    _check_n(n)
    if pattern not in TRIANGLE_PATTERNS:
        raise MeshError(f"unknown triangle pattern {pattern!r}")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: j * (n + 1) + i  # noqa: E731
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if pattern == "checker" and (i + j) % 2:
                cells += [[a, b, d], [b, c, d]]
            else:
                cells += [[a, b, c], [a, c, d]]
    return PolyMesh(verts, cells, nominal_h=1.0 / n)


_MIRRORS = (
    lambda p: np.column_stack([-p[:, 0], p[:, 1]]),
    lambda p: np.column_stack([2.0 - p[:, 0], p[:, 1]]),
    lambda p: np.column_stack([p[:, 0], -p[:, 1]]),
    lambda p: np.column_stack([p[:, 0], 2.0 - p[:, 1]]),
)


def _clipped_voronoi_regions(seeds: np.ndarray):
    pts = np.vstack([seeds] + [m(seeds) for m in _MIRRORS])
    vor = Voronoi(pts)
    regions = []
    for i in range(len(seeds)):
        reg = vor.regions[vor.point_region[i]]
        if -1 in reg or len(reg) < 3:
            raise MeshError("unbounded Voronoi region inside the square")
        regions.append(reg)
    return vor.vertices, regions


def _order_ccw(xy: np.ndarray, ids: list[int]) -> list[int]:
    c = xy[ids].mean(axis=0)
    ang = np.arctan2(xy[ids, 1] - c[1], xy[ids, 0] - c[0])
    return [ids[i] for i in np.argsort(ang)]


def _lloyd_step(seeds: np.ndarray) -> np.ndarray:
    verts, regions = _clipped_voronoi_regions(seeds)
    out = np.empty_like(seeds)
    for i, reg in enumerate(regions):
        loop = _order_ccw(verts, reg)
        out[i] = polygon_centroid(verts[loop])
    return out


def _voronoi_mesh(seeds: np.ndarray, snap: float = 1e-10) -> PolyMesh:
    verts, regions = _clipped_voronoi_regions(seeds)
    verts = verts.copy()
    for k in range(2):
        for b in (0.0, 1.0):
            close = np.abs(verts[:, k] - b) < snap
            verts[close, k] = b
    # merge coincident Voronoi vertices produced by co-circular seeds
    key = np.round(verts / snap).astype(np.int64)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    merged = np.zeros((len(uniq), 2))
    merged[inverse] = verts
    used: dict[int, int] = {}
    out_verts = []
    cells = []
    for reg in regions:
        ids = list(dict.fromkeys(int(inverse[r]) for r in reg))
        ids = _order_ccw(merged, ids)
        loop = []
        for g in ids:
            if g not in used:
                used[g] = len(out_verts)
                out_verts.append(merged[g])
            loop.append(used[g])
        cells.append(loop)
    return PolyMesh(np.array(out_verts), cells)


def generate_voronoi(
    n_seeds: int, lloyd_iters: int = 100, rng_seed: int = 0, max_retries: int = 5
) -> PolyMesh:
    """Lloyd-relaxed Voronoi mesh of the unit square.

    Seeds are reflected across the four sides so the regions of the original
    seeds come out already clipped to the square.
    """
    if int(n_seeds) != n_seeds or n_seeds < 1:
        raise MeshError(f"n_seeds must be a positive integer, got {n_seeds!r}")
    if n_seeds == 1:
        return PolyMesh(
            np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
            [[0, 1, 2, 3]],
            nominal_h=1.0,
        )
    rng = np.random.default_rng(rng_seed)
    last_err: Exception | None = None
    for _ in range(max_retries):
        seeds = rng.random((n_seeds, 2))
        try:
            for _ in range(lloyd_iters):
                seeds = _lloyd_step(seeds)
            mesh = _voronoi_mesh(seeds)
        except (MeshError, ValueError) as err:  # qhull degeneracy or bad region
            last_err = err
            continue
        return PolyMesh(mesh.vertices, mesh.cell_loops, nominal_h=1.0 / np.sqrt(n_seeds))
    raise MeshError(f"Voronoi generation failed after {max_retries} attempts: {last_err}")


def nominal_h_to_seeds(h: float) -> int:
    return max(1, int(round(1.0 / h**2)))


# ----------------------------------------------------------------- geometry


@dataclass(frozen=True, eq=False)
class GeometryReport:
    star_ratio: np.ndarray  # Chebyshev radius of the kernel / h_K
    vertex_ratio: np.ndarray  # min vertex distance / h_K
    kernel_area: np.ndarray

    @property
    def min_star_ratio(self) -> float:
        return float(self.star_ratio.min())

    @property
    def min_vertex_ratio(self) -> float:
        return float(self.vertex_ratio.min())


def kernel_polygon(cell: Cell) -> np.ndarray:
    center, _ = cell.chebyshev_center
    hs = HalfspaceIntersection(cell.kernel_halfspaces(), center)
    pts = hs.intersections
    hull = ConvexHull(pts)
    return pts[hull.vertices]


def check_geometry(mesh: PolyMesh) -> GeometryReport:
    star, vert, karea = [], [], []
    for i, cell in enumerate(mesh.cells):
        if not is_simple(cell.xy):
            raise MeshError(f"cell {i} is not a simple polygon")
        hk = cell.diameter
        _, r = cell.chebyshev_center
        star.append(r / hk)
        d = cell.xy[:, None, :] - cell.xy[None, :, :]
        dist = np.sqrt((d**2).sum(-1))
        vert.append(dist[np.triu_indices(len(dist), 1)].min() / hk)
        karea.append(signed_area(kernel_polygon(cell)))
    return GeometryReport(np.array(star), np.array(vert), np.array(karea))


# ---------------------------------------------------------------------- I/O


def write_mesh(mesh: PolyMesh, path: str | Path) -> None:
    lines = ["vempoly 1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(v) for v in [len(c), *c.tolist()]) for c in mesh.cell_loops]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> PolyMesh:
    raw = Path(path).read_text().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip()]
    if not lines:
        raise MeshFormatError("empty mesh file", 1)
    it = iter(lines)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}", len(raw) + 1)

    lineno, text = take("header")
    if text.split() != ["vempoly", "1"]:
        raise MeshFormatError("expected header 'vempoly 1'", lineno)

    def count(keyword):
        lineno, text = take(f"'{keyword} N'")
        parts = text.split()
        if len(parts) != 2 or parts[0] != keyword or not parts[1].isdigit():
            raise MeshFormatError(f"expected '{keyword} N'", lineno)
        return int(parts[1])

    nv = count("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, text = take("vertex coordinates")
        parts = text.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError("expected two coordinates 'x y'", lineno) from None
    nc = count("cells")
    cells = []
    for _ in range(nc):
        lineno, text = take("cell definition")
        try:
            ids = [int(t) for t in text.split()]
        except ValueError:
            raise MeshFormatError("cell entries must be integers", lineno) from None
        if not ids or ids[0] != len(ids) - 1:
            raise MeshFormatError("cell vertex count does not match entries", lineno)
        if ids[0] < 3:
            raise MeshFormatError("a cell needs at least 3 vertices", lineno)
        if min(ids[1:]) < 0 or max(ids[1:]) >= nv:
            raise MeshFormatError("cell references a missing vertex", lineno)
        cells.append(ids[1:])
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError("trailing content after cells", extra[0])
    try:
        mesh = PolyMesh(verts, cells)
        mesh.cells
    except MeshFormatError:
        raise
    except MeshError as err:
        raise MeshFormatError(str(err)) from None
    return mesh
