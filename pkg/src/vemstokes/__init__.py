"""Divergence-free virtual elements for 2D Stokes on polygonal meshes."""

from .element import CLASSIC, DIVFREE, LocalElement
from .mesh import PolyMesh, generate_quad_grid, generate_triangle_grid, generate_voronoi, read_mesh, write_mesh
from .system import FULL, REDUCED, REDUCED_POST, assemble, reduce_and_solve, solve

__all__ = [
    "CLASSIC", "DIVFREE", "FULL", "REDUCED", "REDUCED_POST", "LocalElement", "PolyMesh",
    "assemble", "generate_quad_grid", "generate_triangle_grid", "generate_voronoi",
    "read_mesh", "reduce_and_solve", "solve", "write_mesh",
]
__version__ = "0.1.0"
