"""Global assembly, saddle-point solves and the reduced scheme.

Velocity DoFs are numbered by kind: all vertex values, then all edge-node
values, then per-cell complement moments, then per-cell divergence moments
(the last group exists only for the divergence-free element). Pressures are
per-cell coefficients in an L2-orthonormal basis of P_{k-1}: first the
constant coefficient of every cell, then the higher ones cell by cell.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .element import CLASSIC, DIVFREE, Field, LocalElement
from .mesh import PolyMesh
from .polybasis import ROTATIONAL, gauss_lobatto, n_poly

log = logging.getLogger(__name__)

FULL = "full"
REDUCED = "reduced"
REDUCED_POST = "reduced-post"
SCHEMES = (FULL, REDUCED, REDUCED_POST)


class SolverError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------- counting


def dim_velocity(n_P: int, n_V: int, n_E: int, k: int, reduced: bool = False) -> int:
    """Interior velocity DoFs of the divergence-free space (or its reduced
    counterpart)."""
    cell = (k - 1) * (k - 2) // 2
    if not reduced:
        cell += (k + 1) * k // 2 - 1
    return n_P * cell + 2 * (n_V + (k - 1) * n_E)


def dim_pressure(n_P: int, k: int, reduced: bool = False, minus_one: bool = True) -> int:
    per = 1 if reduced else (k + 1) * k // 2
    return n_P * per - (1 if minus_one else 0)


def dof_saving(n_P: int, n_V: int, n_E: int, k: int, minus_one: bool) -> float:
    """Percentage of DoFs removed by the reduced scheme.

    ``minus_one`` selects whether the zero-mean pressure constraint is
    subtracted from the full pressure count.
    """
    total = dim_velocity(n_P, n_V, n_E, k) + dim_pressure(n_P, k, minus_one=minus_one)
    return 100.0 * n_P * ((k + 1) * k - 2) / total


@dataclass(eq=False)
class GlobalDofMap:
    mesh: PolyMesh
    k: int
    kind: str = DIVFREE

    def __post_init__(self):
        k = self.k
        self.n_vertices = len(self.mesh.vertices)
        self.n_edges = len(self.mesh.edges)
        self.n_moment = (k - 1) * (k - 2) // 2 if self.kind == DIVFREE else k * (k - 1)
        self.n_div = k * (k + 1) // 2 - 1 if self.kind == DIVFREE else 0
        n_P = self.mesh.n_cells
        self.off_edge = 2 * self.n_vertices
        self.off_moment = self.off_edge + 2 * (k - 1) * self.n_edges
        self.off_div = self.off_moment + n_P * self.n_moment
        self.n_velocity = self.off_div + n_P * self.n_div
        self.n_qcell = n_poly(k - 1)
        self.n_pressure = n_P * self.n_qcell

    @cached_property
    def node_positions(self) -> np.ndarray:
        t = gauss_lobatto(self.k + 1)[0][1:-1]
        v = self.mesh.vertices
        e = np.array([ed.v for ed in self.mesh.edges]).reshape(-1, 2)
        a, b = v[e[:, 0]], v[e[:, 1]]
        inner = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        return np.vstack([v, inner.reshape(-1, 2)])

    @cached_property
    def cell_dofs(self) -> tuple[np.ndarray, ...]:
        k = self.k
        out = []
        edges = self.mesh.edges
        for K, (loop, eids) in enumerate(zip(self.mesh.cell_loops, self.mesh.cell_edges)):
            nodes = list(loop)
            for i, e in enumerate(eids):
                forward = loop[i] == edges[e].v[0]
                js = np.arange(k - 1) if forward else np.arange(k - 2, -1, -1)
                nodes.extend(self.n_vertices + e * (k - 1) + js)
            nodes = np.asarray(nodes, dtype=np.int64)
            bd = np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()
            mom = self.off_moment + K * self.n_moment + np.arange(self.n_moment)
            div = self.off_div + K * self.n_div + np.arange(self.n_div)
            out.append(np.concatenate([bd, mom, div]))
        return tuple(out)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Velocity DoFs attached to nodes on the domain boundary."""
        k = self.k
        node = np.zeros(self.n_vertices + (k - 1) * self.n_edges, dtype=bool)
        node[: self.n_vertices] = self.mesh.boundary_vertex_mask
        for e, ed in enumerate(self.mesh.edges):
            if ed.is_boundary:
                node[self.n_vertices + e * (k - 1) : self.n_vertices + (e + 1) * (k - 1)] = True
        mask = np.zeros(self.n_velocity, dtype=bool)
        mask[: 2 * len(node)] = np.repeat(node, 2)
        return mask

    @cached_property
    def dof_kind(self) -> np.ndarray:
        kinds = np.empty(self.n_velocity, dtype=np.int8)
        kinds[: self.off_edge] = 1
        kinds[self.off_edge : self.off_moment] = 2
        kinds[self.off_moment : self.off_div] = 3
        kinds[self.off_div :] = 4
        return kinds

    def cell_pressure(self, K: int) -> np.ndarray:
        n_P = self.mesh.n_cells
        hi = n_P + K * (self.n_qcell - 1) + np.arange(self.n_qcell - 1)
        return np.concatenate([[K], hi])

    @property
    def n_interior_velocity(self) -> int:
        return int((~self.boundary_mask).sum())

    def reduced_velocity_mask(self) -> np.ndarray:
        return self.dof_kind != 4

    def reduced_pressure_mask(self) -> np.ndarray:
        m = np.zeros(self.n_pressure, dtype=bool)
        m[: self.mesh.n_cells] = True
        return m


def number_dofs(mesh: PolyMesh, k: int, kind: str = DIVFREE) -> GlobalDofMap:
    return GlobalDofMap(mesh, k, kind)


# ---------------------------------------------------------------- assembly


@dataclass(eq=False)
class SaddleSystem:
    dofmap: GlobalDofMap
    elements: list[LocalElement]
    A: sp.csr_matrix  # a_h over all velocity DoFs
    B: sp.csr_matrix  # b over all pressures x all velocity DoFs
    F: np.ndarray  # (f_h, phi_i)
    g: np.ndarray  # Dirichlet values (zero away from the boundary)
    local_loads: list[np.ndarray]
    flux_correction: float = 0.0
    tol: float = 1e-10

    @property
    def k(self) -> int:
        return self.dofmap.k

    @property
    def kind(self) -> str:
        return self.dofmap.kind

    @cached_property
    def mean_row(self) -> np.ndarray:
        """Coefficients of ``int_Omega p`` in the pressure basis."""
        c = np.zeros(self.dofmap.n_pressure)
        c[: self.dofmap.mesh.n_cells] = [np.sqrt(el.area) for el in self.elements]
        return c

    def kkt(self, vel_keep: np.ndarray | None = None, p_keep: np.ndarray | None = None):
        """Saddle-point matrix on the free unknowns plus one multiplier row
        for the zero-mean pressure."""
        dm = self.dofmap
        vel_keep = np.ones(dm.n_velocity, bool) if vel_keep is None else vel_keep
        p_keep = np.ones(dm.n_pressure, bool) if p_keep is None else p_keep
        free = np.flatnonzero(vel_keep & ~dm.boundary_mask)
        dirich = np.flatnonzero(dm.boundary_mask)
        pidx = np.flatnonzero(p_keep)
        A = self.A
        Bm = self.B[pidx]
        Aff = A[free][:, free]
        Bf = Bm[:, free]
        c = sp.csr_matrix(self.mean_row[pidx][:, None])
        K = sp.bmat(
            [[Aff, Bf.T, None], [Bf, None, c], [None, c.T, None]], format="csc"
        )
        gD = self.g[dirich]
        rhs = np.concatenate(
            [
                self.F[free] - A[free][:, dirich] @ gD,
                -(Bm[:, dirich] @ gD),
                [0.0],
            ]
        )
        return K, rhs, free, pidx


def _flux_balanced_values(dm: GlobalDofMap, g: Field, balance: bool) -> tuple[np.ndarray, float]:
    k = dm.k
    pos = dm.node_positions
    vals = np.zeros(dm.n_velocity)
    bmask = dm.boundary_mask
    node_b = bmask[: 2 * len(pos) : 2]
    if not node_b.any():
        return vals, 0.0
    gv = np.asarray(g(pos[node_b]), dtype=float)
    if gv.shape != (node_b.sum(), 2) or not np.all(np.isfinite(gv)):
        raise ConfigurationError("Dirichlet data must return finite (n, 2) values")
    full = np.zeros((len(pos), 2))
    full[node_b] = gv
    # discrete outflow through the boundary, computed with the edge rule
    _, w = gauss_lobatto(k + 1)
    nv = dm.n_vertices
    flux, inner_weight = 0.0, 0.0
    edge_normals = []
    for e, ed in enumerate(dm.mesh.edges):
        if not ed.is_boundary:
            continue
        cell = dm.mesh.cells[ed.cells[0]]
        loop = list(dm.mesh.cell_loops[ed.cells[0]])
        i = [j for j in range(len(loop)) if {loop[j], loop[(j + 1) % len(loop)]} == set(ed.v)][0]
        n = cell.edge_normals[i]
        ln = cell.edge_lengths[i]
        ids = np.concatenate([[ed.v[0]], nv + e * (k - 1) + np.arange(k - 1), [ed.v[1]]])
        flux += ln * (w @ (full[ids] @ n))
        inner_weight += ln * w[1:-1].sum()
        edge_normals.append((ids[1:-1], n, ln))
    if balance and flux != 0.0:
        t = flux / inner_weight
        for ids, n, _ in edge_normals:
            full[ids] -= t * n
    vals[: 2 * len(pos)] = full.ravel()
    vals[~bmask] = 0.0
    return vals, flux


def assemble(
    mesh: PolyMesh,
    k: int,
    f: Field,
    nu: float = 1.0,
    kind: str = DIVFREE,
    dirichlet: Field | None = None,
    mode: str = ROTATIONAL,
    balance_flux: bool = True,
) -> SaddleSystem:
    """Assemble the global saddle-point problem.

    Dirichlet data is interpolated at the boundary nodes; with
    ``balance_flux`` the normal component at the edge-interior nodes is
    shifted uniformly so the discrete boundary outflow vanishes, which
    keeps ``div u_h = 0`` compatible with the data.
    """
    dm = GlobalDofMap(mesh, k, kind)
    nus = np.broadcast_to(np.asarray(nu, dtype=float), (mesh.n_cells,))
    rows, cols, vals = [], [], []
    brows, bcols, bvals = [], [], []
    F = np.zeros(dm.n_velocity)
    elements, loads = [], []
    for K, cell in enumerate(mesh.cells):
        el = LocalElement(cell, k, nus[K], kind=kind, mode=mode)
        idx = dm.cell_dofs[K]
        Ak = el.stiffness
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(Ak.ravel())
        bk = el.divergence
        pidx = dm.cell_pressure(K)
        nz = np.nonzero(bk)
        brows.append(pidx[nz[0]])
        bcols.append(idx[nz[1]])
        bvals.append(bk[nz])
        fk = el.load(f)
        np.add.at(F, idx, fk)
        elements.append(el)
        loads.append(fk)
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dm.n_velocity, dm.n_velocity),
    )
    B = sp.csr_matrix(
        (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
        shape=(dm.n_pressure, dm.n_velocity),
    )
    if dirichlet is None:
        g, flux = np.zeros(dm.n_velocity), 0.0
    else:
        g, flux = _flux_balanced_values(dm, dirichlet, balance_flux)
    return SaddleSystem(dm, elements, A, B, F, g, loads, flux)


# ---------------------------------------------------------------- solving


@dataclass(eq=False)
class Solution:
    system: SaddleSystem
    u: np.ndarray  # all velocity DoFs (boundary values included)
    p: np.ndarray  # all pressure coefficients
    multiplier: float
    scheme: str
    residual: float
    extra: dict = field(default_factory=dict)

    @property
    def dofmap(self) -> GlobalDofMap:
        return self.system.dofmap

    def cell_u(self, K: int) -> np.ndarray:
        return self.u[self.dofmap.cell_dofs[K]]

    def cell_p(self, K: int) -> np.ndarray:
        return self.p[self.dofmap.cell_pressure(K)]

    def energy_norm(self, v: np.ndarray | None = None) -> float:
        v = self.u if v is None else v
        return float(np.sqrt(max(v @ (self.system.A @ v), 0.0)))

    @property
    def ndof(self) -> int:
        """Free velocity DoFs plus pressure DoFs minus the mean constraint."""
        return int(self.extra["ndof"])


def _solve_kkt(system: SaddleSystem, vel_keep, p_keep, scheme: str) -> Solution:
    dm = system.dofmap
    K, rhs, free, pidx = system.kkt(vel_keep, p_keep)
    try:
        lu = spla.splu(K)
        x = lu.solve(rhs)
    except RuntimeError as err:  # exactly singular factor
        raise SolverError(f"singular saddle-point matrix (inf-sup or mesh failure): {err}")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution: saddle-point matrix is singular")
    nrm = np.linalg.norm(rhs)
    res = np.linalg.norm(K @ x - rhs) / (nrm if nrm > 0 else 1.0)
    if res > system.tol:
        # one step of iterative refinement before giving up
        x = x + lu.solve(rhs - K @ x)
        res = np.linalg.norm(K @ x - rhs) / (nrm if nrm > 0 else 1.0)
    if res > system.tol:
        raise SolverError(f"residual {res:.2e} above tolerance {system.tol:.0e}")
    u = system.g.copy()
    u[free] = x[: len(free)]
    p = np.zeros(dm.n_pressure)
    p[pidx] = x[len(free) : len(free) + len(pidx)]
    lam = float(x[-1])
    log.debug("%s solve: %d unknowns, residual %.2e", scheme, len(rhs), res)
    return Solution(system, u, p, lam, scheme, float(res), {"ndof": len(free) + len(pidx) - 1})


def solve(system: SaddleSystem) -> Solution:
    return _solve_kkt(system, None, None, FULL)


def reduce_and_solve(system: SaddleSystem) -> Solution:
    """Drop the divergence-moment velocities and non-constant pressures and
    solve what is left; the dropped velocity DoFs are zero."""
    if system.kind != DIVFREE:
        raise ConfigurationError("the reduced scheme needs the divergence-free element")
    dm = system.dofmap
    return _solve_kkt(system, dm.reduced_velocity_mask(), dm.reduced_pressure_mask(), REDUCED)


def postprocess_pressure(sol: Solution) -> Solution:
    """Recover the non-constant pressure modes cell by cell.

    In every cell the divergence-moment rows of the full system read
    ``a_h^K(u, phi_4) + p_perp = f_4`` because b^K is the identity there.
    """
    system = sol.system
    dm = system.dofmap
    p = sol.p.copy()
    for K, el in enumerate(system.elements):
        rows = el.layout.div_slice
        uK = sol.cell_u(K)
        p_perp = system.local_loads[K][rows] - el.stiffness[rows] @ uK
        p[dm.cell_pressure(K)[1:]] = p_perp
    return Solution(system, sol.u, p, sol.multiplier, REDUCED_POST, sol.residual, dict(sol.extra))


def solve_scheme(system: SaddleSystem, scheme: str) -> Solution:
    if scheme == FULL:
        return solve(system)
    if scheme == REDUCED:
        return reduce_and_solve(system)
    if scheme == REDUCED_POST:
        return postprocess_pressure(reduce_and_solve(system))
    raise ConfigurationError(f"unknown scheme {scheme!r}")


# ------------------------------------------------------------- diagnostics


def divergence_report(sol: Solution) -> np.ndarray:
    """Per-cell L2 norm of div u_h (of its P_{k-1} projection for the
    classic element, which is not pointwise divergence-free)."""
    out = np.empty(sol.dofmap.mesh.n_cells)
    for K, el in enumerate(sol.system.elements):
        out[K] = np.linalg.norm(el.divergence @ sol.cell_u(K))
    return out


def equivalence_errors(full: Solution, reduced: Solution) -> tuple[float, float]:
    """Energy distance between the reduced interpolant of the full velocity
    and the reduced velocity, and the L2 distance of the cell means of the
    pressures."""
    dm = full.dofmap
    keep = dm.reduced_velocity_mask()
    d = np.where(keep, full.u - reduced.u, 0.0)
    eps_u = float(np.sqrt(max(d @ (full.system.A @ d), 0.0)))
    n_P = dm.mesh.n_cells
    eps_p = float(np.linalg.norm(full.p[:n_P] - reduced.p[:n_P]))
    return eps_u, eps_p


def galerkin_residual(sol: Solution, n_tests: int = 20, seed: int = 0) -> float:
    """Largest relative residual of the momentum equation tested with random
    discrete fields vanishing on the boundary."""
    system = sol.system
    dm = system.dofmap
    rng = np.random.default_rng(seed)
    free = ~dm.boundary_mask
    if sol.scheme != FULL:
        free &= dm.reduced_velocity_mask()
    p = sol.p if sol.scheme == FULL else np.where(dm.reduced_pressure_mask(), sol.p, 0.0)
    r = system.A @ sol.u + system.B.T @ p - system.F
    scale = np.abs(system.A @ sol.u).max() + np.abs(system.F).max() + 1e-300
    worst = 0.0
    for _ in range(n_tests):
        v = np.where(free, rng.standard_normal(dm.n_velocity), 0.0)
        worst = max(worst, abs(v @ r) / (scale * np.linalg.norm(v)))
    return worst


def inf_sup_constant(system: SaddleSystem, reduced: bool = False) -> float:
    """Discrete inf-sup constant in the |.|_{1,h} / L2 pairing.

    Square root of the smallest eigenvalue of ``B A^{-1} B^T`` on
    zero-mean pressures (the pressure basis is L2-orthonormal).
    """
    dm = system.dofmap
    vel = ~dm.boundary_mask
    pk = np.ones(dm.n_pressure, bool)
    if reduced:
        vel &= dm.reduced_velocity_mask()
        pk = dm.reduced_pressure_mask()
    fi = np.flatnonzero(vel)
    pi = np.flatnonzero(pk)
    A = system.A[fi][:, fi].toarray()
    B = system.B[pi][:, fi].toarray()
    S = B @ scipy.linalg.solve(A, B.T, assume_a="pos")
    c = system.mean_row[pi]
    c = c / np.linalg.norm(c)
    # restrict to the orthogonal complement of the constant pressure
    Q = scipy.linalg.null_space(c[None, :])
    ev = scipy.linalg.eigvalsh(Q.T @ S @ Q)
    return float(np.sqrt(max(ev[0], 0.0)))
