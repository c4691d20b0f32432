"""Local virtual element matrices on one polygonal cell.

Two velocity elements are provided:

* ``"new"`` -- the divergence-free element. DoFs are vertex values, values
  at the interior Gauss-Lobatto nodes of every edge, moments against the
  complement of ``grad P_{k-1}`` in ``[P_{k-2}]^2`` and the moments of
  ``div v`` against the non-constant members of an L2-orthonormal basis of
  ``P_{k-1}``.
* ``"classic"`` -- the Laplace-type element whose interior DoFs are the
  moments against all of ``[P_{k-2}]^2``.

Local DoF order: vertex values, edge-node values (each node contributes
its x then y value), complement moments, divergence moments. Moment DoFs
against vector fields carry a ``1/|K|`` factor so that all DoFs scale
alike.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .mesh import Cell
from .polybasis import (
    ROTATIONAL,
    GradSplit,
    PolyCell,
    derivative_matrix,
    gauss_legendre01,
    gauss_lobatto,
    n_poly,
    polygon_quadrature,
)

DIVFREE = "new"
CLASSIC = "classic"
KINDS = (DIVFREE, CLASSIC)

Field = Callable[[np.ndarray], np.ndarray]


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class DofLayout:
    k: int
    n_K: int
    kind: str = DIVFREE

    def __post_init__(self):
        if self.k < 2:
            raise UnsupportedDegree(f"velocity degree must be >= 2, got {self.k}")
        if self.n_K < 3:
            raise ValueError("a polygon has at least 3 edges")
        if self.kind not in KINDS:
            raise ValueError(f"unknown element kind {self.kind!r}")

    @property
    def n_vert(self) -> int:
        return 2 * self.n_K

    @property
    def n_edge(self) -> int:
        return 2 * self.n_K * (self.k - 1)

    @property
    def n_moment(self) -> int:
        k = self.k
        return (k - 1) * (k - 2) // 2 if self.kind == DIVFREE else k * (k - 1)

    @property
    def n_div(self) -> int:
        k = self.k
        return k * (k + 1) // 2 - 1 if self.kind == DIVFREE else 0

    @property
    def n_boundary(self) -> int:
        return self.n_vert + self.n_edge

    @property
    def total(self) -> int:
        return self.n_boundary + self.n_moment + self.n_div

    @property
    def moment_slice(self) -> slice:
        return slice(self.n_boundary, self.n_boundary + self.n_moment)

    @property
    def div_slice(self) -> slice:
        return slice(self.n_boundary + self.n_moment, self.total)

    @property
    def n_nodes(self) -> int:
        return self.n_K * self.k


def dof_layout(k: int, n_K: int, kind: str = DIVFREE) -> DofLayout:
    return DofLayout(k, n_K, kind)


def boundary_nodes(cell: Cell, k: int) -> np.ndarray:
    """Vertices followed by the k-1 interior Gauss-Lobatto nodes of each edge."""
    t = gauss_lobatto(k + 1)[0][1:-1]
    xy = cell.xy
    nxt = np.roll(xy, -1, axis=0)
    inner = xy[:, None, :] + t[None, :, None] * (nxt - xy)[:, None, :]
    return np.vstack([xy, inner.reshape(-1, 2)])


def edge_node_ids(n_K: int, k: int, i: int) -> np.ndarray:
    """Local node ids along edge i, from vertex i to vertex i+1."""
    inner = n_K + i * (k - 1) + np.arange(k - 1)
    return np.concatenate([[i], inner, [(i + 1) % n_K]])


class LocalElement:
    """All computable local matrices of one cell.

    Attributes are built lazily; the main ones are ``proj`` (the energy
    projector, DoFs -> [P_k]^2 coefficients), ``stiffness`` (a_h^K),
    ``divergence`` (b^K against the orthonormal P_{k-1} basis) and
    ``dof_matrix`` (DoFs of the [P_k]^2 monomial basis).
    """

    def __init__(
        self,
        cell: Cell,
        k: int,
        nu: float = 1.0,
        kind: str = DIVFREE,
        mode: str = ROTATIONAL,
        pc: PolyCell | None = None,
    ):
        self.layout = DofLayout(k, cell.n_edges, kind)
        self.cell = cell
        self.k = k
        self.nu = float(nu)
        self.kind = kind
        self.mode = mode
        self.pc = pc if pc is not None else PolyCell(cell, k)
        self.split = GradSplit(self.pc, mode) if kind == DIVFREE else None
        self.nodes = boundary_nodes(cell, k)

    # ------------------------------------------------------------ helpers

    @property
    def ndof(self) -> int:
        return self.layout.total

    @property
    def area(self) -> float:
        return self.pc.area

    @cached_property
    def _boundary_incidence(self):
        """Per (edge, Gauss-Lobatto node): local node id, position, weight
        times edge length, outward normal."""
        k, nK = self.k, self.layout.n_K
        w = gauss_lobatto(k + 1)[1]
        ids, wts, nrm = [], [], []
        for i in range(nK):
            ids.append(edge_node_ids(nK, k, i))
            wts.append(w * self.cell.edge_lengths[i])
            nrm.append(np.repeat(self.cell.edge_normals[i][None], k + 1, axis=0))
        ids = np.concatenate(ids)
        return ids, self.nodes[ids], np.concatenate(wts), np.vstack(nrm)

    def boundary_flux_matrix(self, scalar_vals: np.ndarray) -> np.ndarray:
        """Rows ``oint s_j (phi . n)`` for scalar polynomials given by their
        values at the incidence points, shape (nfun, n_boundary_dofs).

        Exact when s_j is of degree <= k-1 on each edge.
        """
        ids, _, w, n = self._boundary_incidence
        out = np.zeros((scalar_vals.shape[1], self.layout.n_boundary))
        for c in range(2):
            np.add.at(out.T, 2 * ids + c, (scalar_vals * (w * n[:, c])[:, None]))
        return out

    @cached_property
    def _ortho_mass(self) -> np.ndarray:
        """T @ H_{k-1}: maps P_{k-1} monomial coefficients to moments against
        the orthonormal basis."""
        return self.pc.orthonormal @ self.pc.mass(self.k - 1)

    @cached_property
    def vector_mass(self) -> np.ndarray:
        H = self.pc.mass(self.k - 2)
        Z = np.zeros_like(H)
        return np.block([[H, Z], [Z, H]])

    def _comp_values(self, pts: np.ndarray) -> np.ndarray:
        """Interior moment test fields at pts, shape (npts, n_moment, 2)."""
        if self.kind == DIVFREE:
            return self.split.comp_values(pts)
        m = self.pc.monomials(self.k - 2).eval(pts)
        z = np.zeros_like(m)
        return np.concatenate([np.stack([m, z], -1), np.stack([z, m], -1)], axis=1)

    # -------------------------------------------------- moment identity

    @cached_property
    def moment_matrix(self) -> np.ndarray:
        """``M[b, i] = int_K phi_i . E_b`` for the [P_{k-2}]^2 monomials E_b.

        This is the L2 projection onto [P_{k-2}]^2 expressed through DoFs.
        """
        L = self.layout
        nE = 2 * n_poly(self.k - 2)
        M = np.zeros((nE, self.ndof))
        if self.kind == CLASSIC:
            M[:, L.moment_slice] = self.area * np.eye(nE)
            return M
        r, g = self.split.decompose(np.eye(nE))
        _, pos, _, _ = self._boundary_incidence
        rvals = self.pc.monomials(self.k - 1).eval(pos) @ r
        M[:, : L.n_boundary] = self.boundary_flux_matrix(rvals)
        M[:, L.moment_slice] = self.area * g.T
        M[:, L.div_slice] = -(self._ortho_mass @ r)[1:].T
        return M

    def reduced_moment_matrix(self) -> np.ndarray:
        """Moment matrix of the reduced space, for divergence-free kinds.

        Uses the identity valid when ``div v`` is constant on K, with the
        gradient potential left un-normalised; it must agree with the
        first columns of :attr:`moment_matrix`.
        """
        L = self.layout
        nE = 2 * n_poly(self.k - 2)
        r, g = self.split.decompose(np.eye(nE), zero_mean=False)
        _, pos, _, _ = self._boundary_incidence
        rvals = self.pc.monomials(self.k - 1).eval(pos) @ r
        flux = self.boundary_flux_matrix(np.ones((len(pos), 1)))[0]
        r_int = self.pc.integral(self.k - 1) @ r
        M = np.zeros((nE, L.n_boundary + L.n_moment))
        M[:, : L.n_boundary] = self.boundary_flux_matrix(rvals) - np.outer(r_int, flux) / self.area
        M[:, L.moment_slice] = self.area * g.T
        return M

    # --------------------------------------------------- polynomial side

    @cached_property
    def poly_stiffness(self) -> np.ndarray:
        """G[a, b] = a^K(Q_a, Q_b) for the [P_k]^2 monomials."""
        gr = self.pc.basis.grad(self.pc.quad.points)
        w = self.pc.quad.weights
        g = np.einsum("q,qai,qbi->ab", w, gr, gr)
        Z = np.zeros_like(g)
        return self.nu * np.block([[g, Z], [Z, g]])

    @cached_property
    def dof_matrix(self) -> np.ndarray:
        """D[i, b] = DoF i of the [P_k]^2 monomial Q_b."""
        k, L = self.k, self.layout
        nk = n_poly(k)
        D = np.zeros((self.ndof, 2 * nk))
        mv = self.pc.basis.eval(self.nodes)
        D[0 : L.n_boundary : 2, :nk] = mv
        D[1 : L.n_boundary : 2, nk:] = mv
        q = self.pc.quad
        vals = self.pc.values(k)
        comp = self._comp_values(q.points)
        wv = vals * q.weights[:, None]
        D[L.moment_slice, :nk] = np.einsum("qb,qj->jb", wv, comp[:, :, 0]) / self.area
        D[L.moment_slice, nk:] = np.einsum("qb,qj->jb", wv, comp[:, :, 1]) / self.area
        if self.kind == DIVFREE:
            Dx = derivative_matrix(k, 0, self.pc.h)
            Dy = derivative_matrix(k, 1, self.pc.h)
            D[L.div_slice, :nk] = (self._ortho_mass @ Dx)[1:]
            D[L.div_slice, nk:] = (self._ortho_mass @ Dy)[1:]
        return D

    @cached_property
    def consistency_matrix(self) -> np.ndarray:
        """B[a, i] = a^K(Q_a, phi_i), computed from DoFs only."""
        k = self.k
        nk, nk2 = n_poly(k), n_poly(k - 2)
        lap = derivative_matrix(k - 1, 0, self.pc.h) @ derivative_matrix(k, 0, self.pc.h)
        lap = lap + derivative_matrix(k - 1, 1, self.pc.h) @ derivative_matrix(k, 1, self.pc.h)
        Lv = np.zeros((2 * nk2, 2 * nk))
        Lv[:nk2, :nk] = lap
        Lv[nk2:, nk:] = lap
        B = -Lv.T @ self.moment_matrix
        # boundary term: oint (grad Q_a n) . phi
        ids, pos, w, n = self._boundary_incidence
        gr = self.pc.basis.grad(pos)  # (nb, nk, 2)
        dn = np.einsum("qai,qi->qa", gr, n) * w[:, None]
        bnd = np.zeros((2 * nk, self.layout.n_boundary))
        for c in range(2):
            np.add.at(bnd[c * nk : (c + 1) * nk].T, 2 * ids + c, dn)
        B[:, : self.layout.n_boundary] += bnd
        return self.nu * B

    @cached_property
    def mean_rows(self) -> np.ndarray:
        """(1/|K|) int_K phi_i for the x and y components, shape (2, ndof)."""
        nk2 = n_poly(self.k - 2)
        return self.moment_matrix[[0, nk2]] / self.area

    @cached_property
    def proj(self) -> np.ndarray:
        """Energy projector: DoF vector -> [P_k]^2 monomial coefficients."""
        nk = n_poly(self.k)
        G = self.poly_stiffness.copy()
        B = self.consistency_matrix.copy()
        means = self.pc.integral(self.k) / self.area
        G[0] = 0.0
        G[nk] = 0.0
        G[0, :nk] = means
        G[nk, nk:] = means
        B[0] = self.mean_rows[0]
        B[nk] = self.mean_rows[1]
        return np.linalg.solve(G, B)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """a_h^K: consistency part plus nu-scaled dofi-dofi stabilization."""
        P = self.proj
        R = np.eye(self.ndof) - self.dof_matrix @ P
        A = P.T @ self.poly_stiffness @ P + self.nu * (R.T @ R)
        return 0.5 * (A + A.T)

    # ------------------------------------------------------- divergence

    @cached_property
    def divergence(self) -> np.ndarray:
        """b^K[a, i] = int_K div(phi_i) mhat_a, mhat orthonormal in P_{k-1}."""
        L = self.layout
        T = self.pc.orthonormal
        nq = n_poly(self.k - 1)
        out = np.zeros((nq, self.ndof))
        _, pos, _, _ = self._boundary_incidence
        mhat = self.pc.monomials(self.k - 1).eval(pos) @ T.T
        if self.kind == DIVFREE:
            out[0, : L.n_boundary] = self.boundary_flux_matrix(mhat[:, :1])[0]
            out[1:, L.div_slice] = np.eye(nq - 1)
            return out
        # int div v q = -int v . grad q + oint q v . n
        Dx = derivative_matrix(self.k - 1, 0, self.pc.h)
        Dy = derivative_matrix(self.k - 1, 1, self.pc.h)
        grad_hat = np.vstack([Dx @ T.T, Dy @ T.T])  # (2 n_{k-2}, nq)
        out[:, :] = -grad_hat.T @ self.moment_matrix
        out[:, : L.n_boundary] += self.boundary_flux_matrix(mhat)
        return out

    # ------------------------------------------------------------- load

    def load(self, f: Field) -> np.ndarray:
        """(Pi^0_{k-2} f, phi_i) for every local basis function."""
        q = self.pc.quad
        fv = np.asarray(f(q.points), dtype=float)
        s = self.k - 2
        mom = np.concatenate([self.pc.moments(fv[:, 0], s), self.pc.moments(fv[:, 1], s)])
        coef = np.linalg.solve(self.vector_mass, mom)
        return coef @ self.moment_matrix

    # ---------------------------------------------------- interpolation

    def interpolate(self, u: Field, quad_degree: int | None = None) -> np.ndarray:
        """DoFs of the analytic field u.

        The divergence moments use integration by parts, so only values of
        u are needed.
        """
        L = self.layout
        d = quad_degree if quad_degree is not None else 2 * self.k + 8
        rule = polygon_quadrature(self.cell, d)
        dofs = np.zeros(self.ndof)
        dofs[: L.n_boundary] = np.asarray(u(self.nodes), dtype=float).ravel()
        uq = np.asarray(u(rule.points), dtype=float)
        comp = self._comp_values(rule.points)
        dofs[L.moment_slice] = np.einsum("q,qi,qji->j", rule.weights, uq, comp) / self.area
        if self.kind == DIVFREE:
            T = self.pc.orthonormal
            mono = self.pc.monomials(self.k - 1)
            vol = np.einsum("q,qi,qai->a", rule.weights, uq, mono.grad(rule.points))
            t, w = gauss_legendre01(d // 2 + 2)
            bnd = np.zeros(n_poly(self.k - 1))
            xy = self.cell.xy
            for i in range(L.n_K):
                a, b = xy[i], xy[(i + 1) % L.n_K]
                pts = a + t[:, None] * (b - a)
                un = np.asarray(u(pts), dtype=float) @ self.cell.edge_normals[i]
                bnd += (w * self.cell.edge_lengths[i] * un) @ mono.eval(pts)
            dofs[L.div_slice] = (T @ (bnd - vol))[1:]
        return dofs

    def pressure_moments(self, p: Field, quad_degree: int | None = None) -> np.ndarray:
        """Coefficients of the L2 projection of p onto P_{k-1} in the
        orthonormal basis (the D_Q moments)."""
        d = quad_degree if quad_degree is not None else 2 * self.k + 8
        rule = polygon_quadrature(self.cell, d)
        pv = np.asarray(p(rule.points), dtype=float)
        m = self.pc.monomials(self.k - 1).eval(rule.points)
        return self.pc.orthonormal @ (m.T @ (rule.weights * pv))

    # -------------------------------------------------------- utilities

    def poly_dofs(self, coef: np.ndarray) -> np.ndarray:
        """DoF vector of the [P_k]^2 polynomial with monomial coefficients."""
        return self.dof_matrix @ coef

    def eval_poly(self, coef: np.ndarray, pts: np.ndarray) -> np.ndarray:
        m = self.pc.basis.eval(pts)
        nk = n_poly(self.k)
        return np.column_stack([m @ coef[:nk], m @ coef[nk:]])


# thin functional wrappers -------------------------------------------------


def polynomial_dofs(cell: Cell, k: int, kind: str = DIVFREE, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, kind=kind, mode=mode).dof_matrix


def consistency_matrix_B(cell: Cell, k: int, nu: float = 1.0, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, nu, mode=mode).consistency_matrix


def projector_pi_nabla(cell: Cell, k: int, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, mode=mode).proj


def local_stiffness(cell: Cell, k: int, nu: float = 1.0, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, nu, mode=mode).stiffness


def local_divergence(cell: Cell, k: int, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, mode=mode).divergence


def local_load(cell: Cell, k: int, f: Field, mode: str = ROTATIONAL) -> np.ndarray:
    return LocalElement(cell, k, mode=mode).load(f)


def classic_element(cell: Cell, k: int, nu: float = 1.0) -> LocalElement:
    return LocalElement(cell, k, nu, kind=CLASSIC)
