"""Dense finite-element stand-in for the virtual basis of one cell.

The cell is fanned from a kernel point and every fan triangle is refined
``n x n`` times. On that sub-mesh we take continuous P_k velocities and, for
the divergence-free element, continuous P_{k-1} multipliers (Taylor-Hood).
The basis function with DoF vector x is approximated by the energy minimiser
that matches the boundary trace, the interior moments and (weakly) the
divergence encoded in x. Only used for verification.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg

from .element import CLASSIC, DIVFREE, LocalElement
from .polybasis import _collapsed_triangle_rule, exponents, gauss_legendre01, gauss_lobatto, n_poly


def _lattice(k: int) -> np.ndarray:
    return np.array([(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)])


class _RefLagrange:
    """Nodal P_k basis on the reference triangle (0,0), (1,0), (0,1)."""

    def __init__(self, k: int):
        self.k = k
        self.nodes = _lattice(k)
        self.exps = exponents(k)
        V = self._mono(self.nodes)
        self.coef = np.linalg.inv(V)

    def _mono(self, pts):
        a, b = self.exps[:, 0], self.exps[:, 1]
        return pts[:, :1] ** a * pts[:, 1:] ** b

    def eval(self, pts):
        return self._mono(pts) @ self.coef

    def grad(self, pts):
        a, b = self.exps[:, 0], self.exps[:, 1]
        x, y = pts[:, :1], pts[:, 1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
            dy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
        return np.stack([dx @ self.coef, dy @ self.coef], axis=-1)


def fan_refined(cell, n: int) -> np.ndarray:
    """Triangles (ntri, 3, 2) of the refined fan sub-triangulation."""
    c = cell.star_center
    xy = cell.xy
    tris = []
    for i in range(len(xy)):
        A, B, C = c, xy[i], xy[(i + 1) % len(xy)]
        P = lambda a, b: A + a / n * (B - A) + b / n * (C - A)  # noqa: E731
        for j in range(n):
            for i2 in range(n - j):
                tris.append([P(i2, j), P(i2 + 1, j), P(i2, j + 1)])
                if i2 + j < n - 1:
                    tris.append([P(i2 + 1, j), P(i2 + 1, j + 1), P(i2, j + 1)])
    return np.array(tris)


class _FESpace:
    def __init__(self, tris: np.ndarray, k: int, scale: float):
        self.ref = _RefLagrange(k)
        loc = self.ref.nodes
        keys: dict[tuple, int] = {}
        conn = np.empty((len(tris), len(loc)), dtype=np.int64)
        pts = []
        for t, (A, B, C) in enumerate(tris):
            X = A + loc[:, :1] * (B - A) + loc[:, 1:] * (C - A)
            for a, x in enumerate(X):
                key = tuple(np.round(x / scale, 9))
                if key not in keys:
                    keys[key] = len(pts)
                    pts.append(x)
                conn[t, a] = keys[key]
        self.conn = conn
        self.points = np.array(pts)
        self.n = len(pts)


class FEOracle:
    """Approximate virtual basis of ``el`` on an ``n``-times refined fan."""

    def __init__(self, el: LocalElement, n: int = 4):
        self.el = el
        self.k = el.k
        self.n = n
        cell = el.cell
        self.tris = fan_refined(cell, n)
        h = cell.diameter
        self.V = _FESpace(self.tris, el.k, h)
        self.Q = _FESpace(self.tris, el.k - 1, h) if el.kind == DIVFREE else None
        ref_pts, ref_w = _collapsed_triangle_rule(2 * el.k + 2)
        self._ref_pts, self._ref_w = ref_pts, ref_w
        self._assemble()

    # ---------------------------------------------------------- assembly

    def _assemble(self):
        el, k = self.el, self.k
        N = self.V.n
        phi = self.V.ref.eval(self._ref_pts)
        dphi = self.V.ref.grad(self._ref_pts)
        S = np.zeros((N, N))
        nm = el.layout.n_moment
        C = np.zeros((nm, 2 * N))
        T = el.pc.orthonormal
        mono = el.pc.monomials(k - 1)
        nq_mono = T.shape[0]
        E4 = np.zeros((nq_mono, 2 * N))
        if self.Q is not None:
            Np = self.Q.n
            psi = self.Q.ref.eval(self._ref_pts)
            Bd = np.zeros((Np, 2 * N))
            mvec = np.zeros(Np)
        quad_pts, quad_w, quad_tri = [], [], []
        for t, (A, B, Cc) in enumerate(self.tris):
            J = np.column_stack([B - A, Cc - A])
            det = np.linalg.det(J)
            Jit = np.linalg.inv(J).T
            g = dphi @ Jit.T  # (nq, nloc, 2)
            w = self._ref_w * det
            X = A + self._ref_pts @ J.T
            ids = self.V.conn[t]
            S[np.ix_(ids, ids)] += np.einsum("q,qai,qbi->ab", w, g, g)
            comp = el._comp_values(X)  # (nq, nm, 2)
            for c in range(2):
                C[:, c * N + ids] += np.einsum("q,qa,qm->ma", w, phi, comp[:, :, c]) / el.area
            mv = mono.eval(X)
            for c in range(2):
                E4[:, c * N + ids] += np.einsum("q,qa,qm->ma", w, g[:, :, c], mv)
            if self.Q is not None:
                qi = self.Q.conn[t]
                for c in range(2):
                    Bd[np.ix_(qi, c * N + ids)] += np.einsum("q,qi,qa->ia", w, psi, g[:, :, c])
                mvec[qi] += w @ psi
            quad_pts.append(X)
            quad_w.append(w)
            quad_tri.append(np.full(len(w), t))
        self.S = S
        self.C = C
        self.E4 = (T @ E4)[1:]
        self.quad_points = np.vstack(quad_pts)
        self.quad_weights = np.concatenate(quad_w)
        if self.Q is not None:
            self.Bd = Bd
            self.qmass = mvec

    @cached_property
    def boundary_index(self):
        """FE nodes on the cell boundary with their edge id and parameter."""
        xy = self.el.cell.xy
        nK = len(xy)
        P = self.V.points
        scale = self.el.cell.diameter
        ids, edge, par = [], [], []
        for j, x in enumerate(P):
            for i in range(nK):
                a, b = xy[i], xy[(i + 1) % nK]
                d = b - a
                s = np.dot(x - a, d) / np.dot(d, d)
                off = abs(d[0] * (x - a)[1] - d[1] * (x - a)[0]) / np.linalg.norm(d)
                if off < 1e-10 * scale and -1e-12 <= s <= 1 + 1e-12:
                    ids.append(j)
                    edge.append(i)
                    par.append(s)
                    break
        return np.array(ids), np.array(edge), np.array(par)

    def _trace_matrix(self) -> np.ndarray:
        """Maps the boundary DoFs to values at the FE boundary nodes, using
        the degree-k edge interpolant through the Gauss-Lobatto nodes."""
        el, k = self.el, self.k
        nK = el.layout.n_K
        t = gauss_lobatto(k + 1)[0]
        ids, edge, par = self.boundary_index
        M = np.zeros((2 * len(ids), el.layout.n_boundary))
        V = np.vander(t, k + 1, increasing=True)
        Vinv = np.linalg.inv(V)
        for r, (i, s) in enumerate(zip(edge, par)):
            nodes = [i] + [nK + i * (k - 1) + j for j in range(k - 1)] + [(i + 1) % nK]
            lag = np.vander([s], k + 1, increasing=True) @ Vinv
            for c in range(2):
                M[2 * r + c, [2 * a + c for a in nodes]] = lag[0]
        return M

    def _divergence_target(self, X: np.ndarray) -> np.ndarray:
        """Orthonormal coefficients of div v: the mean from the boundary flux
        (edge Gauss rule on the edge interpolant) and the rest from x."""
        el, k = self.el, self.k
        nK = el.layout.n_K
        xy = el.cell.xy
        tl = gauss_lobatto(k + 1)[0]
        Vinv = np.linalg.inv(np.vander(tl, k + 1, increasing=True))
        tg, wg = gauss_legendre01(k + 1)
        lag = np.vander(tg, k + 1, increasing=True) @ Vinv
        flux = np.zeros(X.shape[1])
        for i in range(nK):
            nodes = [i] + [nK + i * (k - 1) + j for j in range(k - 1)] + [(i + 1) % nK]
            n = el.cell.edge_normals[i]
            L = np.linalg.norm(xy[(i + 1) % nK] - xy[i])
            un = n[0] * X[[2 * a for a in nodes]] + n[1] * X[[2 * a + 1 for a in nodes]]
            flux += L * (wg @ (lag @ un))
        d = np.zeros((1 + el.layout.n_div, X.shape[1]))
        d[0] = flux / np.sqrt(el.area)
        d[1:] = X[el.layout.div_slice]
        return d

    # -------------------------------------------------------------- solve

    @cached_property
    def basis(self) -> np.ndarray:
        """FE coefficients (x components then y components) of every local
        basis function, shape (2N, ndof)."""
        el = self.el
        N = self.V.n
        X = np.eye(el.ndof)
        bidx, _, _ = self.boundary_index
        bcols = np.concatenate([bidx, N + bidx])
        tr = self._trace_matrix()
        vB = np.zeros((2 * len(bidx), el.ndof))
        vB[:, : el.layout.n_boundary] = tr
        vB = np.vstack([vB[0::2], vB[1::2]])  # x rows, then y rows
        free = np.setdiff1d(np.arange(2 * N), bcols)
        A = scipy.linalg.block_diag(self.S, self.S)
        rows = [self.C]
        rhs = [X[el.layout.moment_slice]]
        if self.Q is not None:
            d = self._divergence_target(X)
            mono = el.pc.monomials(self.k - 1)
            qint = np.zeros((self.Q.n, el.pc.orthonormal.shape[0]))
            # int psi_i mhat_a with the FE quadrature
            psi = self.Q.ref.eval(self._ref_pts)
            nq = len(self._ref_w)
            mh = mono.eval(self.quad_points) @ el.pc.orthonormal.T
            for t in range(len(self.tris)):
                sl = slice(t * nq, (t + 1) * nq)
                w = self.quad_weights[sl]
                np.add.at(qint, self.Q.conn[t], np.einsum("q,qi,qa->ia", w, psi, mh[sl]))
            rows.append(self.Bd)
            rhs.append(qint @ d)
        Cm = np.vstack(rows)
        R = np.vstack(rhs)
        nf, nc = len(free), Cm.shape[0]
        extra = 1 if self.Q is not None else 0
        Kmat = np.zeros((nf + nc + extra, nf + nc + extra))
        Kmat[:nf, :nf] = A[np.ix_(free, free)]
        Kmat[:nf, nf : nf + nc] = Cm[:, free].T
        Kmat[nf : nf + nc, :nf] = Cm[:, free]
        if extra:
            nm = self.C.shape[0]
            Kmat[nf + nm : nf + nc, -1] = self.qmass
            Kmat[-1, nf + nm : nf + nc] = self.qmass
        b = np.zeros((nf + nc + extra, el.ndof))
        b[:nf] = -A[np.ix_(free, bcols)] @ vB
        b[nf : nf + nc] = R - Cm[:, bcols] @ vB
        sol = scipy.linalg.solve(Kmat, b)
        out = np.zeros((2 * N, el.ndof))
        out[bcols] = vB
        out[free] = sol[:nf]
        return out

    @cached_property
    def stiffness(self) -> np.ndarray:
        """a^K of the approximate basis functions."""
        N = self.V.n
        U = self.basis
        return self.el.nu * (U[:N].T @ self.S @ U[:N] + U[N:].T @ self.S @ U[N:])

    def poly_energy(self, coef: np.ndarray) -> np.ndarray:
        """a^K(q, phi_i) for the [P_k]^2 polynomial q with monomial coefficients."""
        el = self.el
        N = self.V.n
        nk = n_poly(self.k)
        dphi = self.V.ref.grad(self._ref_pts)
        nq = len(self._ref_w)
        gq = el.pc.basis.grad(self.quad_points)  # (nQ, nk, 2)
        out = np.zeros(2 * N)
        for t, (A, B, Cc) in enumerate(self.tris):
            J = np.column_stack([B - A, Cc - A])
            g = dphi @ np.linalg.inv(J)
            sl = slice(t * nq, (t + 1) * nq)
            w = self.quad_weights[sl]
            ids = self.V.conn[t]
            for c in range(2):
                gradq = np.einsum("qbi,b->qi", gq[sl], coef[c * nk : (c + 1) * nk])
                out[c * N + ids] += np.einsum("q,qi,qai->a", w, gradq, g)
        return el.nu * (out @ self.basis)

    # ------------------------------------------------------ DoF extraction

    def evaluate(self, U: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Values of FE fields (columns of U) at pts, shape (npts, 2, ncols)."""
        N = self.V.n
        out = np.full((len(pts), 2, U.shape[1]), np.nan)
        for p_i, x in enumerate(pts):
            for t, (A, B, C) in enumerate(self.tris):
                J = np.column_stack([B - A, C - A])
                lam = np.linalg.solve(J, x - A)
                if lam.min() >= -1e-10 and lam.sum() <= 1 + 1e-10:
                    phi = self.V.ref.eval(lam[None])[0]
                    ids = self.V.conn[t]
                    out[p_i, 0] = phi @ U[ids]
                    out[p_i, 1] = phi @ U[N + ids]
                    break
        return out

    def extract_dofs(self, U: np.ndarray | None = None) -> np.ndarray:
        """Apply the element's DoF functionals to FE fields."""
        el = self.el
        U = self.basis if U is None else U
        L = el.layout
        out = np.zeros((el.ndof, U.shape[1]))
        vals = self.evaluate(U, el.nodes)
        out[: L.n_boundary] = vals.reshape(-1, U.shape[1])
        out[L.moment_slice] = self.C @ U
        if el.kind == DIVFREE:
            out[L.div_slice] = self.E4 @ U
        return out


def spectral_band(el: LocalElement, n: int = 4) -> tuple[float, float]:
    """Extreme generalised eigenvalues of a_h^K against the oracle stiffness,
    away from the constant fields."""
    orc = FEOracle(el, n)
    Ah = el.stiffness
    Af = orc.stiffness
    nk = el.dof_matrix.shape[1] // 2
    const = el.dof_matrix[:, [0, nk]]
    Z = scipy.linalg.null_space(const.T)
    ev = scipy.linalg.eigh(Z.T @ Ah @ Z, Z.T @ Af @ Z, eigvals_only=True)
    return float(ev.min()), float(ev.max())


__all__ = ["FEOracle", "fan_refined", "spectral_band", "CLASSIC", "DIVFREE"]
