"""Per-cell polynomial algebra.

Polynomials on a cell K are stored as coefficient vectors in the scaled
monomial basis ``m_a(x) = ((x - x_K)/h_K)**a1 * ((y - y_K)/h_K)**a2``,
ordered by total degree and, inside a degree, by decreasing ``a1``.
Vector polynomials stack the x-component coefficients on top of the
y-component coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import legendre

from .mesh import Cell


def n_poly(s: int) -> int:
    return 0 if s < 0 else (s + 1) * (s + 2) // 2


@lru_cache(maxsize=None)
def exponents(s: int) -> np.ndarray:
    out = [(d - j, j) for d in range(s + 1) for j in range(d + 1)]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


@lru_cache(maxsize=None)
def _index(s: int) -> dict[tuple[int, int], int]:
    return {tuple(a): i for i, a in enumerate(exponents(s).tolist())}


def shift_matrix(s_from: int, s_to: int, da: tuple[int, int]) -> np.ndarray:
    """Coefficient map of multiplication by ``xh**da[0] * yh**da[1]`` (negative
    entries of ``da`` are not allowed)."""
    idx = _index(s_to)
    M = np.zeros((n_poly(s_to), n_poly(s_from)))
    for j, (a1, a2) in enumerate(exponents(s_from).tolist()):
        t = (a1 + da[0], a2 + da[1])
        if t in idx:
            M[idx[t], j] = 1.0
    return M


def derivative_matrix(s: int, axis: int, h: float) -> np.ndarray:
    """Coefficient map P_s -> P_{s-1} of d/dx (axis 0) or d/dy (axis 1)."""
    idx = _index(s - 1) if s >= 1 else {}
    D = np.zeros((n_poly(s - 1), n_poly(s)))
    for j, a in enumerate(exponents(s).tolist()):
        if a[axis] == 0:
            continue
        t = list(a)
        t[axis] -= 1
        D[idx[tuple(t)], j] = a[axis] / h
    return D


def embed_matrix(s_from: int, s_to: int) -> np.ndarray:
    return shift_matrix(s_from, s_to, (0, 0))


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def _collapsed_triangle_rule(d: int) -> tuple[np.ndarray, np.ndarray]:
    # Duffy map of a Gauss-Legendre product rule onto the reference triangle
    n = d // 2 + 2
    t, w = legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    S, T = np.meshgrid(t, t, indexing="ij")
    WS, WT = np.meshgrid(w, w, indexing="ij")
    xi = S.ravel()
    eta = (T * (1.0 - S)).ravel()
    wt = (WS * WT * (1.0 - S)).ravel()
    return np.column_stack([xi, eta]), wt


def triangle_quadrature(tri: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    ref, w = _collapsed_triangle_rule(d)
    a, b, c = tri
    jac = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    pts = a + ref[:, :1] * (b - a) + ref[:, 1:] * (c - a)
    return pts, w * jac


def polygon_quadrature(cell: Cell, d: int) -> QuadratureRule:
    """Fan sub-triangulation from a kernel point, exact for total degree ``d``."""
    c = cell.star_center
    pts, wts = [], []
    xy = cell.xy
    for i in range(len(xy)):
        p, w = triangle_quadrature(np.array([c, xy[i], xy[(i + 1) % len(xy)]]), d)
        pts.append(p)
        wts.append(w)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), d)


@lru_cache(maxsize=None)
def gauss_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Lobatto rule on [0, 1] (exact for degree 2n - 3)."""
    if n < 2:
        raise ValueError("Gauss-Lobatto needs at least 2 points")
    pn1 = legendre.Legendre.basis(n - 1)
    inner = np.sort(pn1.deriv().roots().real) if n > 2 else np.array([])
    x = np.concatenate([[-1.0], inner, [1.0]])
    w = 2.0 / (n * (n - 1) * pn1(x) ** 2)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ------------------------------------------------------------------- bases


@dataclass(frozen=True, eq=False)
class ScaledMonomials:
    center: np.ndarray
    h: float
    degree: int

    @property
    def size(self) -> int:
        return n_poly(self.degree)

    def scaled(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(pts)
        return (pts[:, 0] - self.center[0]) / self.h, (pts[:, 1] - self.center[1]) / self.h

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Values, shape (npts, size)."""
        xh, yh = self.scaled(pts)
        e = exponents(self.degree)
        return xh[:, None] ** e[:, 0] * yh[:, None] ** e[:, 1]

    def grad(self, pts: np.ndarray) -> np.ndarray:
        """Gradients, shape (npts, size, 2)."""
        xh, yh = self.scaled(pts)
        e = exponents(self.degree)
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(e[:, 0] > 0, e[:, 0] * xh[:, None] ** np.maximum(e[:, 0] - 1, 0), 0.0)
            gy = np.where(e[:, 1] > 0, e[:, 1] * yh[:, None] ** np.maximum(e[:, 1] - 1, 0), 0.0)
        gx = gx * yh[:, None] ** e[:, 1]
        gy = gy * xh[:, None] ** e[:, 0]
        return np.stack([gx, gy], axis=-1) / self.h


class PolyCell:
    """Polynomial context of one cell for velocity degree ``k``.

    Holds the quadrature rule, the scaled monomials up to degree ``k`` and
    the mass matrices derived from them.
    """

    def __init__(self, cell: Cell, k: int, quad_degree: int | None = None):
        if k < 1:
            raise ValueError("degree must be at least 1")
        self.cell = cell
        self.k = k
        self.area = cell.area
        self.center = cell.centroid
        self.h = cell.diameter
        self.basis = ScaledMonomials(self.center, self.h, k)
        self.quad = polygon_quadrature(cell, quad_degree if quad_degree is not None else 2 * k + 2)
        self._mq = self.basis.eval(self.quad.points)

    def monomials(self, s: int) -> ScaledMonomials:
        return ScaledMonomials(self.center, self.h, s)

    def values(self, s: int) -> np.ndarray:
        """Monomial values at the cell quadrature points, degree <= s <= k."""
        return self._mq[:, : n_poly(s)]

    def mass(self, s: int) -> np.ndarray:
        v = self.values(s)
        return (v * self.quad.weights[:, None]).T @ v

    def integral(self, s: int) -> np.ndarray:
        """Integrals of every monomial of degree <= s."""
        return self.quad.weights @ self.values(s)

    def moments(self, f_vals: np.ndarray, s: int) -> np.ndarray:
        """``int_K f m_a`` for values of f at the quadrature points (trailing
        axes of ``f_vals`` are kept)."""
        return np.tensordot(self.values(s) * self.quad.weights[:, None], f_vals, axes=(0, 0))

    def l2_project(self, f, s: int) -> np.ndarray:
        """Monomial coefficients of the L2(K) projection of callable ``f``
        onto P_s (vector-valued f gives one column per component)."""
        vals = np.asarray(f(self.quad.points), dtype=float)
        return np.linalg.solve(self.mass(s), self.moments(vals, s))

    @cached_property
    def orthonormal(self) -> np.ndarray:
        """Matrix ``T`` with ``mhat = T @ m`` an L2(K)-orthonormal basis of
        P_{k-1}; the first member is the constant ``1/sqrt|K|``."""
        L = np.linalg.cholesky(self.mass(self.k - 1))
        return np.linalg.inv(L)


# --------------------------------------------------------- gradient split


ORTHOGONAL = "orthogonal"
ROTATIONAL = "rotational"


class GradSplit:
    """Decomposition ``[P_{k-2}]^2 = grad P_{k-1} (+) complement``.

    ``grad_cols`` holds the [P_{k-2}]^2 coefficients of ``grad m_a`` for the
    non-constant monomials of degree <= k-1, ``comp_cols`` the complement
    basis. In rotational mode the complement is ``xperp * P_{k-3}`` with
    ``xperp = (yh, -xh)``; in orthogonal mode it is the L2-orthogonal
    complement, scaled so that ``(1/|K|) int g_i . g_j = delta_ij``.
    """

    def __init__(self, pc: PolyCell, mode: str = ROTATIONAL):
        if pc.k < 2:
            raise ValueError("the gradient split needs k >= 2")
        if mode not in (ORTHOGONAL, ROTATIONAL):
            raise ValueError(f"unknown complement mode {mode!r}")
        self.pc = pc
        self.mode = mode
        k = pc.k
        s = k - 2
        Dx = derivative_matrix(k - 1, 0, pc.h)
        Dy = derivative_matrix(k - 1, 1, pc.h)
        self.grad_cols = np.vstack([Dx, Dy])[:, 1:]
        if k >= 3:
            P = n_poly(k - 3)
            cand = np.vstack([shift_matrix(k - 3, s, (0, 1)), -shift_matrix(k - 3, s, (1, 0))])
        else:
            P = 0
            cand = np.zeros((2 * n_poly(s), 0))
        if mode == ORTHOGONAL and P:
            Hv = self.vector_mass
            G = self.grad_cols
            cand = cand - G @ np.linalg.solve(G.T @ Hv @ G, G.T @ Hv @ cand)
            gram = cand.T @ Hv @ cand / pc.area
            L = np.linalg.cholesky(gram)
            cand = cand @ np.linalg.inv(L).T
        self.comp_cols = cand
        self._full = np.hstack([self.grad_cols, self.comp_cols])

    @property
    def n_grad(self) -> int:
        return self.grad_cols.shape[1]

    @property
    def n_comp(self) -> int:
        return self.comp_cols.shape[1]

    @cached_property
    def vector_mass(self) -> np.ndarray:
        H = self.pc.mass(self.pc.k - 2)
        Z = np.zeros_like(H)
        return np.block([[H, Z], [Z, H]])

    def decompose(self, q: np.ndarray, zero_mean: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Split vector polynomial(s) ``q`` (columns) as ``grad r + g``.

        Returns the P_{k-1} monomial coefficients of ``r`` and the complement
        coefficients of ``g``. With ``zero_mean`` the constant of ``r`` is
        fixed so that ``int_K r = 0``; otherwise ``r`` has no constant term.
        """
        q = np.asarray(q, dtype=float)
        one = q.ndim == 1
        q2 = q[:, None] if one else q
        c = np.linalg.solve(self._full, q2)
        r = np.zeros((n_poly(self.pc.k - 1), q2.shape[1]))
        r[1:] = c[: self.n_grad]
        if zero_mean:
            r[0] = -(self.pc.integral(self.pc.k - 1) @ r) / self.pc.area
        g = c[self.n_grad :]
        return (r[:, 0], g[:, 0]) if one else (r, g)

    def comp_values(self, pts: np.ndarray) -> np.ndarray:
        """Complement basis values, shape (npts, n_comp, 2)."""
        m = self.pc.monomials(self.pc.k - 2).eval(pts)
        n = n_poly(self.pc.k - 2)
        return np.stack([m @ self.comp_cols[:n], m @ self.comp_cols[n:]], axis=-1)


def grad_split(pc: PolyCell, mode: str = ROTATIONAL) -> GradSplit:
    return GradSplit(pc, mode)
