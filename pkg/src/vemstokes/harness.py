"""Manufactured solutions and the convergence / equivalence / DoF experiments."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import numpy.polynomial.polynomial as npoly

from .element import CLASSIC, DIVFREE, KINDS
from .mesh import (
    PolyMesh,
    generate_quad_grid,
    generate_triangle_grid,
    generate_voronoi,
    nominal_h_to_seeds,
    read_mesh,
)
from .polybasis import ROTATIONAL
from .system import (
    FULL,
    REDUCED,
    REDUCED_POST,
    SCHEMES,
    ConfigurationError,
    SolverError,
    assemble,
    divergence_report,
    dof_saving,
    equivalence_errors,
    solve,
    solve_scheme,
)

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

CSV_HEADER = (
    "family", "h", "k", "scheme", "ndof", "delta_u", "delta_p",
    "eps_u", "eps_p", "maxdiv", "slope_u", "slope_p",
)


# ------------------------------------------------------------- test cases


@dataclass(frozen=True)
class TestCase:
    """Exact solution of -nu lap u - grad p = f, div u = 0 with the trace of
    u as Dirichlet data."""

    __test__ = False  # not a pytest class

    name: str
    u: Field
    p: Field
    f: Field
    nu: float = 1.0


def make_test1(nu: float = 1.0) -> TestCase:
    c, s = np.cos, np.sin

    def u(X):
        x, y = X[:, 0], X[:, 1]
        return np.column_stack([-0.5 * c(x) ** 2 * c(y) * s(y), 0.5 * c(y) ** 2 * c(x) * s(x)])

    def p(X):
        return s(X[:, 0]) - s(X[:, 1])

    def f(X):
        x, y = X[:, 0], X[:, 1]
        return np.column_stack([
            -0.5 * nu * s(2 * y) * (1 + 2 * c(2 * x)) - c(x),
            0.5 * nu * s(2 * x) * (1 + 2 * c(2 * y)) + c(y),
        ])

    return TestCase("test1", u, p, f, nu)


def make_test2(nu: float = 1.0) -> TestCase:
    def u(X):
        x, y = X[:, 0], X[:, 1]
        return np.column_stack([y**4 + 1, x**4 + 2])

    def p(X):
        return X[:, 0] ** 3 - X[:, 1] ** 3

    def f(X):
        x, y = X[:, 0], X[:, 1]
        return np.column_stack([-12 * nu * y**2 - 3 * x**2, -12 * nu * x**2 + 3 * y**2])

    return TestCase("test2", u, p, f, nu)


def _triangular_coeffs(deg: int, rng: np.random.Generator) -> np.ndarray:
    c = rng.uniform(-1.0, 1.0, (deg + 1, deg + 1))
    i, j = np.indices(c.shape)
    c[i + j > deg] = 0.0
    return c


def polynomial_case(k: int, seed: int = 0, nu: float = 1.0) -> TestCase:
    """Random divergence-free u = curl(psi), psi in P_{k+1}, and p in P_{k-1}."""
    rng = np.random.default_rng(seed)
    psi = _triangular_coeffs(k + 1, rng)
    pc = _triangular_coeffs(k - 1, rng)
    u1 = npoly.polyder(psi, axis=1)
    u2 = -npoly.polyder(psi, axis=0)

    def lap(c):
        out = np.zeros_like(c)
        dxx = npoly.polyder(c, 2, axis=0)
        dyy = npoly.polyder(c, 2, axis=1)
        out[: dxx.shape[0], : dxx.shape[1]] += dxx
        out[: dyy.shape[0], : dyy.shape[1]] += dyy
        return out

    f1 = -nu * lap(u1)
    f2 = -nu * lap(u2)
    px = npoly.polyder(pc, axis=0)
    py = npoly.polyder(pc, axis=1)

    def ev(c, X):
        return npoly.polyval2d(X[:, 0], X[:, 1], c)

    def u(X):
        return np.column_stack([ev(u1, X), ev(u2, X)])

    def p(X):
        return ev(pc, X)

    def f(X):
        return np.column_stack([ev(f1, X) - ev(px, X), ev(f2, X) - ev(py, X)])

    return TestCase(f"poly-k{k}-s{seed}", u, p, f, nu)


CASES: dict[str, Callable[..., TestCase]] = {"1": make_test1, "2": make_test2}


def get_case(name: str, nu: float = 1.0) -> TestCase:
    try:
        return CASES[str(name)](nu)
    except KeyError:
        raise ConfigurationError(f"unknown test {name!r}; choose from {sorted(CASES)}") from None


# ---------------------------------------------------------------- config

FAMILIES = ("V", "T", "Q")


@dataclass(frozen=True)
class ExperimentConfig:
    test: str = "1"
    family: str = "Q"
    hs: tuple[float, ...] = (0.25, 0.125, 0.0625, 0.03125)
    ks: tuple[int, ...] = (2,)
    element: str = DIVFREE
    scheme: str = REDUCED_POST
    seed: int = 0
    out: str | None = None
    nu: float = 1.0
    mode: str = ROTATIONAL
    triangle_pattern: str = "checker"
    lloyd_iters: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hs", tuple(float(h) for h in self.hs))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        self.validate()

    def validate(self) -> None:
        if not self.ks or min(self.ks) < 2:
            raise ConfigurationError("polynomial degree k must be >= 2")
        if self.family not in FAMILIES and not self.family.startswith("file:"):
            raise ConfigurationError(f"unknown mesh family {self.family!r}")
        if self.element not in KINDS:
            raise ConfigurationError(f"unknown element {self.element!r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.element == CLASSIC and self.scheme != FULL:
            raise ConfigurationError("the classic element only supports the full scheme")
        if any(not (0 < h <= 1) for h in self.hs):
            raise ConfigurationError("mesh sizes must lie in (0, 1]")
        if str(self.test) not in CASES:
            raise ConfigurationError(f"unknown test {self.test!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hs"] = list(self.hs)
        d["ks"] = list(self.ks)
        return d


def build_mesh(family: str, h: float, seed: int = 0, triangle_pattern: str = "checker",
               lloyd_iters: int = 100) -> PolyMesh:
    if family.startswith("file:"):
        return read_mesh(family[5:])
    n = int(round(1.0 / h))
    if family == "Q":
        return generate_quad_grid(n)
    if family == "T":
        return generate_triangle_grid(n, triangle_pattern)
    if family == "V":
        return generate_voronoi(nominal_h_to_seeds(h), lloyd_iters=lloyd_iters, rng_seed=seed)
    raise ConfigurationError(f"unknown mesh family {family!r}")


# ---------------------------------------------------------------- errors


@dataclass
class RunResult:
    family: str
    h: float
    k: int
    scheme: str
    element: str
    ndof: int
    delta_u: float = float("nan")
    delta_p: float = float("nan")
    eps_u: float = float("nan")
    eps_p: float = float("nan")
    maxdiv: float = float("nan")
    residual: float = float("nan")
    n_cells: int = 0


@dataclass
class ErrorReport:
    rows: list[RunResult] = field(default_factory=list)
    slopes: dict[tuple, tuple[float, float]] = field(default_factory=dict)

    def group(self, family: str, k: int, scheme: str, element: str = DIVFREE) -> list[RunResult]:
        return [r for r in self.rows
                if (r.family, r.k, r.scheme, r.element) == (family, k, scheme, element)]


def interpolate(system, case: TestCase) -> tuple[np.ndarray, np.ndarray]:
    """DoF interpolants of the exact velocity and (zero-mean) pressure."""
    dm = system.dofmap
    uI = np.zeros(dm.n_velocity)
    pI = np.zeros(dm.n_pressure)
    for K, el in enumerate(system.elements):
        uI[dm.cell_dofs[K]] = el.interpolate(case.u)
        pI[dm.cell_pressure(K)] = el.pressure_moments(case.p)
    c = system.mean_row
    pI -= (c @ pI) / (c @ c) * c
    return uI, pI


def relative_errors(sol, uI: np.ndarray, pI: np.ndarray) -> tuple[float, float]:
    e = uI - sol.u
    A = sol.system.A
    du = np.sqrt(max(e @ (A @ e), 0.0) / max(uI @ (A @ uI), 1e-300))
    if sol.scheme == REDUCED:
        # only cell means are computed; compare against the mean interpolant
        keep = sol.dofmap.reduced_pressure_mask()
        pI = np.where(keep, pI, 0.0)
    nrm = np.linalg.norm(pI)
    dp = np.linalg.norm(pI - sol.p) / (nrm if nrm > 0 else 1.0)
    return float(du), float(dp)


def fit_slope(hs, errs) -> float:
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, float)
    errs = np.asarray(errs, float)
    ok = errs > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs[ok]), np.log(errs[ok]), 1)[0])


def run_single(mesh: PolyMesh, k: int, case: TestCase, element: str = DIVFREE,
               scheme: str = REDUCED_POST, mode: str = ROTATIONAL, family: str = "",
               h: float | None = None) -> tuple[RunResult, object]:
    system = assemble(mesh, k, case.f, nu=case.nu, kind=element, dirichlet=case.u, mode=mode)
    try:
        sol = solve_scheme(system, scheme)
    except SolverError as err:
        raise SolverError(f"{family or 'mesh'} h={h} k={k} {element}/{scheme}: {err}") from err
    uI, pI = interpolate(system, case)
    du, dp = relative_errors(sol, uI, pI)
    un = sol.energy_norm()
    maxdiv = float(divergence_report(sol).max() / un) if un > 0 else 0.0
    row = RunResult(family, float(h if h is not None else mesh.h), k, scheme, element, sol.ndof,
                    du, dp, maxdiv=maxdiv, residual=sol.residual, n_cells=mesh.n_cells)
    return row, sol


def _mesh_h(cfg: ExperimentConfig, h: float, mesh: PolyMesh) -> float:
    return mesh.h if cfg.family.startswith("file:") else h


def run_convergence(cfg: ExperimentConfig) -> ErrorReport:
    case = get_case(cfg.test, cfg.nu)
    report = ErrorReport()
    meshes = {h: build_mesh(cfg.family, h, cfg.seed, cfg.triangle_pattern, cfg.lloyd_iters)
              for h in cfg.hs}
    for k in cfg.ks:
        for h in cfg.hs:
            mesh = meshes[h]
            row, _ = run_single(mesh, k, case, cfg.element, cfg.scheme, cfg.mode,
                                cfg.family, _mesh_h(cfg, h, mesh))
            log.info("%s h=%.5g k=%d %s/%s ndof=%d delta_u=%.3e delta_p=%.3e",
                     cfg.family, row.h, k, cfg.element, cfg.scheme, row.ndof,
                     row.delta_u, row.delta_p)
            report.rows.append(row)
        grp = report.group(cfg.family, k, cfg.scheme, cfg.element)
        hs = [r.h for r in grp]
        report.slopes[(cfg.family, k, cfg.scheme, cfg.element)] = (
            fit_slope(hs, [r.delta_u for r in grp]),
            fit_slope(hs, [r.delta_p for r in grp]),
        )
    return report


def run_equivalence(cfg: ExperimentConfig) -> ErrorReport:
    """Full and reduced schemes on the same meshes; fills eps_u and eps_p."""
    case = get_case(cfg.test, cfg.nu)
    report = ErrorReport()
    for h in cfg.hs:
        mesh = build_mesh(cfg.family, h, cfg.seed, cfg.triangle_pattern, cfg.lloyd_iters)
        for k in cfg.ks:
            system = assemble(mesh, k, case.f, nu=case.nu, dirichlet=case.u, mode=cfg.mode)
            full = solve(system)
            red = solve_scheme(system, REDUCED)
            eu, ep = equivalence_errors(full, red)
            uI, pI = interpolate(system, case)
            du, dp = relative_errors(red, uI, pI)
            un = red.energy_norm()
            row = RunResult(cfg.family, _mesh_h(cfg, h, mesh), k, REDUCED, DIVFREE, red.ndof,
                            du, dp, eu, ep,
                            float(divergence_report(red).max() / un) if un > 0 else 0.0,
                            red.residual, mesh.n_cells)
            log.info("%s h=%.5g k=%d eps_u=%.3e eps_p=%.3e", cfg.family, row.h, k, eu, ep)
            report.rows.append(row)
    return report


def compare_with_classic(new: ErrorReport, classic: ErrorReport) -> list[str]:
    """Soft check: the new scheme should not have a larger velocity error than
    the classic one at equal h. Returns (and logs) the violations."""
    ref = {(r.family, r.h, r.k): r.delta_u for r in classic.rows}
    msgs = []
    for r in new.rows:
        c = ref.get((r.family, r.h, r.k))
        if c is not None and r.delta_u > c:
            msgs.append(f"{r.family} h={r.h:g} k={r.k}: new delta_u {r.delta_u:.3e} > classic {c:.3e}")
    for m in msgs:
        log.warning("comparison: %s", m)
    return msgs


# ---------------------------------------------------------------- DoF table


@dataclass(frozen=True)
class SavingRow:
    family: str
    h: float
    k: int
    n_P: int
    n_V: int
    n_E: int
    saving_no_minus_one: float
    saving_minus_one: float


def dof_saving_table(families=FAMILIES, hs_by_family: dict | None = None, ks=(2, 3, 4, 5),
                     seed: int = 0, triangle_pattern: str = "checker") -> list[SavingRow]:
    """Share of DoFs removed by the reduced scheme, under both counting
    conventions for the zero-mean pressure constraint."""
    default = {"V": (1 / 4, 1 / 8, 1 / 16, 1 / 32), "T": (1 / 2, 1 / 4, 1 / 8, 1 / 16),
               "Q": (1 / 4, 1 / 8, 1 / 16, 1 / 32)}
    hs_by_family = hs_by_family or default
    out = []
    for fam in families:
        for h in hs_by_family.get(fam, default.get(fam, ())):
            c = build_mesh(fam, h, seed, triangle_pattern).counts()
            for k in ks:
                out.append(SavingRow(fam, h, k, c["n_P"], c["n_V"], c["n_E"],
                                     dof_saving(c["n_P"], c["n_V"], c["n_E"], k, False),
                                     dof_saving(c["n_P"], c["n_V"], c["n_E"], k, True)))
    return out


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if np.isnan(x) else f"{x:.10e}"
    return str(x)


def emit_outputs(report: ErrorReport, out_dir: str | Path, prefix: str = "results") -> list[Path]:
    """Write the results CSV and two-column (N_dof, error) plot files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sorted(report.rows, key=lambda r: (r.family, r.element, r.scheme, r.k, r.ndof))
    paths = []
    csv_path = out / f"{prefix}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            su, sp_ = report.slopes.get((r.family, r.k, r.scheme, r.element), (float("nan"),) * 2)
            scheme = r.scheme if r.element == DIVFREE else f"{r.element}-{r.scheme}"
            w.writerow([_fmt(v) for v in (r.family, r.h, r.k, scheme, r.ndof, r.delta_u,
                                          r.delta_p, r.eps_u, r.eps_p, r.maxdiv, su, sp_)])
    paths.append(csv_path)
    groups = sorted({(r.family, r.element, r.scheme, r.k) for r in rows})
    for fam, el, sch, k in groups:
        grp = [r for r in rows if (r.family, r.element, r.scheme, r.k) == (fam, el, sch, k)]
        tag = fam.replace(":", "_").replace("/", "_")
        for qty in ("delta_u", "delta_p"):
            vals = [(r.ndof, getattr(r, qty)) for r in grp if not np.isnan(getattr(r, qty))]
            if not vals:
                continue
            p = out / f"{prefix}_{tag}_{el}_{sch}_k{k}_{qty}.dat"
            with open(p, "w") as fh:
                fh.write(f"# ndof {qty}\n")
                for nd, v in sorted(vals):
                    fh.write(f"{nd} {v:.10e}\n")
            paths.append(p)
    return paths


def write_saving_table(rows: list[SavingRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "h", "k", "n_P", "n_V", "n_E", "saving_no_minus_one", "saving_minus_one"])
        for r in rows:
            w.writerow([r.family, f"{r.h:g}", r.k, r.n_P, r.n_V, r.n_E,
                        f"{r.saving_no_minus_one:.3f}", f"{r.saving_minus_one:.3f}"])
    return path


def load_config(path: str | Path) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return d


def with_overrides(base: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(base, **{k: v for k, v in kw.items() if v is not None})
