import csv
import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from vemstokes.element import CLASSIC, DIVFREE
from vemstokes.harness import (
    CSV_HEADER,
    ErrorReport,
    ExperimentConfig,
    RunResult,
    build_mesh,
    compare_with_classic,
    dof_saving_table,
    emit_outputs,
    fit_slope,
    get_case,
    make_test1,
    make_test2,
    polynomial_case,
    run_convergence,
    run_equivalence,
    with_overrides,
    write_saving_table,
)
from vemstokes.system import FULL, REDUCED, ConfigurationError, dof_saving

x, y = sp.symbols("x y")

# closed forms of the two benchmark problems
SYMBOLIC = {
    "test1": (
        (-sp.Rational(1, 2) * sp.cos(x) ** 2 * sp.cos(y) * sp.sin(y),
         sp.Rational(1, 2) * sp.cos(y) ** 2 * sp.cos(x) * sp.sin(x)),
        sp.sin(x) - sp.sin(y),
    ),
    "test2": ((y**4 + 1, x**4 + 2), x**3 - y**3),
}


def _symbolic_f(name, nu):
    (u1, u2), p = SYMBOLIC[name]
    lap = lambda w: sp.diff(w, x, 2) + sp.diff(w, y, 2)  # noqa: E731
    return [sp.lambdify((x, y), -nu * lap(u1) - sp.diff(p, x)),
            sp.lambdify((x, y), -nu * lap(u2) - sp.diff(p, y))]


@pytest.mark.parametrize("make", [make_test1, make_test2])
@pytest.mark.parametrize("nu", [1.0, 0.3])
def test_load_matches_symbolic(make, nu):
    case = make(nu)
    X = np.random.default_rng(0).uniform(0, 1, (100, 2))
    f1, f2 = _symbolic_f(case.name, nu)
    ref = np.column_stack([f1(X[:, 0], X[:, 1]) + 0 * X[:, 0], f2(X[:, 0], X[:, 1]) + 0 * X[:, 0]])
    assert np.abs(case.f(X) - ref).max() <= 1e-12
    (u1, u2), p = SYMBOLIC[case.name]
    U = np.column_stack([sp.lambdify((x, y), u)(X[:, 0], X[:, 1]) + 0 * X[:, 0] for u in (u1, u2)])
    assert np.abs(case.u(X) - U).max() <= 1e-14
    assert np.abs(case.p(X) - sp.lambdify((x, y), p)(X[:, 0], X[:, 1])).max() <= 1e-14


def _fd_load(case, X, h=1e-2):
    """Fourth-order central differences of u and p, independent of any
    symbolic algebra."""
    lap = np.zeros_like(X)
    grad = np.zeros_like(X)
    for i, e in enumerate(np.eye(2)):
        u = [case.u(X + j * h * e) for j in (-2, -1, 0, 1, 2)]
        p = [case.p(X + j * h * e) for j in (-2, -1, 1, 2)]
        lap += (-u[0] + 16 * u[1] - 30 * u[2] + 16 * u[3] - u[4]) / (12 * h**2)
        grad[:, i] = (p[0] - 8 * p[1] + 8 * p[2] - p[3]) / (12 * h)
    return -case.nu * lap - grad


@pytest.mark.parametrize("make", [make_test1, make_test2])
def test_load_matches_finite_differences(make):
    case = make()
    X = np.random.default_rng(1).uniform(0, 1, (100, 2))
    assert np.abs(case.f(X) - _fd_load(case, X)).max() <= 1e-6


def test_test1_divergence_free_and_nonzero_trace():
    (u1, u2), _ = SYMBOLIC["test1"]
    assert sp.simplify(sp.diff(u1, x) + sp.diff(u2, y)) == 0
    # the trace does not vanish, so Dirichlet data is the exact trace
    assert make_test1().u(np.array([[0.0, 0.3]]))[0, 0] != 0.0


@given(st.integers(2, 5), st.integers(0, 1000))
def test_polynomial_case_consistent(k, seed):
    case = polynomial_case(k, seed)
    X = np.random.default_rng(seed).uniform(0, 1, (20, 2))
    assert np.abs(case.f(X) - _fd_load(case, X)).max() <= 1e-5 * max(1.0, np.abs(case.f(X)).max())
    h = 1e-6
    div = sum((case.u(X + h * e)[:, i] - case.u(X - h * e)[:, i]) / (2 * h) for i, e in enumerate(np.eye(2)))
    assert np.abs(div).max() <= 1e-7


def test_get_case():
    assert get_case("1").name == "test1"
    assert get_case(2).name == "test2"
    with pytest.raises(ConfigurationError):
        get_case("7")


# ------------------------------------------------------------------ slopes


@given(st.floats(0.5, 6.0), st.floats(1e-3, 1e3))
def test_fit_slope_exact_power(rate, c):
    hs = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    assert fit_slope(hs, c * hs**rate) == pytest.approx(rate, abs=1e-10)


def test_fit_slope_degenerate():
    assert np.isnan(fit_slope([0.5], [1.0]))
    assert np.isnan(fit_slope([0.5, 0.25], [0.0, 0.0]))


# ------------------------------------------------------------------ config


def test_config_validation():
    ExperimentConfig()
    for bad in ({"ks": (1,)}, {"family": "X"}, {"scheme": "nope"}, {"element": "x"},
                {"element": CLASSIC, "scheme": REDUCED}, {"hs": (0.0,)}, {"test": "9"}):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**bad)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"colour": "red"})


def test_config_round_trip_and_overrides():
    cfg = ExperimentConfig(family="V", hs=(0.5, 0.25), ks=(2, 3))
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert with_overrides(cfg, family=None, seed=4).seed == 4
    assert with_overrides(cfg, family=None).family == "V"


def test_build_mesh_families(tmp_path):
    assert build_mesh("Q", 0.25).n_cells == 16
    assert build_mesh("T", 0.5).n_cells == 8
    assert build_mesh("V", 0.25).n_cells == 16
    from vemstokes.mesh import write_mesh
    path = tmp_path / "m.txt"
    write_mesh(build_mesh("Q", 0.5), path)
    assert build_mesh(f"file:{path}", 1.0).n_cells == 4


# ---------------------------------------------------------------- experiments


def test_test2_reproduced_with_k4():
    cfg = ExperimentConfig(test="2", family="V", hs=(0.5, 0.25), ks=(4,), scheme="full")
    rep = run_convergence(cfg)
    assert all(r.delta_u <= 1e-8 and r.delta_p <= 1e-8 for r in rep.rows)


def test_test2_k2_converges():
    cfg = ExperimentConfig(test="2", family="Q", hs=(0.25, 0.125), ks=(2,), scheme="full")
    rows = run_convergence(cfg).rows
    assert rows[0].delta_u > 1e-6 and rows[1].delta_u < rows[0].delta_u


def test_equivalence_zero_data(monkeypatch):
    import vemstokes.harness as H

    zero = H.TestCase("zero", lambda X: np.zeros((len(X), 2)), lambda X: 0 * X[:, 0],
                      lambda X: np.zeros((len(X), 2)))
    monkeypatch.setitem(H.CASES, "1", lambda nu=1.0: zero)
    rep = run_equivalence(ExperimentConfig(family="Q", hs=(0.5,), ks=(2, 3)))
    assert all(r.eps_u == 0.0 and r.eps_p == 0.0 for r in rep.rows)


def test_equivalence_rows():
    rep = run_equivalence(ExperimentConfig(test="2", family="T", hs=(0.5,), ks=(3,)))
    (r,) = rep.rows
    assert r.eps_u <= 1e-8 and r.eps_p <= 1e-8 and r.scheme == REDUCED


def test_compare_with_classic_flags_larger_errors():
    mk = lambda el, du: RunResult("Q", 0.25, 2, FULL, el, 10, delta_u=du)  # noqa: E731
    new = ErrorReport([mk(DIVFREE, 1.0), RunResult("Q", 0.125, 2, FULL, DIVFREE, 20, delta_u=0.1)])
    classic = ErrorReport([mk(CLASSIC, 2.0), RunResult("Q", 0.125, 2, FULL, CLASSIC, 20, delta_u=0.05)])
    msgs = compare_with_classic(new, classic)
    assert len(msgs) == 1 and "h=0.125" in msgs[0]


# ------------------------------------------------------------------ savings


def test_saving_quad_entries():
    # no -1 on the pressure count reproduces the reference quad-grid entries
    rows = {(r.h, r.k): r for r in dof_saving_table(("Q",), ks=(2, 5))}
    assert rows[0.25, 2].saving_no_minus_one == pytest.approx(43.835, abs=0.01)
    assert rows[1 / 32, 5].saving_no_minus_one == pytest.approx(53.458, abs=0.01)
    assert rows[0.25, 2].saving_minus_one == pytest.approx(100 * 64 / 145, rel=1e-12)


def test_saving_formula_unstructured_triangle_counts():
    # an 8-triangle mesh with 3 interior vertices and 10 interior edges
    assert dof_saving(8, 3, 10, 2, minus_one=True) == pytest.approx(49.230, abs=0.001)


def test_write_saving_table(tmp_path):
    rows = dof_saving_table(("Q", "T"), ks=(2,))
    p = write_saving_table(rows, tmp_path / "s.csv")
    with open(p) as fh:
        data = list(csv.reader(fh))
    assert len(data) == len(rows) + 1 and {len(r) for r in data} == {8}


# ------------------------------------------------------------------ outputs


def _small_report():
    cfg = ExperimentConfig(family="Q", hs=(0.5, 0.25), ks=(2,))
    return run_convergence(cfg)


def test_emit_outputs(tmp_path):
    rep = _small_report()
    paths = emit_outputs(rep, tmp_path / "a")
    with open(paths[0]) as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == CSV_HEADER
    assert {len(r) for r in data} == {len(CSV_HEADER)}
    assert len(data) == len(rep.rows) + 1
    for p in paths[1:]:
        nd = [int(line.split()[0]) for line in p.read_text().splitlines()[1:]]
        assert nd == sorted(nd) and len(nd) == 2
    again = emit_outputs(_small_report(), tmp_path / "b")
    for p, q in zip(paths, again):
        assert p.name == q.name and p.read_bytes() == q.read_bytes()


def test_emit_outputs_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_outputs(_small_report(), blocker / "sub")
