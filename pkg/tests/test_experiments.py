import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstacle_fd import cli
from obstacle_fd.discretization import SpatialGrid, TimeGrid
from obstacle_fd.experiments import (CSV_HEADER, ReferenceSolution, RunConfig,
                                     config_from_mapping, errors_exact, errors_vs_reference,
                                     estimate_order, lagrange_interpolate, make_reference,
                                     parse_csv, parse_mesh, parse_window, read_config_file,
                                     run_table, window_points, with_overrides)
from obstacle_fd.problems import american_put, manufactured_smooth, model1
from obstacle_fd.steppers import march


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture(scope="module")
def put_reference():
    return make_reference(american_put(), "BDF2", 4, 5120)


def put_error(ref, scheme, J, N):
    p = american_put()
    grid = SpatialGrid.for_problem(p, J)
    u, _ = march(p, grid, TimeGrid(p.T, N), scheme, 4)
    return errors_vs_reference(u, grid, ref)


# -- orders -------------------------------------------------------------------

def test_estimate_order_examples():
    assert estimate_order(4e-2, 1e-2) == pytest.approx(2.0)
    assert estimate_order(8e-3, 1e-3) == pytest.approx(3.0)
    assert estimate_order(9.92e-3, 1.33e-3) == pytest.approx(2.87, abs=0.05)


@pytest.mark.parametrize("pair", [(0.0, 1.0), (1.0, 0.0), (math.nan, 1.0), (-1.0, 1.0)])
def test_estimate_order_undefined(pair):
    assert math.isnan(estimate_order(*pair))


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-12, 1e3), st.floats(-4, 8))
def test_estimate_order_inverts_power_law(e, p):
    assert estimate_order(e * 2**p, e) == pytest.approx(p, abs=1e-9)


# -- exact-solution norms -----------------------------------------------------

def test_errors_exact_zero_on_exact_samples():
    p = model1()
    grid = SpatialGrid.for_problem(p, 40)
    assert errors_exact(p.exact(p.T, grid.interior), p, grid, p.T) == (0.0, 0.0, 0.0)


def test_errors_exact_direct_formula():
    p = manufactured_smooth("decay")
    grid = SpatialGrid(0.0, 1.5, 2)                  # h = 0.5
    u = p.exact(0.0, grid.interior) + np.array([3.0, -4.0])
    l1, l2, linf = errors_exact(u, p, grid, 0.0)
    assert (l1, linf) == (pytest.approx(3.5), pytest.approx(4.0))
    assert l2 == pytest.approx(3.53553, abs=1e-5)


def test_errors_exact_requires_closed_form():
    p = american_put()
    with pytest.raises(ValueError):
        errors_exact(np.zeros(10), p, SpatialGrid.for_problem(p, 10), 1.0)


# -- interpolation and window norms -------------------------------------------

def test_window_points():
    pts = window_points((80.0, 120.0), 0.01)
    assert len(pts) == 4001 and pts[0] == 80.0 and pts[-1] == pytest.approx(120.0)
    with pytest.raises(ValueError):
        window_points((80.0, 120.0), 0.03)


def test_interpolation_reproduces_nodes():
    grid = SpatialGrid(75.0, 275.0, 199)
    u = np.sin(grid.interior / 7.0)
    np.testing.assert_array_equal(lagrange_interpolate(grid, u, grid.interior), u)


@pytest.mark.parametrize("deg", range(4))
def test_interpolation_exact_on_cubics(deg):
    grid = SpatialGrid(0.0, 1.0, 20)
    f = lambda x: (x - 0.3) ** deg
    x = np.linspace(grid.interior[0], grid.interior[-1], 137)
    np.testing.assert_allclose(lagrange_interpolate(grid, f(grid.interior), x), f(x), atol=1e-13)


def test_interpolation_fourth_order():
    errs = []
    for J in (40, 80, 160):
        grid = SpatialGrid(0.0, 1.0, J)
        x = np.linspace(0.1, 0.9, 301)
        errs.append(np.max(np.abs(lagrange_interpolate(grid, np.exp(grid.interior), x) - np.exp(x))))
    assert estimate_order(errs[0], errs[1]) >= 3.8 and estimate_order(errs[1], errs[2]) >= 3.8


def test_interpolation_rejects_points_outside():
    grid = SpatialGrid(0.0, 1.0, 9)
    with pytest.raises(ValueError):
        lagrange_interpolate(grid, np.zeros(9), [0.05])
    with pytest.raises(ValueError):
        lagrange_interpolate(SpatialGrid(0.0, 1.0, 3), np.zeros(3), [0.5])


def _stub_reference(grid, u):
    pts = window_points((80.0, 120.0), 0.5)
    return ReferenceSolution(pts, lagrange_interpolate(grid, u, pts), "american_put", "BDF2", 4,
                             grid.J, grid.J, None, (80.0, 120.0), 0.5)


def test_errors_vs_own_interpolant_vanish():
    grid = SpatialGrid(75.0, 275.0, 99)
    u = np.maximum(100.0 - grid.interior, 0.0) + np.cos(grid.interior / 10)
    assert errors_vs_reference(u, grid, _stub_reference(grid, u)) == (0.0, 0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-6))
def test_constant_shift_gives_equal_norms(c):
    grid = SpatialGrid(75.0, 275.0, 99)
    u = np.sin(grid.interior / 9.0)
    errs = errors_vs_reference(u + c, grid, _stub_reference(grid, u))
    np.testing.assert_allclose(errs, [abs(c)] * 3, rtol=1e-10)


# -- references ---------------------------------------------------------------

def test_reference_metadata(put_reference):
    ref = put_reference
    assert ref.M == 4001 and len(ref.values) == 4001
    assert (ref.J, ref.N, ref.scheme, ref.space_order) == (5120, 5120, "BDF2", 4)
    grid = SpatialGrid.for_problem(american_put(), 5120)
    u, _ = march(american_put(), grid, TimeGrid(1.0, 16), "BDF2")
    node = grid.interior[1000]
    assert lagrange_interpolate(grid, u, [node])[0] == u[1000]


def test_reference_self_convergence():
    p = american_put()
    refs = [make_reference(p, Jref=J, spacing=0.1) for J in (320, 640, 1280)]
    d_coarse = np.max(np.abs(refs[0].values - refs[1].values))
    d_fine = np.max(np.abs(refs[1].values - refs[2].values))
    assert 3.0 <= d_coarse / d_fine <= 5.0


def test_reference_window_must_fit():
    with pytest.raises(ValueError):
        make_reference(american_put(), Jref=40, window=(60.0, 120.0))


# -- configuration ------------------------------------------------------------

def test_config_meshes():
    assert RunConfig(base_J=80, doublings=2).meshes() == [(80, 80), (160, 160), (320, 320)]
    assert RunConfig(base_J=80, base_N=8, doublings=1).meshes() == [(80, 8), (160, 16)]
    assert RunConfig(mesh=((10, 3),)).meshes() == [(10, 3)]


@pytest.mark.parametrize("kw", [dict(problem="heston"), dict(scheme="RK4"), dict(space_order=3),
                                dict(mesh=((0, 4),)), dict(ref_mode="other"), dict(format="tex"),
                                dict(problem="american_put", ref_mode="self", window=(60.0, 120.0))])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)


def test_parse_helpers():
    assert parse_mesh("80:8, 160:16") == ((80, 8), (160, 16))
    assert parse_window("80,120") == (80.0, 120.0)
    with pytest.raises(ValueError):
        parse_mesh("80x8")
    with pytest.raises(ValueError):
        parse_window("80")


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# Model 2 study\nproblem = model2\nscheme = BDF3  # high order\n"
                    "mesh = 80:80,160:160\nnewton-tol = 1e-12\ntimings = false\n\n")
    cfg = config_from_mapping(read_config_file(path))
    assert cfg.problem == "model2" and cfg.scheme == "BDF3"
    assert cfg.mesh == ((80, 80), (160, 160)) and cfg.newton_tol == 1e-12 and not cfg.timings
    with pytest.raises(ValueError):
        config_from_mapping({"colour": "blue"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("problem model2\n")
    with pytest.raises(ValueError):
        read_config_file(bad)


def test_with_overrides():
    cfg = with_overrides(RunConfig(), scheme="CN2", base_J=None, unrelated=1)
    assert cfg.scheme == "CN2" and cfg.base_J == 80


# -- tables -------------------------------------------------------------------

def small_config(**kw):
    base = dict(problem="model1", scheme="BDF2", mesh=((20, 20), (40, 40), (80, 80)), timings=False)
    return RunConfig(**{**base, **kw})


def test_single_row_has_no_orders():
    table = run_table(small_config(mesh=((40, 40),)))
    assert all(math.isnan(o) for o in table.rows[0].orders)
    rec = parse_csv(table.to_csv())[0]
    assert rec["ord_l1"] is None and rec["ord_l2"] is None and rec["ord_linf"] is None


def test_orders_only_on_doublings():
    table = run_table(small_config(mesh=((20, 20), (40, 40), (60, 60))))
    assert not math.isnan(table.rows[1].ord_linf)
    assert math.isnan(table.rows[2].ord_linf)


def test_csv_layout_and_markdown_agree():
    table = run_table(small_config())
    text = table.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert text.splitlines()[0] == "J,N,e_l1,ord_l1,e_l2,ord_l2,e_linf,ord_linf,time_s"
    records = parse_csv(text)
    md_rows = [ln for ln in table.to_markdown().splitlines() if ln.startswith("| ") and ln[2].isdigit()]
    assert len(md_rows) == len(records) == 3
    for rec, line, row in zip(records, md_rows, table.rows):
        cells = [c.strip() for c in line.strip("|").split("|")]
        md = [float(c) if c else None for c in cells]
        assert [md[i] for i in range(8)] == [rec[k] for k in CSV_HEADER[:8]]
        for k, v in zip(("e_l1", "e_l2", "e_linf"), row.errors):
            assert rec[k] == pytest.approx(v, rel=5e-6)
        assert all(e >= 0 for e in row.errors)


def test_table_is_deterministic():
    a = run_table(small_config()).render()
    b = run_table(small_config()).render()
    assert a == b


def test_failed_row_is_annotated_and_rest_continue():
    # J=3 is too coarse for the four-point interpolant
    cfg = RunConfig(problem="american_put", scheme="BDF2", mesh=((3, 3), (40, 40)), ref_mode="self",
                    ref_J=80, spacing=0.5, timings=False)
    table = run_table(cfg)
    assert not table.ok
    assert table.rows[0].failure is not None and table.rows[1].failure is None
    assert "failed" in table.to_markdown()
    assert math.isnan(parse_csv(table.to_csv())[0]["e_linf"])


def test_markdown_mentions_reference():
    cfg = RunConfig(problem="american_put", mesh=((40, 40),), ref_mode="self", ref_J=80, spacing=0.5)
    assert "reference J=N=80" in run_table(cfg).to_markdown()


# -- CLI ----------------------------------------------------------------------

def test_cli_csv_to_file(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code = cli.main(["--problem", "model2", "--scheme", "BDF3", "--mesh", "40:40,80:80",
                     "--format", "csv", "--no-time", "--out", str(out)])
    assert code == 0
    rows = parse_csv(out.read_text())
    assert [r["J"] for r in rows] == [40.0, 80.0] and rows[1]["ord_linf"] is not None
    assert capsys.readouterr().out == ""


def test_cli_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("problem = model1\nscheme = CN1\nmesh = 20:20\nformat = csv\n")
    assert cli.main(["--config", str(cfg), "--scheme", "BDF2", "--no-time"]) == 0
    stdout = capsys.readouterr().out
    direct = run_table(small_config(scheme="BDF2", mesh=((20, 20),), format="csv")).render()
    assert stdout == direct


def test_cli_exit_code_on_failure(capsys):
    code = cli.main(["--problem", "american_put", "--mesh", "3:3", "--ref-mode", "self",
                     "--ref-J", "80", "--spacing", "0.5"])
    assert code == 2
    assert "J=3 N=3" in capsys.readouterr().err


def test_cli_bad_arguments():
    with pytest.raises(SystemExit) as info:
        cli.main(["--mesh", "80x80"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["--scheme", "RK4"])


def test_cli_base_mesh_and_doublings(capsys):
    assert cli.main(["--problem", "smooth", "--scheme", "CN2", "--base-J", "10", "--base-N", "5",
                     "--doublings", "1", "--format", "csv"]) == 0
    rows = parse_csv(capsys.readouterr().out)
    assert [(r["J"], r["N"]) for r in rows] == [(10.0, 5.0), (20.0, 10.0)]
    assert rows[0]["time_s"] is not None


# -- reference values ---------------------------------------------------------

def test_put_bdf2_640(put_reference):
    linf = put_error(put_reference, "BDF2", 640, 640)[2]
    assert rel(linf, 3.71e-4) <= 0.35


def test_put_cn1_320(put_reference):
    assert rel(put_error(put_reference, "CN1", 320, 320)[2], 1.59e-3) <= 0.35


def test_put_cn2_high_cfl(put_reference):
    assert rel(put_error(put_reference, "CN2", 2560, 256)[2], 1.58e-3) <= 0.35


def _model1_bdf2(J):
    p = model1()
    grid = SpatialGrid.for_problem(p, J)
    u, _ = march(p, grid, TimeGrid(p.T, J), "BDF2", 4)
    return errors_exact(u, p, grid, p.T)


def test_model1_bdf2_l2_at_160():
    assert rel(_model1_bdf2(160)[1], 3.51e-2) <= 0.25


def test_model1_bdf2_linf_at_80():
    assert rel(_model1_bdf2(80)[2], 5.41e-2) <= 0.25


def test_model2_bdf3_table():
    table = run_table(RunConfig(problem="model2", scheme="BDF3", base_J=80, doublings=3,
                                timings=False))
    last = table.rows[-1]
    assert table.ok and (last.J, last.N) == (640, 640)
    assert rel(last.e_linf, 1.29e-5) <= 0.25
    assert last.ord_linf == pytest.approx(5.13, abs=0.25)
