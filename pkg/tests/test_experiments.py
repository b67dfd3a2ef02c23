import json

import numpy as np
import pytest

from freezing_burgers.errors import ConfigError
from freezing_burgers.experiments import (
    RunConfig,
    Snapshot,
    SnapshotRecorder,
    build_problem,
    coarsen,
    convergence_study,
    emit_outputs,
    expression_initial,
    load_config,
    oscillation_count,
    sine_bump_2d,
    parse_config_text,
    read_scalars,
    reconstruct,
    run_experiment,
    cfl_violation_demo,
)
from freezing_burgers.imex import StepRecord
from freezing_burgers.mesh import build_grid


def record(step=0, **kw):
    base = dict(step=step, tau=0.1 * step, dtau=0.1, t=1 / 3, alpha=np.pi, b=(-np.e,), mu=(0.1, 1e-300),
                res_phase=2.2e-16, mass=1.0000000000000002, rhs_norm=0.0)
    base.update(kw)
    return StepRecord(**base)


def test_parse_config():
    vals = parse_config_text("""
        # a comment
        nu = 0.01   # trailing comment
        dim=1
        nx = 98
        bounds = -5, 5
        phase = fixed
        stop-when-stationary = yes
    """)
    assert vals == {"nu": 0.01, "dim": 1, "nx": (98,), "bounds": (-5.0, 5.0), "phase": "fixed",
                    "stop_when_stationary": True}


@pytest.mark.parametrize("text", ["nuu = 0.1", "nu 0.1", "nu = abc", "dim = 1.5", "stop_when_stationary = maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_load_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("nu = 0.2\ncfl = 0.25\n")
    cfg = load_config(path, {"nu": 1.0, "tau_end": 3.0}, cfl=0.1, theta=None)
    assert cfg.nu == 0.2 and cfg.cfl == 0.1 and cfg.tau_end == 3.0 and cfg.theta == 1.5
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        load_config(None, bogus=1)


def test_config_defaults_and_validation():
    c1, c2 = RunConfig(), RunConfig(dim=2)
    assert c1.p == 2.0 and c1.cfl == 1 / 3 and c1.initial == "sine-bump-1d"
    assert c2.p == 1.5 and c2.cfl == 0.2 and c2.a == (1.0, 1.0) and c2.initial == "sine-bump-2d"
    assert RunConfig(phase="orth").phase == "orthogonal"
    for bad in (dict(dim=3), dict(phase="x"), dict(initial="x"), dict(tau_end=-1), dict(policy="x")):
        with pytest.raises(ConfigError):
            RunConfig(**bad)
    with pytest.raises(ConfigError):
        RunConfig(dim=2, initial="sine-bump-1d").initial_function()


def test_expression_initial():
    f = expression_initial("exp(-x**2) * cos(y)", 2)
    assert f(np.array(0.0), np.array(0.0)) == 1.0
    for bad in ("", "x +", "__import__('os')", "y"):
        with pytest.raises(ConfigError):
            expression_initial(bad, 1)


def test_sine_bump_2d_support():
    assert sine_bump_2d(np.pi / 2, 0.0) == 1.0
    assert sine_bump_2d(1.0, 2.0) == 0.0


def test_fixed_phase_reference_choice():
    cfg = RunConfig(phase="fixed", dx=0.1)
    prob, v0 = build_problem(cfg)
    assert np.array_equal(prob.reference, v0)
    cfg = RunConfig(phase="fixed", dx=0.1, reference_expression="exp(-x**2)")
    prob, v0 = build_problem(cfg)
    assert np.array_equal(prob.reference, np.exp(-prob.grid.centers(0) ** 2))


def test_emit_empty_records_writes_manifest_only(tmp_path):
    manifest = emit_outputs([], [], None, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]
    assert manifest["scalars"] is None


def test_emit_round_trip_bitwise(tmp_path):
    recs = [record(0), record(1, alpha=1.2345678901234567e6, mu=(np.nextafter(1.0, 2.0), -3e-17))]
    g = build_grid(1, (-1, 1), 4)
    snap = Snapshot(0.0, 0, np.array([0.1, 0.2, 1 / 3, 2 / 7, np.pi, -1e-310]))
    emit_outputs(recs, [snap], g, tmp_path, {"note": "x"})
    cols = read_scalars(tmp_path / "scalars.csv")
    assert list(cols) == ["step", "tau", "dtau", "t", "alpha", "b", "mu1", "mu2", "res_phase", "mass"]
    assert len(cols["step"]) == 2
    assert cols["alpha"][1] == 1.2345678901234567e6 and cols["mu1"][1] == np.nextafter(1.0, 2.0)
    assert cols["t"][0] == 1 / 3 and cols["b"][0] == -np.e and cols["mu2"][0] == 1e-300
    rows = (tmp_path / "snapshot_0000.csv").read_text().splitlines()
    assert rows[0] == "xi,v"
    assert np.array_equal([float(r.split(",")[1]) for r in rows[1:]], snap.v)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["snapshots"][0]["file"] == "snapshot_0000.csv" and manifest["meta"]["note"] == "x"


def test_emit_two_dimensional_snapshot(tmp_path):
    g = build_grid(2, (0, 1), (4, 5))
    emit_outputs([record(0, b=(1.0, 2.0), mu=(0.0, 0.0, 0.0))], [Snapshot(0.0, 0, np.zeros(g.size))], g, tmp_path)
    assert (tmp_path / "snapshot_0000.csv").read_text().splitlines()[0] == "xi1,xi2,v"
    assert "b1,b2,mu1,mu2,mu3" in (tmp_path / "scalars.csv").read_text()


def test_emit_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="cannot create"):
        emit_outputs([], [], None, blocker / "sub")


def test_snapshot_recorder_zero_horizon():
    rec = SnapshotRecorder(0.0, 50)
    assert rec.targets == [0.0]


def test_zero_horizon_run_emits_initial_snapshot_only(tmp_path):
    out = run_experiment(RunConfig(tau_end=0.0, dx=0.1, out=str(tmp_path)))
    assert out.status == 0 and len(out.snapshots) == 1
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json", "scalars.csv", "snapshot_0000.csv"]
    assert len((tmp_path / "scalars.csv").read_text().splitlines()) == 2


def test_short_run_outputs(tmp_path):
    out = run_experiment(RunConfig(tau_end=0.5, dx=0.1, snapshots=5, out=str(tmp_path)))
    assert out.status == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    taus = [s["tau"] for s in manifest["snapshots"]]
    assert len(taus) == 5 and taus[0] == 0.0 and taus[-1] == 0.5
    cols = read_scalars(tmp_path / "scalars.csv")
    assert np.max(np.abs(cols["mass"] - cols["mass"][0])) <= 1e-10 * abs(cols["mass"][0]) + 1e-14 * len(cols["mass"])


def test_failed_run_reports_status(tmp_path):
    # the fixed phase folds on this configuration
    cfg = RunConfig(nu=1.0, phase="fixed", dx=0.2, tau_end=3.0, out=str(tmp_path))
    out = run_experiment(cfg)
    assert out.status == 1 and out.error


def test_fold_aborts_on_wave_speed_divergence(tmp_path):
    # on a finer grid mu diverges at the fold long before the step floor is reached
    cfg = RunConfig(nu=1.0, phase="fixed", dx=0.05, bounds=(-10.0, 10.0), tau_end=1.0, out=str(tmp_path))
    out = run_experiment(cfg)
    assert out.status == 1 and "diverge" in str(out.error)
    assert out.result is None or out.result.n_steps < 20000


def test_runs_are_bitwise_reproducible(tmp_path):
    a = run_experiment(RunConfig(tau_end=0.3, dx=0.1, out=str(tmp_path / "a")))
    b = run_experiment(RunConfig(tau_end=0.3, dx=0.1, out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "scalars.csv").read_bytes() == (tmp_path / "b" / "scalars.csv").read_bytes()
    assert np.array_equal(a.result.state.v, b.result.state.v)


def test_coarsen():
    fine = np.arange(12.0)
    assert np.array_equal(coarsen(fine, (12,), (4,)), [1, 4, 7, 10])
    f2 = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(coarsen(f2, (4, 4), (2, 2)), [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(ValueError):
        coarsen(fine, (12,), (5,))


def test_convergence_study_needs_two_grids():
    with pytest.raises(ConfigError):
        convergence_study(RunConfig(grids=(0.1,)))
    with pytest.raises(ConfigError):
        convergence_study(RunConfig(grids=(0.05, 0.1)))


def test_convergence_study_small():
    rep = convergence_study(RunConfig(nu=1.0, bounds=(-10, 10), grids=(0.2, 0.1)), tau_end=0.1)
    assert set(rep.slopes) == {"v", "v_sq", "mu", "t", "g"}
    assert rep.errors["v_sq"][0] == pytest.approx(rep.errors["v"][0] ** 2)
    assert rep.table()[0] == ["dx", "err_v", "err_v_sq", "err_mu", "err_t", "err_g"]
    assert rep.reference["dx"] == 0.025


def test_oscillation_count():
    assert oscillation_count(np.zeros(10)) == 0
    assert oscillation_count([0, 1, 2, 1, 0]) == 1
    assert oscillation_count([0, 1, 0, 1, 0]) == 3
    assert oscillation_count([0, 1, 1, 1, 2]) == 0


def test_zero_data_never_oscillates():
    rep = cfl_violation_demo(cfl=1.2, initial=lambda x: 0.0 * x, tau_end=0.1)
    assert rep.peak_count == 0


def test_reconstruct_identity():
    g = build_grid(1, (-5, 5), 98)
    x = g.centers(0)
    v = np.exp(-x**2)
    assert np.allclose(reconstruct(v, g, 1.0, [0.0], 2.0, x), v)
    # u(x) = v((x - b)/alpha) / alpha
    u = reconstruct(v, g, 2.0, [1.0], 2.0, x)
    assert np.allclose(u, np.exp(-((x - 1) / 2) ** 2) / 2, atol=5e-3)
