import csv
import json

import numpy as np
import pytest
from jsonschema import ValidationError

from anytime_ldpc import cli, harness, pexit
from anytime_ldpc.protograph import ProtographSpec


def petd_cfg(tmp_path, **kw):
    d = dict(scenario="petd_awgn", r=4, horizon=12, trials=30, iterations=10, snr_db=[2.0], output=str(tmp_path), plot=False)
    d.update(kw)
    return harness.ExperimentConfig.from_dict(d)


def control_cfg(tmp_path, **kw):
    d = dict(scenario="control_awgn", horizon=8, trials=6, iterations=10, early_stop=True, snr_db=[4.5], output=str(tmp_path), plot=False)
    d.update(kw)
    return harness.ExperimentConfig.from_dict(d)


def read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def brute_wilson(k, n, z=1.959963984540054):
    # roots of (p_hat - p)^2 = z^2 p (1 - p) / n
    a = 1 + z * z / n
    b = -(2 * k / n + z * z / n)
    c = (k / n) ** 2
    disc = np.sqrt(b * b - 4 * a * c)
    return (-b - disc) / (2 * a), (-b + disc) / (2 * a)


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (1, 1000), (500, 1000), (7, 400)])
def test_wilson_matches_quadratic_roots(k, n):
    lo, hi = harness.wilson_interval(k, n)
    elo, ehi = brute_wilson(k, n)
    assert lo == pytest.approx(max(elo, 0.0), abs=1e-12)
    assert hi == pytest.approx(min(ehi, 1.0), abs=1e-12)


def test_wilson_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.stats.proportion")
    for k, n in [(0, 25), (4, 25), (25, 25), (13, 1000)]:
        lo, hi = harness.wilson_interval(k, n)
        elo, ehi = sm.proportion_confint(k, n, alpha=0.05, method="wilson")
        assert lo == pytest.approx(elo, abs=1e-9) and hi == pytest.approx(ehi, abs=1e-9)


def test_schema_rejects_bad_configs():
    with pytest.raises(ValidationError):
        harness.ExperimentConfig.from_dict({"scenario": "nope"})
    with pytest.raises(ValidationError):
        harness.ExperimentConfig.from_dict({"scenario": "petd_awgn", "trials": 0})
    with pytest.raises(ValidationError):
        harness.ExperimentConfig.from_dict({"scenario": "petd_awgn", "typo_field": 1})
    with pytest.raises(harness.HarnessError):
        harness.ExperimentConfig.from_dict({"scenario": "control_awgn", "n_sensors": [2]})


def test_overrides_ignore_none():
    cfg = harness.ExperimentConfig.from_dict({"scenario": "petd_awgn", "trials": 7}, trials=None, seed=5)
    assert cfg.trials == 7 and cfg.seed == 5


def test_trial_streams_are_independent_of_order():
    a = harness.trial_rng(3, 17).standard_normal(5)
    harness.trial_rng(3, 16).standard_normal(100)
    assert np.array_equal(a, harness.trial_rng(3, 17).standard_normal(5))
    assert not np.array_equal(a, harness.trial_rng(3, 18).standard_normal(5))


def test_noiseless_petd_has_no_events(tmp_path):
    est = harness.run_petd(petd_cfg(tmp_path, noiseless=True))
    assert est.events.sum() == 0
    assert (est.pe == 0).all()


def test_events_are_exclusive_per_sample(tmp_path):
    est = harness.run_petd(petd_cfg(tmp_path))
    assert est.events.sum() > 0
    assert est.events.sum() <= est.samples
    lo, hi = est.window
    assert est.samples == est.oldest.shape[0] * (hi - lo + 1)
    assert (est.oldest <= np.arange(1, est.horizon + 1)).all()


def test_pe_bound_column_matches_pexit(tmp_path):
    cfg = petd_cfg(tmp_path)
    est = harness.run_petd(cfg)
    files = harness.emit(cfg, [est])
    rows = read(files["petd"])
    rep = pexit.analyze(ProtographSpec.paper_code(), 2.0, t=cfg.horizon)
    d, ref = pexit.pe_upper_bound(rep.fit.min_output, 1, rep.fit.delays)
    col = {int(r[2]): float(r[6]) for r in rows[1:]}
    for di, b in zip(d, ref):
        assert col[int(di)] == b
    # other columns round-trip exactly
    for r in rows[1:]:
        i = int(r[2]) - 1
        assert int(r[3]) == est.events[i] and float(r[5]) == est.pe[i]


def test_slope_fit_recovers_known_exponent():
    d = np.arange(1, 11)
    ev = np.round(1e6 * np.exp(-0.7 * d)).astype(int)
    est = harness.PetdEstimate(0.0, 10, (1, 10), d, ev, 10**6, np.zeros(10), np.zeros((1, 10), int))
    fit = est.fit((1, 10), 20)
    assert fit.beta == pytest.approx(0.7, abs=2e-3)
    assert fit.lower() < fit.beta < fit.upper()
    with pytest.raises(harness.InsufficientEvents):
        est.fit((9, 10), 2000)


def test_log_slope():
    assert harness.log_slope([0, 10], [1e-1, 1e-3]) == pytest.approx(-0.2)
    with pytest.raises(harness.InsufficientEvents):
        harness.log_slope([0, 10], [1e-1, 0.0])


@pytest.mark.property
def test_petd_deterministic_across_workers(tmp_path):
    a = harness.run_petd(petd_cfg(tmp_path, trials=60, workers=1))
    b = harness.run_petd(petd_cfg(tmp_path, trials=60, workers=2))
    assert np.array_equal(a.oldest, b.oldest)


@pytest.mark.property
def test_control_deterministic_across_workers(tmp_path):
    a, ta = harness.run_control(control_cfg(tmp_path, trials=30, workers=1, traces=2))
    b, tb = harness.run_control(control_cfg(tmp_path, trials=30, workers=2, traces=2))
    assert a.rows == b.rows
    assert ta.keys() == tb.keys() and all(np.array_equal(ta[k], tb[k]) for k in ta)


@pytest.mark.property
def test_replay_is_bit_identical(tmp_path):
    cfg = petd_cfg(tmp_path / "a", plot=True)
    files = harness.emit(cfg, harness.run(cfg))
    assert (tmp_path / "a" / "petd.png").exists()
    again = harness.replay(files["meta"], output=str(tmp_path / "b"), workers=2)
    assert files["petd"].read_bytes() == again["petd"].read_bytes()


def test_noiseless_control_never_fails(tmp_path):
    cfg = control_cfg(tmp_path, noiseless=True, horizon=30, trials=10)
    est, traces = harness.run_control(cfg)
    assert est.rows[0]["failures"] == 0
    tr = traces[(4.5, 1, 0)]
    assert tr.shape == (30, 10)
    assert tr[-1, 7] < 1.0


def test_control_outputs(tmp_path):
    cfg = control_cfg(tmp_path, plot=True, traces=1)
    files = harness.emit(cfg, harness.run(cfg))
    rows = read(files["p100"])
    assert rows[0] == harness.P100_HEADER
    assert read(tmp_path / "trace_0.csv")[0] == harness.trace_columns(3)
    assert (tmp_path / "p100.png").exists() and (tmp_path / "trace_0.png").exists()
    meta = json.loads(files["meta"].read_text())
    assert meta["config"]["scenario"] == "control_awgn"


def test_fading_multi_sensor_naming(tmp_path):
    cfg = control_cfg(tmp_path, scenario="control_fading", n_sensors=[1, 2], snr_db=[10.0], trials=2, horizon=4)
    est, traces = harness.run_control(cfg)
    assert [r["n_sensors"] for r in est.rows] == [1, 2]
    assert harness.trace_name(cfg, 10.0, 2, 0) == "trace_0_snr10_n2"


def test_cli_end_to_end(tmp_path, capsys):
    assert cli.main(["codegen", "--r", "4", "--t", "5", "--out", str(tmp_path / "code")]) == 0
    assert (tmp_path / "code" / "matrix.txt").exists()
    assert cli.main(["analyze", "--snr-db", "4.5", "20", "--t", "40", "--out", str(tmp_path / "an")]) == 0
    rows = read(tmp_path / "an" / "analyze.csv")
    assert rows[0][0] == "snr_db" and len(rows) == 3
    assert (tmp_path / "an" / "analyze.png").exists()

    cfg = {"scenario": "petd_awgn", "r": 4, "horizon": 10, "trials": 5, "iterations": 5, "plot": False}
    path = tmp_path / "petd.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "petd"
    assert cli.main(["petd", "--config", str(path), "--snr-db", "3", "--output", str(out)]) == 0
    assert read(out / "petd.csv")[0] == ["snr_db"] + harness.PETD_HEADER
    first = (out / "petd.csv").read_bytes()
    assert cli.main(["replay", str(out / "meta.json"), "--output", str(tmp_path / "re")]) == 0
    assert (tmp_path / "re" / "petd.csv").read_bytes() == first

    assert cli.main(["control", "--trials", "2", "--horizon", "5", "--no-plot", "--output", str(tmp_path / "ctl")]) == 0
    assert (tmp_path / "ctl" / "p100.csv").exists()
    with pytest.raises(SystemExit):
        cli.main(["control", "--config", str(path), "--output", str(tmp_path / "x")])
    capsys.readouterr()
