"""Seeded Monte Carlo runs: delay-error statistics and closed-loop control.

Every trial draws from its own stream seeded by ``(base_seed, trial)``, and
trials are grouped into fixed batches, so results do not depend on how many
worker processes execute them.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import norm

from . import __version__, channel, pexit, plant
from .codec import Decoder, Encoder
from .protograph import LiftedCode, ProtographSpec, build_code, load_spec

SCENARIOS = ("petd_awgn", "control_awgn", "control_fading")
BATCH = 25

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "protograph": {"type": ["string", "object", "null"]},
        "r": {"type": "integer", "minimum": 1},
        "code_seed": {"type": "integer", "minimum": 0},
        "snr_db": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "n_sensors": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 1},
        "early_stop": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "window": {"type": ["array", "null"], "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "d_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "min_events": {"type": "integer", "minimum": 1},
        "noiseless": {"type": "boolean"},
        "traces": {"type": "integer", "minimum": 0},
        "plant": {"type": ["object", "null"]},
        "plot": {"type": "boolean"},
        "fading": {"enum": ["symbol", "step"]},
    },
    "required": ["scenario"],
    "additionalProperties": False,
}


class HarnessError(ValueError):
    pass


class InsufficientEvents(HarnessError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str
    protograph: str | dict | None = None
    r: int = 12
    code_seed: int = 2024
    snr_db: list = field(default_factory=lambda: [4.5])
    n_sensors: list = field(default_factory=lambda: [1])
    horizon: int = 100
    trials: int = 100
    iterations: int = 50
    early_stop: bool = False
    seed: int = 1
    output: str = "results"
    workers: int = 1
    window: list | None = None
    d_range: list = field(default_factory=lambda: [1, 40])
    min_events: int = 20
    noiseless: bool = False
    traces: int = 1
    plant: dict | None = None
    plot: bool = True
    fading: str = "symbol"

    def __post_init__(self):
        jsonschema.validate(self.to_dict(), CONFIG_SCHEMA)
        if self.scenario in ("petd_awgn", "control_awgn") and self.n_sensors != [1]:
            raise HarnessError(f"{self.scenario} is single-sensor")

    @property
    def channel_mode(self) -> str:
        return "rayleigh" if self.scenario == "control_fading" else "awgn"

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ExperimentConfig":
        d = dict(d)
        d.update({k: v for k, v in overrides.items() if v is not None})
        jsonschema.validate(d, CONFIG_SCHEMA)
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        """Read a JSON config; a relative protograph path is taken from the config's folder."""
        with open(path) as fh:
            d = json.load(fh)
        ref = d.get("protograph")
        if isinstance(ref, str) and not Path(ref).is_absolute():
            d["protograph"] = str((Path(path).parent / ref).resolve())
        return cls.from_dict(d, **overrides)

    def protograph_spec(self) -> ProtographSpec:
        if self.protograph is None:
            return ProtographSpec.paper_code()
        if isinstance(self.protograph, dict):
            return ProtographSpec.from_dict(self.protograph)
        return load_spec(self.protograph)[0]

    def plant_config(self) -> plant.PlantConfig:
        if self.plant is None:
            return plant.default_config()
        return plant.PlantConfig.from_dict(self.plant)

    def build_code(self) -> LiftedCode:
        return build_code(self.protograph_spec(), self.r, self.horizon, self.code_seed)


def trial_rng(base_seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, trial]))


def wilson_interval(k, n, z: float = 1.959963984540054):
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.where(n > 0, k / np.maximum(n, 1), 0.0)
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(center - half, 0.0, 1.0), np.clip(center + half, 0.0, 1.0)


def _run_batches(fn, args, n_trials: int, workers: int):
    batches = [range(a, min(a + BATCH, n_trials)) for a in range(0, n_trials, BATCH)]
    if workers <= 1 or len(batches) == 1:
        parts = [fn(args, b) for b in batches]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, [args] * len(batches), batches))
    return [x for part in parts for x in part]


# ---------------------------------------------------------------- P_e(t, d)


@dataclass
class SlopeFit:
    beta: float
    stderr: float
    delays: np.ndarray
    intercept: float

    @property
    def ci95(self):
        z = norm.ppf(0.975)
        return self.beta - z * self.stderr, self.beta + z * self.stderr

    def lower(self, confidence: float = 0.95) -> float:
        """One-sided lower confidence bound on the exponent."""
        return self.beta - norm.ppf(confidence) * self.stderr

    def upper(self, confidence: float = 0.95) -> float:
        return self.beta + norm.ppf(confidence) * self.stderr


@dataclass
class PetdEstimate:
    snr_db: float
    horizon: int
    window: tuple
    delays: np.ndarray
    events: np.ndarray
    samples: int
    pe_bound: np.ndarray
    oldest: np.ndarray

    @property
    def pe(self) -> np.ndarray:
        return self.events / self.samples

    def wilson(self):
        return wilson_interval(self.events, self.samples)

    def fit(self, d_range=(1, 40), min_events: int = 20) -> SlopeFit:
        """Negative log-slope of ``P_e`` against delay, weighted by event counts.

        Only delays inside ``d_range`` with at least ``min_events`` events are
        used; ``var(log p_hat)`` is taken as ``1 / events``.
        """
        lo, hi = d_range
        sel = (self.delays >= lo) & (self.delays <= hi) & (self.events >= min_events)
        if sel.sum() < 2:
            raise InsufficientEvents(
                f"{int(sel.sum())} delays in [{lo}, {hi}] have >= {min_events} events; need 2"
            )
        d = self.delays[sel].astype(float)
        y = np.log(self.pe[sel])
        w = self.events[sel].astype(float)
        dm = (w * d).sum() / w.sum()
        ym = (w * y).sum() / w.sum()
        sxx = (w * (d - dm) ** 2).sum()
        slope = (w * (d - dm) * (y - ym)).sum() / sxx
        return SlopeFit(beta=-slope, stderr=math.sqrt(1.0 / sxx), delays=d.astype(int), intercept=ym - slope * dm)

    def per_t(self) -> np.ndarray:
        """``P_e(t, d)`` for every ``t``; rows are ``t = 1..T``, columns ``d = 1..T``."""
        T = self.horizon
        out = np.zeros((T, T))
        for t in range(T):
            d = self.oldest[:, t]
            out[t] = np.bincount(d, minlength=T + 1)[1:] / self.oldest.shape[0]
        return out


def _petd_batch(args, trials):
    cfg, code, snr_db, seed = args
    rho = float(channel.db_to_linear(snr_db))
    ch = channel.ChannelConfig("awgn", rho)
    out = []
    for trial in trials:
        rng = trial_rng(seed, trial)
        enc = Encoder(code)
        dec = Decoder(code, cfg.iterations, early_stop=cfg.early_stop)
        oldest = np.zeros(cfg.horizon, dtype=np.int64)
        for t in range(cfg.horizon):
            q = rng.integers(0, 2, code.k)
            c = enc.step(q)
            real = channel.draw_realization(ch, code.n, rng, noiseless=cfg.noiseless)
            r = channel.transmit(channel.modulate(c, ch.symbol_energy)[None], ch, real)
            dec.push(channel.demodulate_llr(r, real, ch)[0])
            truth = enc.codeword().reshape(t + 1, code.n)[:, : code.k]
            oldest[t] = dec.iterate(truth=truth).oldest_error
        out.append(oldest)
    return out


def petd_window(cfg: ExperimentConfig) -> tuple:
    if cfg.window is not None:
        return tuple(cfg.window)
    return (max(1, cfg.horizon // 2), cfg.horizon)


def run_petd(cfg: ExperimentConfig, snr_db: float | None = None, code: LiftedCode | None = None) -> PetdEstimate:
    """Empirical probability that the oldest wrong block sits at delay ``d``.

    Pools every ``t`` in the tail window of the horizon.
    """
    if cfg.scenario != "petd_awgn":
        raise HarnessError("run_petd needs the petd_awgn scenario")
    snr_db = cfg.snr_db[0] if snr_db is None else snr_db
    code = code or cfg.build_code()
    oldest = np.array(_run_batches(_petd_batch, (cfg, code, snr_db, cfg.seed), cfg.trials, cfg.workers))
    T = cfg.horizon
    lo, hi = petd_window(cfg)
    pooled = oldest[:, lo - 1 : hi].ravel()
    events = np.bincount(pooled, minlength=T + 1)[1:]
    delays = np.arange(1, T + 1)
    report = pexit.analyze(cfg.protograph_spec(), snr_db, t=hi)
    bound = np.full(T, np.nan)
    _, b = report.bound_curve(cfg.protograph_spec().k0)
    bound[: b.size] = b
    return PetdEstimate(
        snr_db=snr_db,
        horizon=T,
        window=(lo, hi),
        delays=delays,
        events=events,
        samples=int(pooled.size),
        pe_bound=bound,
        oldest=oldest,
    )


# ---------------------------------------------------------------- control


@dataclass
class ControlTrial:
    failed: bool
    final_error: float
    saturations: int
    skips: int
    trace: np.ndarray | None = None


@dataclass
class P100Estimate:
    rows: list

    def table(self) -> list:
        return self.rows

    def p100(self, snr_db, n_sensors) -> float:
        for row in self.rows:
            if row["snr_db"] == snr_db and row["n_sensors"] == n_sensors:
                return row["p100"]
        raise KeyError((snr_db, n_sensors))


def trace_name(cfg: ExperimentConfig, snr_db, n, trial) -> str:
    if len(cfg.snr_db) * len(cfg.n_sensors) == 1:
        return f"trace_{trial}"
    return f"trace_{trial}_snr{snr_db:g}_n{n}"


def trace_columns(n_x: int) -> list:
    return (
        ["t"]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"xhat{i + 1}" for i in range(n_x)]
        + ["err_norm", "saturations", "empty_intersections"]
    )


def control_trial(cfg: ExperimentConfig, code: LiftedCode, pc: plant.PlantConfig, ch: channel.ChannelConfig, trial: int, keep_trace: bool):
    rng = trial_rng(cfg.seed, trial)
    n = ch.n_sensors
    q = pc.quantizer
    T = cfg.horizon
    if code.k != pc.bits:
        raise HarnessError(f"code carries {code.k} bits per step but the quantizer needs {pc.bits}")
    encoders = [Encoder(code) for _ in range(n)]
    decoders = [Decoder(code, cfg.iterations, early_stop=cfg.early_stop) for _ in range(n)]
    obs = plant.IntervalObserver(pc)
    state = plant.initial_state(pc, rng)
    trace = np.zeros((T, 4 + 2 * pc.n_x)) if keep_trace else None
    sat_total = 0
    err = 0.0
    skips = 0
    for t in range(T):
        sym = np.empty((n, code.n))
        for i in range(n):
            v = rng.uniform(-pc.delta, pc.delta, pc.n_y)
            bits, sat = plant.quantize(pc, plant.measure(pc, state.x, v))
            sat_total += sat
            sym[i] = channel.modulate(encoders[i].step(bits), ch.symbol_energy, n)
        real = channel.draw_realization(ch, code.n, rng, noiseless=cfg.noiseless)
        llr = channel.demodulate_llr(channel.transmit(sym, ch, real), real, ch)
        y_hat = np.empty((n, t + 1, pc.n_y))
        for i in range(n):
            decoders[i].push(llr[i])
            blocks = decoders[i].iterate().blocks
            y_hat[i] = q.center(q.from_bits(blocks).reshape(t + 1, pc.n_y))
        x_hat, _, skips = obs.update(y_hat, state.u_history)
        state.x_hat = x_hat
        err = float(np.linalg.norm(state.x - x_hat))
        if keep_trace:
            trace[t] = np.concatenate([[t + 1], state.x, x_hat, [err, sat_total, skips]])
        if t == T - 1:
            break
        u = plant.control_command(x_hat, pc.K)
        plant.step_plant(pc, state, u, rng.uniform(-pc.omega, pc.omega, pc.n_x))
    failed = state.diverged or not (err <= pc.fail_threshold)
    return ControlTrial(failed=failed, final_error=err, saturations=sat_total, skips=skips, trace=trace)


def _control_batch(args, trials):
    cfg, code, pc, ch = args
    return [control_trial(cfg, code, pc, ch, trial, trial < cfg.traces) for trial in trials]


def run_control(cfg: ExperimentConfig, code: LiftedCode | None = None):
    """Closed-loop failure probability per (SNR, sensor count); returns the estimate and kept traces."""
    if cfg.scenario not in ("control_awgn", "control_fading"):
        raise HarnessError("run_control needs a control scenario")
    code = code or cfg.build_code()
    pc = cfg.plant_config()
    rows = []
    traces = {}
    for snr_db in cfg.snr_db:
        for n in cfg.n_sensors:
            ch = channel.ChannelConfig.from_db(cfg.channel_mode, snr_db, n, cfg.fading)
            res = _run_batches(_control_batch, (cfg, code, pc, ch), cfg.trials, cfg.workers)
            failures = sum(r.failed for r in res)
            lo, hi = wilson_interval(failures, len(res))
            rows.append(
                {
                    "snr_db": snr_db,
                    "n_sensors": n,
                    "trials": len(res),
                    "failures": int(failures),
                    "p100": failures / len(res),
                    "wilson_lo": float(lo),
                    "wilson_hi": float(hi),
                }
            )
            for i, r in enumerate(res):
                if r.trace is not None:
                    traces[(snr_db, n, i)] = r.trace
    return P100Estimate(rows), traces


def log_slope(snr_db, p100):
    """Least-squares slope of ``log10 p100`` against SNR in dB (zeros are not allowed)."""
    p100 = np.asarray(p100, dtype=float)
    if (p100 <= 0).any():
        raise InsufficientEvents("p100 has zero entries; cannot fit a log slope")
    return float(np.polyfit(np.asarray(snr_db, float), np.log10(p100), 1)[0])


# ---------------------------------------------------------------- output


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def petd_rows(est: PetdEstimate) -> list:
    t_window = f"{est.window[0]}-{est.window[1]}"
    return [
        (t_window, int(d), int(k), est.samples, float(p), float(b))
        for d, k, p, b in zip(est.delays, est.events, est.pe, est.pe_bound)
    ]


PETD_HEADER = ["t_window", "d", "events", "trials", "pe", "pe_bound"]
P100_HEADER = ["snr_db", "n_sensors", "trials", "failures", "p100", "wilson_lo", "wilson_hi"]


def emit(cfg: ExperimentConfig, results, path=None) -> dict:
    """Write CSVs, a JSON sidecar with the full config and, optionally, figures."""
    out = Path(path or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    meta = {"version": __version__, "config": cfg.to_dict(), "seeding": "SeedSequence([seed, trial])"}
    if cfg.scenario == "petd_awgn":
        estimates = results
        rows = []
        summary = []
        for est in estimates:
            rows += [(est.snr_db,) + r for r in petd_rows(est)]
            entry = {"snr_db": est.snr_db}
            try:
                fit = est.fit(cfg.d_range, cfg.min_events)
                entry.update(beta_hat=fit.beta, stderr=fit.stderr, delays=fit.delays.tolist())
            except InsufficientEvents as exc:
                entry["fit_error"] = str(exc)
            summary.append(entry)
        files["petd"] = out / "petd.csv"
        write_csv(files["petd"], ["snr_db"] + PETD_HEADER, rows)
        meta["summary"] = summary
    else:
        est, traces = results
        files["p100"] = out / "p100.csv"
        write_csv(files["p100"], P100_HEADER, [[r[h] for h in P100_HEADER] for r in est.rows])
        n_x = cfg.plant_config().n_x
        for (snr_db, n, i), tr in sorted(traces.items()):
            name = out / (trace_name(cfg, snr_db, n, i) + ".csv")
            write_csv(name, trace_columns(n_x), [[int(r[0])] + [float(v) for v in r[1:-2]] + [int(r[-2]), int(r[-1])] for r in tr])
            files[name.stem] = name
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=_json_default)
    files["meta"] = out / "meta.json"
    if cfg.plot:
        from . import plots

        files.update(plots.render(cfg, results, out))
    return files


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run(cfg: ExperimentConfig):
    if cfg.scenario == "petd_awgn":
        code = cfg.build_code()
        return [run_petd(cfg, s, code) for s in cfg.snr_db]
    return run_control(cfg)


def replay(meta_path, output=None, workers=None) -> dict:
    """Re-run an experiment from its JSON sidecar."""
    with open(meta_path) as fh:
        meta = json.load(fh)
    cfg = ExperimentConfig.from_dict(meta["config"], output=output, workers=workers)
    return emit(cfg, run(cfg))
