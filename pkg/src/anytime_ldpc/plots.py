"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def petd_figure(estimates, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for est in estimates:
        nz = est.events > 0
        lo, hi = est.wilson()
        p = est.pe
        line = ax.errorbar(
            est.delays[nz], p[nz], yerr=np.vstack([p[nz] - lo[nz], hi[nz] - p[nz]]), marker="o", ms=3, capsize=2,
            label=f"{est.snr_db:g} dB simulated",
        )
        ok = np.isfinite(est.pe_bound) & (est.pe_bound > 1e-300)
        dmax = max(int(est.delays[nz].max()) + 3 if nz.any() else 10, 10)
        sel = ok & (est.delays <= dmax)
        ax.plot(est.delays[sel], est.pe_bound[sel], "--", color=line[0].get_color(), label=f"{est.snr_db:g} dB bound")
    ax.set_yscale("log")
    ax.set_xlabel("delay d")
    ax.set_ylabel("P_e(t, d)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def p100_figure(rows, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for n in sorted({r["n_sensors"] for r in rows}):
        sub = sorted((r for r in rows if r["n_sensors"] == n), key=lambda r: r["snr_db"])
        x = np.array([r["snr_db"] for r in sub])
        p = np.array([r["p100"] for r in sub])
        lo = np.array([r["wilson_lo"] for r in sub])
        hi = np.array([r["wilson_hi"] for r in sub])
        ax.errorbar(x, np.maximum(p, 1e-5), yerr=np.vstack([np.maximum(p - lo, 0), hi - p]), marker="o", capsize=2, label=f"N = {n}")
    ax.set_yscale("log")
    ax.set_xlabel("average SNR (dB)")
    ax.set_ylabel("p_100")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def trace_figure(trace, path, title="") -> Path:
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    t = trace[:, 0]
    n_x = (trace.shape[1] - 4) // 2
    for i in range(n_x):
        line = ax0.plot(t, trace[:, 1 + i], label=f"x{i + 1}")
        ax0.plot(t, trace[:, 1 + n_x + i], ":", color=line[0].get_color())
    ax0.set_ylabel("state (dotted: estimate)")
    ax0.legend(fontsize=8, ncol=n_x)
    ax1.semilogy(t, np.maximum(trace[:, 1 + 2 * n_x], 1e-6))
    ax1.set_xlabel("t")
    ax1.set_ylabel("|x - x_hat|")
    if title:
        ax0.set_title(title)
    return _save(fig, path)


def analyze_figure(reports, path) -> Path:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    snr = [r.snr_db for r in reports]
    ax0.plot(snr, [r.beta_bar for r in reports], "o-", label="fitted")
    ax0.plot(snr, [r.beta_closed_form for r in reports], "k--", label="gamma rho / 2")
    th = next((r.threshold for r in reports if r.threshold is not None), None)
    if th is not None:
        ax0.axhline(th.required_beta, color="r", lw=0.8, label="2 ln rho(|A|)")
    ax0.set_xlabel("SNR (dB)")
    ax0.set_ylabel("exponent bound")
    ax0.set_yscale("log")
    ax0.legend(fontsize=8)
    for r in reports:
        d, b = r.bound_curve(1)
        keep = (b > 1e-30) & (d <= 40)
        ax1.semilogy(d[keep], b[keep], label=f"{r.snr_db:g} dB")
    ax1.set_xlabel("delay d")
    ax1.set_ylabel("P_e bound")
    ax1.legend(fontsize=8)
    return _save(fig, path)


def render(cfg, results, out) -> dict:
    out = Path(out)
    if cfg.scenario == "petd_awgn":
        return {"petd_png": petd_figure(results, out / "petd.png")}
    est, traces = results
    files = {"p100_png": p100_figure(est.rows, out / "p100.png")}
    from .harness import trace_name

    for (snr_db, n, i), tr in sorted(traces.items()):
        name = trace_name(cfg, snr_db, n, i)
        files[name + "_png"] = trace_figure(tr, out / f"{name}.png", f"{snr_db:g} dB, N = {n}, trial {i}")
    return files
