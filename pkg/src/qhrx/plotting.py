"""PNG figures rendered next to CLI outputs when ``--plot`` is given.

Figures are a convenience view of the CSV data and carry no API guarantee.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    _pyplot().close(fig)
    return path


def plot_pic_scan(vbs_rows: list[dict], lo_rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    by_ch = defaultdict(list)
    for r in vbs_rows:
        by_ch[r["channel"]].append(r)
    for ch, rows in sorted(by_ch.items()):
        v = np.array([r["voltage_v"] for r in rows])
        ax1.plot(v, [r["cmrr_db"] for r in rows], ".", ms=3, label=f"vBS{ch}")
        ax1.plot(v, [r["model_db"] for r in rows], "-", lw=1)
    ax1.set_xlabel("vBS voltage (V)")
    ax1.set_ylabel("CMRR (dB)")
    ax1.legend()
    ax2.plot([r["voltage_v"] for r in lo_rows], [r["delta_theta_deg"] for r in lo_rows])
    ax2.set_xlabel("R3 voltage (V)")
    ax2.set_ylabel("LO phase difference (deg)")
    return _save(fig, path)


def plot_calibration(powers, variances, linear_points: int, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    p = np.asarray(powers) * 1e3
    var = np.asarray(variances)
    for c, lab in enumerate(("x", "p")):
        ax.plot(p, var[:, c], "o", ms=3, label=f"channel {lab}")
    ax.axvline(p[linear_points - 1], color="k", ls="--", lw=0.8)
    ax.set_xlabel("LO power (mW)")
    ax.set_ylabel("band variance (V$^2$)")
    ax.legend()
    return _save(fig, path)


def plot_cmrr_sweep(rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["cmrr_db"] for r in rows], [r["h_min_conditional_bits"] for r in rows], "o-")
    ax.set_xlabel("CMRR (dB)")
    ax.set_ylabel("conditional min-entropy (bit)")
    return _save(fig, path)


def plot_skr_curve(rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    by_c = defaultdict(list)
    for r in rows:
        by_c[r["constellation"]].append(r)
    for name, rs in by_c.items():
        y = np.array([r["skr_sym"] for r in rs], dtype=float)
        ax.semilogy([-r["T_db"] for r in rs], np.where(y > 0, y, np.nan), label=name)
    ax.set_xlabel("channel loss (dB)")
    ax.set_ylabel("SKR (bit/symbol)")
    ax.legend()
    return _save(fig, path)


def plot_drift(rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    t = np.array([r["time_s"] for r in rows]) / 3600
    ax1.plot(t, [r["cmrr1_db"] for r in rows], lw=0.8, label="vBS1")
    ax1.plot(t, [r["cmrr2_db"] for r in rows], lw=0.8, label="vBS2")
    ax1.set_ylabel("CMRR (dB)")
    ax1.legend()
    ax2.plot(t, [r["delta_theta_lo_deg"] for r in rows], lw=0.8)
    ax2.set_xlabel("time (h)")
    ax2.set_ylabel("LO phase (deg)")
    return _save(fig, path)


def plot_heatmap(rows: list[dict], path: Path) -> Path:
    plt = _pyplot()
    files = list(dict.fromkeys(r["file"] for r in rows))
    tests = list(dict.fromkeys(r["test"] for r in rows))
    grid = np.full((len(tests), len(files)), np.nan)
    for r in rows:
        grid[tests.index(r["test"]), files.index(r["file"])] = r["pass_ratio"]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(files) + 3), 0.35 * len(tests) + 1.5))
    im = ax.imshow(grid, aspect="auto", vmin=0.97, vmax=1.0, cmap="viridis")
    ax.set_yticks(range(len(tests)), tests)
    ax.set_xticks(range(len(files)), files, rotation=45, ha="right")
    fig.colorbar(im, ax=ax, label="pass ratio")
    return _save(fig, path)
