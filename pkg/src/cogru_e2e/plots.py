"""PNG figures rendered from the CSV tables the CLI writes.

Each function reads one table and saves one figure next to it. Figures are a
convenience; the CSV files stay the record.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .signal import read_constellation  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}


def _read(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_history(csv_path, png_path=None):
    """Surrogate MSE and BER against global epoch, one colour per phase."""
    rows = _read(csv_path)
    png_path = png_path or Path(csv_path).with_suffix(".png")
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2)
        for phase in ("I", "II", "III"):
            sel = [r for r in rows if r["phase"] == phase]
            if not sel:
                continue
            ep = [int(r["epoch"]) for r in sel]
            ax0.semilogy(ep, [float(r["mse_surrogate"]) for r in sel], label=f"Phase {phase}")
            ax1.semilogy(ep, [float(r["ber"]) for r in sel], label=f"Phase {phase}")
        ax0.set(xlabel="epoch", ylabel="surrogate MSE")
        ax1.set(xlabel="epoch", ylabel="BER")
        ax1.legend()
        return _save(fig, png_path)


def plot_sweep(csv_path, png_path=None):
    """GMI and Q^2 against launch power, one line per (system, distance)."""
    rows = _read(csv_path)
    png_path = png_path or Path(csv_path).with_suffix(".png")
    keys = sorted({(r["system"], r["distance_km"]) for r in rows})
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2)
        for system, dist in keys:
            sel = sorted((float(r["p_dbm"]), float(r["gmi_bits_per_sym"]), float(r["q2_db"]))
                         for r in rows if (r["system"], r["distance_km"]) == (system, dist))
            p, gmi, q2 = map(np.array, zip(*sel))
            label = f"{system}, {float(dist):g} km"
            ax0.plot(p, gmi, "o-", label=label)
            ax1.plot(p, q2, "o-", label=label)
        ax0.set(xlabel="launch power (dBm)", ylabel="GMI (bits/sym)")
        ax1.set(xlabel="launch power (dBm)", ylabel="Q$^2$ (dB)")
        ax0.legend()
        return _save(fig, png_path)


def plot_constellation(txt_path, png_path=None):
    """Scatter of a constellation dump, points annotated with their labels."""
    const = read_constellation(txt_path)
    png_path = png_path or Path(txt_path).with_suffix(".png")
    re, im = const.points.real, const.points.imag
    labels = ["".join(map(str, b)) for b in const.labels]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        ax.scatter(re, im, s=12)
        if len(re) <= 64:
            for x, y, lab in zip(re, im, labels):
                ax.annotate(lab, (x, y), fontsize=5, xytext=(2, 2), textcoords="offset points")
        ax.set(xlabel="I", ylabel="Q", aspect="equal")
        return _save(fig, png_path)


def plot_benchmark(csv_path, png_path=None):
    """Median time per model and direction against window length."""
    rows = _read(csv_path)
    png_path = png_path or Path(csv_path).with_suffix(".png")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for model in ("cogru", "bigru"):
            for direction, style in (("forward", "o-"), ("backward", "s--")):
                sel = sorted((int(r["window"]), float(r["median_s"])) for r in rows
                             if r["model"] == model and r["direction"] == direction)
                if sel:
                    w, t = zip(*sel)
                    ax.semilogy(w, t, style, label=f"{model} {direction}")
        ax.set(xlabel="window 2L+1 (symbols)", ylabel="median time (s)")
        ax.legend()
        return _save(fig, png_path)
