"""PNG figures rendered from the CSV files the CLI writes.

matplotlib is imported lazily so the rest of the package works without it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import RisLocateError
from .harness import read_csv


class MissingPlotting(RisLocateError):
    code = "missing_matplotlib"


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise MissingPlotting("figures need matplotlib; install the 'figures' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _floats(table, name):
    return np.array([float(v) if v != "" else np.nan for v in table.column(name)])


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def _ecdf(ax, values, label):
    v = np.sort(values[np.isfinite(values)])
    if v.size:
        ax.step(v, np.arange(1, v.size + 1) / v.size, where="post", label=label)


def gain_cdf(csv_path: Path) -> Path:
    plt = _pyplot()
    table = read_csv(csv_path)
    methods = np.array(table.column("method"))
    gains = _floats(table, "gain_db")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in ("FPB", "CPP"):
        _ecdf(ax, gains[methods == method], method)
    ax.set_xlabel("beamforming gain [dB]")
    ax.set_ylabel("CDF")
    ax.legend()
    ax.grid(alpha=0.3)
    out = _save(fig, csv_path.with_suffix(".png"))
    plt.close(fig)
    return out


def timing(csv_path: Path) -> Path:
    plt = _pyplot()
    table = read_csv(csv_path)
    methods = np.array(table.column("method"))
    sizes = _floats(table, "M")
    times = _floats(table, "wallclock_us")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in ("FPB", "CPP"):
        sel = methods == method
        xs = np.unique(sizes[sel])
        ys = [np.nanmean(times[sel & (sizes == x)]) for x in xs]
        ax.loglog(xs, ys, "o-", label=method)
    ax.set_xlabel("elements per segment")
    ax.set_ylabel("solve time [us]")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    out = _save(fig, csv_path.with_suffix(".png"))
    plt.close(fig)
    return out


def crlb_heatmap(csv_path: Path) -> Path:
    plt = _pyplot()
    table = read_csv(csv_path)
    x, y, bound = _floats(table, "x_m"), _floats(table, "y_m"), _floats(table, "crlb_m")
    xs, ys = np.unique(x), np.unique(y)
    # several SNRs share the grid; show the first block
    n = xs.size * ys.size
    img = np.log10(bound[:n]).reshape(ys.size, xs.size)
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(xs, ys, img, shading="nearest")
    fig.colorbar(mesh, ax=ax, label="log10 CRLB [m]")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    out = _save(fig, csv_path.with_suffix(".png"))
    plt.close(fig)
    return out


def error_cdf(csv_path: Path) -> Path:
    plt = _pyplot()
    table = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    _ecdf(ax, _floats(table, "coarse_err_m"), "coarse")
    _ecdf(ax, _floats(table, "fine_err_m"), "fine")
    ax.set_xscale("log")
    ax.set_xlabel("position error [m]")
    ax.set_ylabel("CDF")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    out = _save(fig, csv_path.with_suffix(".png"))
    plt.close(fig)
    return out


def rmse_vs_snr(csv_path: Path) -> Path:
    plt = _pyplot()
    table = read_csv(csv_path)
    snr, err, bound = _floats(table, "snr_db"), _floats(table, "fine_err_m"), _floats(table, "crlb_m")
    levels = np.unique(snr)
    rmse = [np.sqrt(np.nanmean(err[snr == s] ** 2)) for s in levels]
    rms_bound = [np.sqrt(np.nanmean(bound[snr == s] ** 2)) for s in levels]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(levels, rmse, "o-", label="RMSE")
    ax.semilogy(levels, rms_bound, "--", label="CRLB")
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("position error [m]")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    out = _save(fig, csv_path.with_suffix(".png"))
    plt.close(fig)
    return out


def render(command: str, written) -> list[Path]:
    """Figures for the CSV files a CLI command produced; returns the PNG paths."""
    figures = []
    for path in map(Path, written):
        if path.suffix != ".csv" or path.stem.endswith("_summary"):
            continue
        columns = read_csv(path).columns
        if command == "bench":
            figures.append(timing(path) if path.stem.endswith("timing") else gain_cdf(path))
        elif command == "crlb-map":
            figures.append(crlb_heatmap(path))
        elif command == "locate":
            figures.append(rmse_vs_snr(path) if "crlb_m" in columns else error_cdf(path))
    return figures
