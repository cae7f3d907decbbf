"""Report figures rendered from the CSV outputs (matplotlib, Agg backend)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_error_vs_stations(summary_csv: Path, out: Path) -> Path:
    rows = _read(summary_csv)
    n = [int(r["bs_count"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(n, [float(r["mean_error_m"]) for r in rows], "o-", label="mean error")
    ax.plot(n, [float(r["rmse_m"]) for r in rows], "s--", label="RMSE")
    ax.plot(n, [float(r["sqrt_crlb_m"]) for r in rows], "k:", label="sqrt(CRLB)")
    ax.set_yscale("log")
    ax.set_xlabel("active stations")
    ax.set_ylabel("localization error (m)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, out)


def plot_error_cdf(cdf_csv: Path, out: Path) -> Path:
    rows = _read(cdf_csv)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n in sorted({int(r["bs_count"]) for r in rows}):
        pts = [(float(r["error_m"]), float(r["cdf"])) for r in rows if int(r["bs_count"]) == n]
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", label=f"{n} BS")
    ax.set_xlabel("error (m)")
    ax.set_ylabel("CDF")
    ax.legend(fontsize="small")
    ax.grid(True, alpha=0.3)
    return _save(fig, out)


def plot_crlb_map(crlb_csv: Path, out: Path) -> Path:
    rows = _read(crlb_csv)
    xs = sorted({float(r["x_m"]) for r in rows})
    ys = sorted({float(r["y_m"]) for r in rows})
    grid = np.full((len(ys), len(xs)), np.nan)
    ix = {x: i for i, x in enumerate(xs)}
    iy = {y: i for i, y in enumerate(ys)}
    for r in rows:
        grid[iy[float(r["y_m"])], ix[float(r["x_m"])]] = float(r["crlb_m2"])
    fig, ax = plt.subplots(figsize=(4.5, 4))
    with np.errstate(invalid="ignore", divide="ignore"):
        im = ax.imshow(np.log10(grid), origin="lower", extent=(xs[0], xs[-1], ys[0], ys[-1]), cmap="viridis")
    fig.colorbar(im, ax=ax, label="log10 CRLB (m^2)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    return _save(fig, out)


def plot_training_curve(curve_csv: Path, out: Path, window: int = 100) -> Path:
    rows = _read(curve_csv)
    r = np.array([float(x["reward"]) for x in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(r, lw=0.5, alpha=0.4, label="episode")
    if len(r) >= window:
        ma = np.convolve(r, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(r)), ma, label=f"{window}-episode mean")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward of final state")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out)


def plot_grid(pgm: Path, out: Path, clusters_csv: Path | None = None) -> Path:
    from .fusion import read_grid_pgm

    field, spec = read_grid_pgm(pgm)
    x0, y0 = spec.origin
    ext = (x0, x0 + spec.width_cells * spec.cell_size, y0, y0 + spec.height_cells * spec.cell_size)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(field, origin="lower", extent=ext, cmap="magma")
    if clusters_csv is not None and clusters_csv.exists():
        for r in _read(clusters_csv):
            ax.plot(float(r["x_m"]), float(r["y_m"]), "c+", ms=10)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    return _save(fig, out)


REPORTS = [
    ("summary.csv", "error_vs_stations.png", plot_error_vs_stations),
    ("cdf.csv", "error_cdf.png", plot_error_cdf),
    ("crlb.csv", "crlb_map.png", plot_crlb_map),
    ("training_curve.csv", "training_curve.png", plot_training_curve),
]


def render_report(input_dir: Path, output_dir: Path) -> list[Path]:
    """Render every figure whose source file exists in ``input_dir``."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    made = []
    for src, dst, fn in REPORTS:
        if (input_dir / src).exists():
            made.append(fn(input_dir / src, output_dir / dst))
    if (input_dir / "grid.pgm").exists():
        made.append(plot_grid(input_dir / "grid.pgm", output_dir / "grid.png", input_dir / "clusters.csv"))
    return made
