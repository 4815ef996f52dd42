"""Report rendering: key=value records, delimited tables, and figures.

Analysis commands emit three artifacts side by side: a ``.txt`` file of
``key=value`` lines, a delimited table, and a PNG figure.  Matplotlib is
imported lazily so non-reporting code paths never pay for it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = [
    "format_records",
    "write_records",
    "write_table",
    "render_vrr_figure",
    "render_training_figure",
    "render_reconstruction_figure",
]


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            return str(value)
        return f"{value:.6g}"
    return str(value)


def format_records(records: dict) -> str:
    """One ``key=value`` line per entry, in insertion order."""
    return "".join(f"{key}={_format_value(val)}\n" for key, val in records.items())


def write_records(path, records: dict) -> None:
    Path(path).write_text(format_records(records))


def write_table(path, header: list[str], rows: list[list], sep: str = "\t") -> None:
    """Delimiter-separated table with a header row."""
    lines = [sep.join(header)]
    for row in rows:
        lines.append(sep.join(_format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_vrr_figure(report, path) -> None:
    """Bar chart of VRR per assignment scheme, error bar on the random runs."""
    plt = _pyplot()
    values = report.scheme_values()
    names = list(values)
    heights = [100.0 * values[n] for n in names]
    errors = [100.0 * report.random_spread if n == "random" else 0.0 for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, heights, yerr=errors, capsize=4, color="#4878a8")
    ax.set_ylabel("VRR (%)")
    ax.set_title(f"Variance reduction by assignment scheme ({report.total_patches} patches)")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_figure(metrics, path, title: str = "training") -> None:
    """Distortion and usage curves over epochs."""
    plt = _pyplot()
    epochs = [m.epoch for m in metrics]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(epochs, [m.distortion for m in metrics], marker="o", color="#4878a8")
    ax1.set_ylabel("distortion")
    ax1.set_title(title)
    ax2.plot(epochs, [m.usage_percent for m in metrics], marker="o", color="#6a9a48")
    ax2.set_ylabel("usage (%)")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 105)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_reconstruction_figure(orig, recon, path, mse: float, psnr: float) -> None:
    """Original, reconstruction, and absolute-error panels."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(10, 4))
    titles = ["original", f"reconstruction\nmse={mse:.2e} psnr={psnr:.1f} dB", "abs error"]
    panels = [
        orig.data,
        recon.data,
        np.abs(orig.data.astype(np.float64) - recon.data.astype(np.float64)),
    ]
    for ax, panel, title in zip(axes, panels, titles):
        if title == "abs error":
            shading = ax.imshow(panel, cmap="magma")
            fig.colorbar(shading, ax=ax, fraction=0.046)
        else:
            ax.imshow(panel, cmap="gray", vmin=0.0, vmax=1.0)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
