"""Static SVG figures: error histograms, loss curves and gamma sweeps."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

BIN_PX = 5.0

# fixed ids and no timestamp so re-running a command rewrites identical bytes
plt.rcParams["svg.hashsalt"] = "msif"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def error_bins(values, width=BIN_PX):
    values = np.asarray(values, dtype=np.float64)
    top = max(width, np.ceil((values.max() + 1e-12) / width) * width) if values.size else width
    return np.arange(0.0, top + width, width)


def histogram_svg(path, reports):
    """Side-by-side ADE and FDE histograms (percent of samples per 5 px bin)."""
    if not reports or not any(r.per_sample for r in reports):
        raise ValueError("no per-sample errors to plot")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for col, name in enumerate(("ADE", "FDE")):
        vals = [np.array([s[col] for s in r.per_sample]) for r in reports]
        bins = error_bins(np.concatenate(vals))
        for r, v in zip(reports, vals):
            weights = np.full(v.shape, 100.0 / max(len(v), 1))
            axes[col].hist(v, bins=bins, weights=weights, alpha=0.6, label=r.label or r.config_hash)
        axes[col].set_xlabel(f"{name} (px)")
        axes[col].set_ylabel("samples (%)")
    if len(reports) > 1:
        axes[1].legend()
    fig.tight_layout()
    return _save(fig, path)


def loss_curve_svg(path, histories):
    """``histories`` maps a label to rows (epoch, train_nll, val_nll)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in histories.items():
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
        ax.plot(rows[:, 0], rows[:, 1], label=f"{label} train")
        ax.plot(rows[:, 0], rows[:, 2], "--", label=f"{label} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NLL")
    if histories:
        ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def sweep_svg(path, gammas, ade, fde):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(gammas, ade, "o-", label="ADE")
    ax.plot(gammas, fde, "s-", label="FDE")
    ax.set_xlabel("gamma")
    ax.set_ylabel("error (px)")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
