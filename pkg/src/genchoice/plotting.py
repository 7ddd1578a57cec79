"""Report figures. Everything renders off-screen to PNG files."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

# no software/version stamp so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def learning_curve(history, path):
    """Train and validation NLL per epoch from a history frame."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(history["epoch"], history["train_nll"], marker=".", label="train")
        ax.plot(history["epoch"], history["valid_nll"], marker=".", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("NLL (nats / record)")
        ax.legend()
        return _save(fig, path)


def mode_share(alternatives, observed, predicted, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(alternatives))
        ax.bar(x - 0.2, observed, width=0.4, label="observed")
        ax.bar(x + 0.2, predicted, width=0.4, label="predicted")
        ax.set_xticks(x)
        ax.set_xticklabels(alternatives)
        ax.set_ylabel("share")
        ax.legend()
        return _save(fig, path)


def latent_weights(activation, path):
    """Mean and standard deviation of the W' column of each alternative."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(activation))
        ax.errorbar(x, activation["wp_mean"], yerr=activation["wp_std"], fmt="o", capsize=3)
        ax.axhline(0.0, color="0.5", lw=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels(activation["alternative"])
        ax.set_ylabel("W' mean (std)")
        return _save(fig, path)


def maxent_by_size(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for row, values in zip(report.rows, report.values):
            ax.plot(report.sizes, values, marker="o", lw=1, label=row)
        ax.plot(report.sizes, report.mean, color="k", lw=2, label="mean")
        ax.set_xlabel("latent variables S")
        ax.set_ylabel("maxent")
        ax.legend(ncol=2)
        return _save(fig, path)


def beta_by_size(result, path):
    """Relative beta per column and alternative across latent sizes."""
    with plt.rc_context(STYLE):
        n_alt = len(result.alternatives) - 1
        fig, axes = plt.subplots(1, max(n_alt, 1), sharey=True, squeeze=False,
                                 figsize=(3.0 * max(n_alt, 1), 3.4))
        for j, ax in enumerate(axes[0]):
            for m, col in enumerate(result.columns):
                ax.plot(result.sizes, result.beta[:, m, j + 1], marker=".", lw=1, label=col)
            ax.set_title(f"{result.alternatives[j + 1]} vs {result.alternatives[0]}")
            ax.set_xlabel("latent variables S")
        axes[0][0].set_ylabel("beta")
        axes[0][-1].legend(fontsize=6)
        return _save(fig, path)


def histogram_pair(fit, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(fit.labels))
        ax.bar(x - 0.2, fit.real_freq, width=0.4, label="real")
        ax.bar(x + 0.2, fit.synth_freq, width=0.4, label="synthetic")
        step = max(1, len(x) // 10)
        ax.set_xticks(x[::step])
        ax.set_xticklabels([fit.labels[i] for i in x[::step]], rotation=30, ha="right")
        ax.set_title(f"{fit.variable}: adjusted R2 = {fit.adjusted_r2:.3f}")
        ax.set_ylabel("relative frequency")
        ax.legend()
        return _save(fig, path)
