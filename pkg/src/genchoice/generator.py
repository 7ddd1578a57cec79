"""Synthetic records and clamped imputation by blocked Gibbs sampling."""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import Dataset
from .energy import Layout, sample_latent, sample_observed


def generate(params, schema, count, burn_in=1000, thin=10, rng=None, init=None, chains=None):
    """Draw ``count`` synthetic records from the fitted joint model.

    Parallel chains (``chains``, default ``min(count, 1000)``) start from
    records of ``init`` when given, otherwise from a uniform latent draw. After
    ``burn_in`` sweeps each chain contributes one record every ``thin`` sweeps.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if burn_in < 0 or thin < 1:
        raise ValueError("burn_in must be >= 0 and thin >= 1")
    rng = np.random.default_rng() if rng is None else rng
    layout = Layout(schema)
    n_chains = min(count, chains or 1000)
    if init is not None and len(init):
        idx = rng.choice(len(init), size=n_chains, replace=len(init) < n_chains)
        X, Y = init.X[idx].copy(), init.Y[idx].copy()
    else:
        X = np.zeros((n_chains, schema.encoded_width))
        Y = np.zeros((n_chains, schema.n_alternatives))
        s = (rng.random((n_chains, params.H)) < 0.5).astype(float)
        X, Y = sample_observed(s, X, Y, params, layout, rng)
    for _ in range(burn_in):
        s, _ = sample_latent(X, Y, params, rng)
        X, Y = sample_observed(s, X, Y, params, layout, rng)
    rounds = -(-count // n_chains)
    xs, ys = [], []
    for _ in range(rounds):
        for _ in range(thin):
            s, _ = sample_latent(X, Y, params, rng)
            X, Y = sample_observed(s, X, Y, params, layout, rng)
        xs.append(X)
        ys.append(Y)
    Xs = np.concatenate(xs)[:count]
    Ys = np.concatenate(ys)[:count]
    ids = np.asarray([f"synthetic-{i}" for i in range(count)])
    return Dataset(Xs, Ys, schema, ids)


def impute(x, y, targets, params, schema, steps=100, rng=None, draws=None):
    """Resample the ``targets`` variables with every other coordinate clamped.

    ``x`` and ``y`` are the encoded record; target entries only need to be
    finite placeholders. The choice variable may be a target. Returns the
    imputed ``(x, y)``, or stacked arrays of shape (draws, .) when ``draws`` is
    given (independent chains, one posterior draw each).
    """
    targets = set([targets] if isinstance(targets, str) else targets)
    if not targets:
        raise ValueError("targets must be non-empty")
    names = {v.name for v in schema.variables}
    unknown = targets - names
    if unknown:
        raise ValueError(f"unknown variable(s): {sorted(unknown)}")
    if targets == names:
        raise ValueError("every variable is a target; use generate() instead")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("record must be finite (use placeholders for target values)")
    rng = np.random.default_rng() if rng is None else rng
    layout = Layout(schema)
    free = layout.subset(targets)
    sample_choice = schema.choice.name in targets
    n = 1 if draws is None else int(draws)
    X = np.tile(x, (n, 1))
    Y = np.tile(y, (n, 1))
    for _ in range(steps):
        s, _ = sample_latent(X, Y, params, rng)
        X, Y = sample_observed(s, X, Y, params, layout, rng, free=free, sample_choice=sample_choice)
    if draws is None:
        return X[0], Y[0]
    return X, Y


def adjusted_r2(real, synth):
    """Adjusted squared correlation between two frequency vectors (one predictor)."""
    real = np.asarray(real, dtype=float)
    synth = np.asarray(synth, dtype=float)
    n = real.size
    if np.ptp(real) == 0 or np.ptp(synth) == 0:
        r2 = 1.0 if np.array_equal(real, synth) else 0.0
    else:
        r2 = float(np.corrcoef(real, synth)[0, 1] ** 2)
    if n <= 2:
        return r2, r2
    return 1.0 - (1.0 - r2) * (n - 1) / (n - 2), r2


@dataclass
class DistributionFit:
    variable: str
    adjusted_r2: float
    r2: float
    labels: list
    real_freq: np.ndarray
    synth_freq: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"bin": self.labels, "real_freq": self.real_freq, "synth_freq": self.synth_freq})


def _variable_values(dataset, variable):
    """Discrete codes or scalar values used for histogramming one variable."""
    schema = dataset.schema
    spec = schema.variable(variable)
    if spec.role == "choice":
        return "discrete", dataset.choices, list(spec.levels)
    b = schema.block(variable)
    block = dataset.X[:, b.slice]
    if spec.kind == "categorical":
        return "discrete", np.argmax(block, axis=1), list(spec.levels)
    if spec.kind == "binary":
        return "discrete", block[:, 0].astype(int), ["0", "1"]
    if spec.kind == "cyclical":
        angle = np.mod(np.arctan2(block[:, 0], block[:, 1]), 2.0 * np.pi)
        return "cyclical", angle / (2.0 * np.pi) * spec.period, spec.period
    return "continuous", block[:, 0], None


def distribution_report(real, synthetic, variable, bins=20):
    """Histogram both datasets for ``variable`` and score the match by adjusted R^2.

    Categorical, binary and choice variables get one bin per level; continuous
    variables use equal-width bins over the pooled range in encoded (z-scored
    log) units; cyclical variables use equal-width bins over one period.
    """
    if len(real) == 0 or len(synthetic) == 0:
        raise ValueError("distribution_report needs non-empty datasets")
    if real.schema.hash != synthetic.schema.hash:
        raise ValueError("datasets use different schemas")
    kind, r_vals, extra = _variable_values(real, variable)
    _, s_vals, _ = _variable_values(synthetic, variable)
    if kind == "discrete":
        k = len(extra)
        real_freq = np.bincount(r_vals, minlength=k) / len(r_vals)
        synth_freq = np.bincount(s_vals, minlength=k) / len(s_vals)
        labels = extra
    else:
        if kind == "cyclical":
            edges = np.linspace(0.0, extra, bins + 1)
        else:
            lo = min(r_vals.min(), s_vals.min())
            hi = max(r_vals.max(), s_vals.max())
            if hi <= lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, bins + 1)
        real_freq = np.histogram(r_vals, bins=edges)[0] / len(r_vals)
        synth_freq = np.histogram(s_vals, bins=edges)[0] / len(s_vals)
        labels = [f"[{edges[i]:.4g},{edges[i + 1]:.4g})" for i in range(bins)]
    adj, r2 = adjusted_r2(real_freq, synth_freq)
    return DistributionFit(variable, adj, r2, labels, real_freq, synth_freq)
