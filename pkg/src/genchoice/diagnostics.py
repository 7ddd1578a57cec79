"""Information-heterogeneity diagnostics: maxent of beta rows, beta sensitivity
across latent sizes, latent activation statistics and discrete KL / mutual
information estimates."""
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .choice import relative_beta
from .energy import latent_posterior, logsumexp


def maxent(beta_row, class_shares):
    """Cross-entropy of softmax(beta_row) under the observed class shares.

    maxent = -sum_j p_j log softmax(beta_row)_j, at least the entropy of the
    shares, with equality iff the softmax reproduces them.
    """
    beta_row = np.asarray(beta_row, dtype=float)
    p = np.asarray(class_shares, dtype=float)
    if p.shape != beta_row.shape[-1:]:
        raise ValueError("beta_row and class_shares differ in length")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("class_shares must be a probability simplex (sum to 1 within 1e-9)")
    log_q = beta_row - logsumexp(beta_row, axis=-1)[..., None]
    terms = np.where(p > 0, p * log_q, 0.0)
    return -terms.sum(axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


@dataclass
class MaxentReport:
    """maxent per encoded explanatory column (rows) and latent size (columns)."""

    rows: list
    sizes: list
    values: np.ndarray
    class_shares: np.ndarray

    @property
    def mean(self):
        return self.values.mean(axis=0)

    @property
    def std(self):
        if self.values.shape[0] < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1)

    def to_frame(self):
        """Rows are variables, columns ``S=<size>``, with a mean (std) footer."""
        frame = pd.DataFrame(self.values, columns=[f"S={s}" for s in self.sizes])
        frame.insert(0, "parameter", self.rows)
        footer = {"parameter": "mean (std. dev.)"}
        for s, m, sd in zip(self.sizes, self.mean, self.std):
            footer[f"S={s}"] = f"{m:.4f} ({sd:.4f})"
        frame = frame.astype({f"S={s}": object for s in self.sizes})
        for s in self.sizes:
            frame[f"S={s}"] = [f"{v:.4f}" for v in frame[f"S={s}"]]
        return pd.concat([frame, pd.DataFrame([footer])], ignore_index=True)


def maxent_report(params_by_size, class_shares, schema):
    sizes = sorted(params_by_size)
    values = np.column_stack([maxent(params_by_size[s].beta, class_shares) for s in sizes])
    return MaxentReport(list(schema.columns), sizes, values, np.asarray(class_shares, dtype=float))


@dataclass
class SensitivityResult:
    sizes: list
    columns: list
    alternatives: list
    beta: np.ndarray          # (len(sizes), M, J), relative to the base alternative
    valid_nll: np.ndarray
    maxent: MaxentReport
    params: dict

    def beta_frame(self):
        rows = []
        for i, s in enumerate(self.sizes):
            for m, col in enumerate(self.columns):
                for j, alt in enumerate(self.alternatives):
                    rows.append({"S": s, "parameter": col, "alternative": alt, "beta": self.beta[i, m, j]})
        return pd.DataFrame(rows)


def _fit_one(args):
    from .trainer import train
    train_ds, valid_ds, config = args
    params, history = train(train_ds, valid_ds, config)
    nll = history.refined_valid_nll if history.refined_valid_nll is not None else history.best_valid_nll
    return params, nll


def beta_sensitivity(train, valid, latent_sizes, base_config, jobs=1):
    """Train one model per latent size with a shared split, seed and schedule."""
    sizes = [int(s) for s in latent_sizes]
    if not sizes:
        raise ValueError("latent_sizes must be non-empty")
    if 0 not in sizes:
        raise ValueError("latent_sizes must include 0 (the MNL reference)")
    if len(set(sizes)) != len(sizes):
        raise ValueError("latent_sizes must be distinct")
    jobs_args = [(train, valid, replace(base_config, latent_count=s)) for s in sizes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_one, jobs_args))
    else:
        results = [_fit_one(a) for a in jobs_args]
    params = {s: r[0] for s, r in zip(sizes, results)}
    shares = train.class_shares
    report = maxent_report(params, shares, train.schema)
    order = report.sizes
    beta = np.stack([relative_beta(params[s]) for s in order])
    nll = np.array([results[sizes.index(s)][1] for s in order])
    return SensitivityResult(order, list(train.schema.columns), list(train.schema.alternatives),
                             beta, nll, report, params)


def activation_stats(params, dataset, threshold=0.5):
    """Per-alternative W' column mean/std and latent activation rate.

    The activation rate of alternative j is the share of (record, latent)
    pairs with p(s_h = 1 | x, y = j) strictly above ``threshold`` among records
    whose observed choice is j.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    post = latent_posterior(dataset.X, dataset.Y, params)
    choices = dataset.choices
    rows = []
    for j, alt in enumerate(dataset.schema.alternatives):
        col = params.Wp[:, j]
        mask = choices == j
        if mask.any() and params.H > 0:
            rate = float(np.mean(post[mask] > threshold))
        else:
            rate = np.nan
        rows.append({
            "alternative": alt,
            "wp_mean": float(col.mean()) if params.H else np.nan,
            "wp_std": float(col.std()) if params.H else np.nan,
            "activation_rate": rate,
            "n_records": int(mask.sum()),
        })
    return pd.DataFrame(rows)


def empirical_kl(p_counts, q_counts, smoothing="auto"):
    """KL(p || q) between two histograms on the same support.

    ``smoothing``: "auto" adds half a pseudo-count to every bin of both
    histograms only when q is zero somewhere p is positive; "always" always
    does; "none" never does (and then such a bin gives inf).
    """
    p = np.asarray(p_counts, dtype=float)
    q = np.asarray(q_counts, dtype=float)
    if p.shape != q.shape:
        raise ValueError("histograms have different supports")
    if np.any(p < 0) or np.any(q < 0) or p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histograms must be non-negative with positive mass")
    if smoothing not in ("auto", "always", "none"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if smoothing == "always" or (smoothing == "auto" and np.any((q == 0) & (p > 0))):
        p, q = p + 0.5, q + 0.5
    p = p / p.sum()
    q = q / q.sum()
    if np.array_equal(p, q):
        return 0.0
    nz = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


@dataclass
class MutualInformation:
    mi: float
    mi_raw: float
    p_value: float
    independent: bool
    n: int


def _codes(values):
    values = np.asarray(values)
    if values.ndim > 1:
        values = np.ascontiguousarray(values).view([("", values.dtype)] * values.shape[1]).ravel()
    return np.unique(values, return_inverse=True)[1].ravel()


def _plugin_mi(x, s, nx, ns):
    n = x.size
    joint = np.bincount(x * ns + s, minlength=nx * ns).reshape(nx, ns) / n
    px = joint.sum(axis=1, keepdims=True)
    ps = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * (np.log(joint[nz]) - np.log((px @ ps)[nz]))))


def mutual_information(x, s, n_permutations=1000, alpha=0.01, rng=None):
    """Plug-in I(X; S) for discrete samples with a permutation test of independence.

    Rows of 2-D inputs are treated as joint symbols. With fewer than 100
    samples a warning is issued and no decision is made.
    """
    xc, sc = _codes(x), _codes(s)
    if xc.size != sc.size:
        raise ValueError("x and s must be paired samples")
    nx, ns = int(xc.max()) + 1, int(sc.max()) + 1
    raw = _plugin_mi(xc, sc, nx, ns)
    mi = max(raw, 0.0)
    if xc.size < 100:
        warnings.warn("fewer than 100 samples: no independence decision", stacklevel=2)
        return MutualInformation(mi, raw, None, None, int(xc.size))
    rng = np.random.default_rng(0) if rng is None else rng
    exceed = 0
    for _ in range(n_permutations):
        if _plugin_mi(xc, rng.permutation(sc), nx, ns) >= raw - 1e-15:
            exceed += 1
    p_value = (1 + exceed) / (1 + n_permutations)
    return MutualInformation(mi, raw, p_value, bool(p_value > alpha), int(xc.size))
