"""Synthetic populations with known structure for the statistical tests."""
import numpy as np
import pandas as pd
from scipy.special import logsumexp

from genchoice.data import VariableSpec, encode, fit_schema, split_indices

MODES = ("bike", "car", "transit")


def _draw(P, rng):
    return (rng.random((P.shape[0], 1)) > np.cumsum(P, axis=1)).sum(axis=1).clip(max=P.shape[1] - 1)


def _softmax(V):
    return np.exp(V - logsumexp(V, axis=1, keepdims=True))


def mnl_population(n, seed, beta=None, asc=None):
    """Plain MNL on two continuous attributes."""
    rng = np.random.default_rng(seed)
    beta = np.array([[0.0, 0.8, -0.6], [0.0, -0.5, 0.4]]) if beta is None else beta
    asc = np.array([0.0, 0.3, -0.4]) if asc is None else asc
    log_cost = rng.normal(0.0, 1.0, n)
    log_time = rng.normal(1.0, 0.7, n)
    z = np.column_stack([log_cost, (log_time - 1.0) / 0.7])
    y = _draw(_softmax(z @ beta + asc), rng)
    return pd.DataFrame({
        "cost": np.exp(log_cost),
        "time": np.exp(log_time),
        "mode": np.array(MODES)[y],
    })


MNL_SPECS = [
    VariableSpec("cost", "continuous"),
    VariableSpec("time", "continuous"),
    VariableSpec("mode", "categorical", levels=MODES, role="choice"),
]


# Two equally likely segments. Segment 0 dislikes car at high cost and likes
# transit; segment 1 the reverse. Travel time has a common taste (control).
# Income, activity, companions, area, hour and weekend never enter the
# utility; they only reveal the segment (inattended proxies).
COST_TASTE = np.array([[0.0, -3.0, 3.0],
                       [0.0, 3.0, -3.0]])
TIME_TASTE = np.array([0.0, -0.4, 0.3])
SEGMENT_ASC = np.array([[0.0, 0.6, -0.6],
                        [0.0, -0.6, 0.6]])
INCOME_SHIFT = 1.0
PROXY_PROBS = np.array([[0.7, 0.2, 0.1],
                        [0.3, 0.2, 0.5]])
PROXIES = {
    "activity": ("edu", "work", "leisure"),
    "companions": ("alone", "partner", "group"),
    "area": ("core", "inner", "outer"),
}
HOUR_PEAK = (8.0, 17.0)
HOUR_KAPPA = 2.0
WEEKEND_P = (0.15, 0.45)

MIXTURE_SPECS = [
    VariableSpec("cost", "continuous"),
    VariableSpec("time", "continuous"),
    VariableSpec("income", "continuous"),
    *[VariableSpec(name, "categorical", levels=levels) for name, levels in PROXIES.items()],
    VariableSpec("hour", "cyclical", period=24.0),
    VariableSpec("weekend", "binary"),
    VariableSpec("mode", "categorical", levels=MODES, role="choice"),
]


def _segment_utilities(log_cost, log_time, g, cost_taste=COST_TASTE, asc=SEGMENT_ASC):
    return log_cost[:, None] * cost_taste[g] + log_time[:, None] * TIME_TASTE + asc[g]


def mixture_population(n, seed, cost_taste=COST_TASTE, asc=SEGMENT_ASC):
    """Two-segment mixture of logits with segment-specific cost tastes and constants."""
    cost_taste, asc = np.asarray(cost_taste, dtype=float), np.asarray(asc, dtype=float)
    rng = np.random.default_rng(seed)
    g = (rng.random(n) < 0.5).astype(int)
    log_cost = rng.normal(0.0, 1.0, n)
    log_time = rng.normal(0.0, 1.0, n)
    log_income = rng.normal(np.where(g == 1, INCOME_SHIFT, -INCOME_SHIFT), 1.0)
    cols = {"cost": np.exp(log_cost), "time": np.exp(log_time), "income": np.exp(log_income)}
    for name, levels in PROXIES.items():
        cols[name] = np.asarray(levels)[_draw(PROXY_PROBS[g], rng)]
    peak = np.asarray(HOUR_PEAK)[g] / 24.0 * 2 * np.pi
    cols["hour"] = np.mod(rng.vonmises(peak, HOUR_KAPPA), 2 * np.pi) / (2 * np.pi) * 24.0
    cols["weekend"] = (rng.random(n) < np.asarray(WEEKEND_P)[g]).astype(int)
    y = _draw(_softmax(_segment_utilities(log_cost, log_time, g, cost_taste, asc)), rng)
    cols["mode"] = np.array(MODES)[y]
    return pd.DataFrame(cols)


def segment_posterior(raw):
    """p(segment | proxies) under the generating process."""
    log_income = np.log(raw["income"].to_numpy(dtype=float))
    ll = np.zeros((len(raw), 2))
    for k in (0, 1):
        ll[:, k] = -0.5 * (log_income - (2 * k - 1) * INCOME_SHIFT) ** 2
        for name, levels in PROXIES.items():
            codes = pd.Categorical(raw[name], categories=levels).codes
            ll[:, k] += np.log(PROXY_PROBS[k][codes])
        angle = raw["hour"].to_numpy(dtype=float) / 24.0 * 2 * np.pi
        ll[:, k] += HOUR_KAPPA * np.cos(angle - HOUR_PEAK[k] / 24.0 * 2 * np.pi)
        w = raw["weekend"].to_numpy(dtype=int)
        ll[:, k] += np.log(np.where(w == 1, WEEKEND_P[k], 1 - WEEKEND_P[k]))
    return np.exp(ll - logsumexp(ll, axis=1, keepdims=True))


def mixture_true_nll(raw, cost_taste=COST_TASTE, asc=SEGMENT_ASC):
    """Mean NLL of the observed choices under the true generating conditional."""
    cost_taste, asc = np.asarray(cost_taste, dtype=float), np.asarray(asc, dtype=float)
    log_cost = np.log(raw["cost"].to_numpy(dtype=float))
    log_time = np.log(raw["time"].to_numpy(dtype=float))
    y = pd.Categorical(raw["mode"], categories=MODES).codes
    post = segment_posterior(raw)
    probs = sum(post[:, [k]] * _softmax(_segment_utilities(log_cost, log_time, np.full(len(raw), k), cost_taste, asc))
                for k in (0, 1))
    return float(-np.mean(np.log(probs[np.arange(len(y)), y])))


def encoded_split(raw, specs, fraction=0.7, seed=0):
    """Stratified split, schema fitted on the training rows only."""
    choice = next(s.name for s in specs if s.role == "choice")
    tr, va = split_indices(raw[choice].to_numpy(), fraction, seed)
    schema = fit_schema(raw.iloc[tr], specs)
    return encode(raw.iloc[tr], schema), encode(raw.iloc[va], schema)
