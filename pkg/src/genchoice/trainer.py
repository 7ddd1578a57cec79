"""Hybrid estimation: CD-n on the generative couplings, conditional-logit MLE on (beta, c).

Every minibatch gets one contrastive-divergence SGD update of {d, alpha, W, W'}
followed by ``mle_inner_steps`` gradient-ascent steps on the choice
log-likelihood with respect to beta and c only. Epochs are full passes; the
returned parameters come from the epoch with the lowest validation NLL.
"""
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from . import _io
from .choice import log_probabilities
from .energy import Layout, ModelParams, entropy_terms, latent_posterior, logsumexp, sample_latent, sample_observed
from .errors import ConfigError, NumericalError, SchemaError

log = logging.getLogger(__name__)

GENERATIVE_BLOCKS = ("d", "alpha", "W", "Wp")
CHOICE_BLOCKS = ("beta", "c")


@dataclass
class TrainConfig:
    latent_count: int = 0
    batch_size: int = 16
    gibbs_steps: int = 10
    learning_rate: float = 0.01
    max_epochs: int = 100
    seed: int = 0
    early_stop_patience: int = 20
    mle_inner_steps: int = 1
    refine_choice: bool = True
    init_scale: float = 0.01

    def __post_init__(self):
        checks = [
            (self.latent_count >= 0, "latent_count must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.gibbs_steps >= 1, "gibbs_steps must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.max_epochs >= 0, "max_epochs must be >= 0"),
            (self.early_stop_patience >= 1, "early_stop_patience must be >= 1"),
            (self.mle_inner_steps >= 1, "mle_inner_steps must be >= 1"),
            (self.init_scale >= 0, "init_scale must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            t = types[k]
            if t is bool and not isinstance(v, bool):
                raise ConfigError(f"train setting {k!r} must be true or false")
            kwargs[k] = t(v) if t in (int, float) else v
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    valid_nll: float
    grad_norms: dict
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = None
    best_valid_nll: float = None
    refined_valid_nll: float = None

    def to_frame(self, include_seconds=False):
        rows = []
        for r in self.records:
            row = {"epoch": r.epoch, "train_nll": r.train_nll, "valid_nll": r.valid_nll}
            for k in GENERATIVE_BLOCKS + CHOICE_BLOCKS:
                row[f"grad_norm_{k}"] = r.grad_norms.get(k, np.nan)
            if include_seconds:
                row["seconds"] = r.seconds
            rows.append(row)
        cols = ["epoch", "train_nll", "valid_nll"] + [f"grad_norm_{k}" for k in GENERATIVE_BLOCKS + CHOICE_BLOCKS]
        if include_seconds:
            cols.append("seconds")
        return pd.DataFrame(rows, columns=cols)

    @property
    def valid_series(self):
        return np.array([r.valid_nll for r in self.records])

    @property
    def train_series(self):
        return np.array([r.train_nll for r in self.records])


def _record_meta(record):
    # non-finite gradient norms become null so the metadata stays strict JSON
    return {
        "epoch": record.epoch,
        "train_nll": record.train_nll,
        "valid_nll": record.valid_nll,
        "grad_norms": {k: (v if np.isfinite(v) else None) for k, v in record.grad_norms.items()},
    }


@dataclass
class TrainState:
    """Everything needed to continue an interrupted run bit-for-bit."""

    epoch: int
    params: ModelParams
    best_params: ModelParams
    history: TrainHistory
    since_best: int = 0

    def save(self, path, config, provenance=None):
        """Resumable checkpoint: current and best parameters plus the history."""
        arrays = {f"params.{k}": v for k, v in self.params.arrays().items()}
        arrays.update({f"best.{k}": v for k, v in self.best_params.arrays().items()})
        h = self.history
        meta = {
            "kind": "train_state",
            "format_version": _io.FORMAT_VERSION,
            "schema_hash": self.params.schema_hash,
            "epoch": self.epoch,
            "since_best": self.since_best,
            "config": config.to_dict(),
            "best_epoch": h.best_epoch,
            "best_valid_nll": h.best_valid_nll,
            # wall time is left out so reruns write identical bytes
            "records": [_record_meta(r) for r in h.records],
            "provenance": provenance or {},
        }
        _io.write_npz(path, arrays, meta)

    @classmethod
    def load(cls, path):
        """Returns ``(state, config dict, meta)``."""
        arrays, meta = _io.read_npz(path)
        if meta.get("kind") != "train_state":
            raise SchemaError(f"{path}: not a training checkpoint")
        if meta.get("format_version") != _io.FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported format version {meta.get('format_version')}")

        def params(prefix):
            return ModelParams(**{k: arrays[f"{prefix}.{k}"] for k in ModelParams._BLOCKS},
                               schema_hash=meta["schema_hash"])

        records = []
        for r in meta["records"]:
            norms = {k: np.nan if v is None else v for k, v in r.pop("grad_norms").items()}
            records.append(EpochRecord(**r, grad_norms=norms, seconds=np.nan))
        history = TrainHistory(records, meta["best_epoch"], meta["best_valid_nll"])
        state = cls(meta["epoch"], params("params"), params("best"), history, meta["since_best"])
        return state, meta["config"], meta


def validation_nll(params, dataset):
    """Mean negative log choice probability of the observed alternatives (nats/record)."""
    logp = log_probabilities(dataset.X, params)
    return float(-np.mean(logp[np.arange(len(dataset)), dataset.choices]))


def blocked_gibbs_chain(x0, y0, params, n, rng, layout):
    """Run ``n`` alternating latent / observed sweeps from (x0, y0).

    Rows are independent chains. Returns (x_n, y_n, s_n) where s_n is the
    latent draw that produced (x_n, y_n).
    """
    if n < 1:
        raise ValueError("gibbs chain needs n >= 1")
    if not isinstance(layout, Layout):
        layout = Layout(layout)
    X = np.atleast_2d(np.asarray(x0, dtype=float))
    Y = np.atleast_2d(np.asarray(y0, dtype=float))
    for _ in range(n):
        s, _ = sample_latent(X, Y, params, rng)
        X, Y = sample_observed(s, X, Y, params, layout, rng)
    return X, Y, s


def cd_gradient(batch, params, n, rng, layout=None):
    """CD-n estimate of the gradient of the negative log-likelihood for {d, alpha, W, W'}.

    Returns dE/dtheta at the data minus dE/dtheta at the chain end, batch
    averaged, with mean-field latent probabilities at both ends. Descend
    along it: theta <- theta - lr * grad.
    """
    layout = Layout(batch.schema) if layout is None else layout
    X0, Y0 = batch.X, batch.Y
    k = X0.shape[0]
    p0 = latent_posterior(X0, Y0, params)
    Xn, Yn, _ = blocked_gibbs_chain(X0, Y0, params, n, rng, layout)
    pn = latent_posterior(Xn, Yn, params)
    return {
        "d": -(X0.sum(axis=0) - Xn.sum(axis=0)) / k,
        "alpha": -(p0.sum(axis=0) - pn.sum(axis=0)) / k,
        "W": -(X0.T @ p0 - Xn.T @ pn) / k,
        "Wp": -(p0.T @ Y0 - pn.T @ Yn) / k,
    }


def choice_loglik_gradient(X, Y, params):
    """Gradient of the mean conditional log-likelihood w.r.t. beta and c."""
    logp = log_probabilities(X, params)
    resid = Y - np.exp(logp)
    return {"beta": X.T @ resid / X.shape[0], "c": resid.mean(axis=0)}


def mle_logit_step(batch, params, inner_steps, lr):
    """Gradient ascent on the choice log-likelihood; only beta and c change."""
    beta, c = params.beta.copy(), params.c.copy()
    ent = entropy_terms(batch.X, params)
    for _ in range(inner_steps):
        V = batch.X @ beta + c + ent
        resid = batch.Y - np.exp(V - logsumexp(V, axis=-1)[:, None])
        beta += lr * (batch.X.T @ resid) / batch.X.shape[0]
        c += lr * resid.mean(axis=0)
    return params.replace(beta=beta, c=c)


def refine_choice(dataset, params, gtol=1e-10, maxiter=5000):
    """Full-batch maximum likelihood for (beta, c) with the generative block held fixed."""
    X, Y = dataset.X, dataset.Y
    M, J = params.M, params.J
    offset = entropy_terms(X, params)
    n = X.shape[0]

    def objective(theta):
        beta = theta[: M * J].reshape(M, J)
        c = theta[M * J:]
        V = X @ beta + c + offset
        lse = logsumexp(V, axis=-1)
        nll = float(np.sum(lse - np.sum(V * Y, axis=1)) / n)
        resid = np.exp(V - lse[:, None]) - Y
        grad = np.concatenate([(X.T @ resid).ravel(), resid.sum(axis=0)]) / n
        return nll, grad

    theta0 = np.concatenate([params.beta.ravel(), params.c])
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": maxiter, "maxcor": 30})
    return params.replace(beta=res.x[: M * J].reshape(M, J), c=res.x[M * J:])


def _epoch_rng(seed, epoch):
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch)])


def _check_finite(params, what):
    for name in ModelParams._BLOCKS:
        arr = getattr(params, name)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in parameter block {name} ({what})", block=name)


def initial_state(train, config):
    schema = train.schema
    rng = _epoch_rng(config.seed, 0)
    params = ModelParams.initialize(schema.encoded_width, schema.n_alternatives, config.latent_count,
                                    rng, scale=config.init_scale, schema_hash=schema.hash)
    return TrainState(epoch=0, params=params, best_params=params, history=TrainHistory())


def train(train, valid, config, state=None, on_epoch=None):
    """Fit parameters; returns (best params, history).

    ``state`` resumes a previous run; ``on_epoch(state)`` is called after each
    completed epoch (checkpointing hook).
    """
    if train.schema.hash != valid.schema.hash:
        raise ValueError("train and validation datasets use different schemas")
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    state = initial_state(train, config) if state is None else state
    layout = Layout(train.schema)
    lr, k = config.learning_rate, config.batch_size
    while state.epoch < config.max_epochs and state.since_best < config.early_stop_patience:
        epoch = state.epoch + 1
        started = time.perf_counter()
        rng = _epoch_rng(config.seed, epoch)
        order = rng.permutation(len(train))
        params = state.params
        norms = {name: 0.0 for name in GENERATIVE_BLOCKS + CHOICE_BLOCKS}
        n_batches = 0
        for start in range(0, len(order), k):
            batch = train.subset(order[start:start + k])
            grad = cd_gradient(batch, params, config.gibbs_steps, rng, layout)
            updated = {}
            for name, g in grad.items():
                arr = getattr(params, name) - lr * g
                if not np.all(np.isfinite(arr)):
                    raise NumericalError(f"non-finite values in parameter block {name} after CD update",
                                         block=name)
                updated[name] = arr
                norms[name] += float(np.linalg.norm(g))
            params = params.replace(**updated)
            g_choice = choice_loglik_gradient(batch.X, batch.Y, params)
            norms["beta"] += float(np.linalg.norm(g_choice["beta"]))
            norms["c"] += float(np.linalg.norm(g_choice["c"]))
            params = mle_logit_step(batch, params, config.mle_inner_steps, lr)
            n_batches += 1
        _check_finite(params, f"epoch {epoch}")
        train_nll = validation_nll(params, train)
        valid_nll = validation_nll(params, valid)
        if not (np.isfinite(train_nll) and np.isfinite(valid_nll)):
            raise NumericalError(f"non-finite loss at epoch {epoch}", block="choice")
        record = EpochRecord(epoch, train_nll, valid_nll,
                             {name: v / n_batches for name, v in norms.items()},
                             time.perf_counter() - started)
        hist = state.history
        hist.records.append(record)
        if hist.best_valid_nll is None or valid_nll < hist.best_valid_nll:
            hist.best_epoch, hist.best_valid_nll = epoch, valid_nll
            state.best_params = params
            state.since_best = 0
        else:
            state.since_best += 1
        state.params = params
        state.epoch = epoch
        log.info("epoch %d train_nll=%.6f valid_nll=%.6f", epoch, train_nll, valid_nll)
        if on_epoch is not None:
            on_epoch(state)
    best = state.best_params
    if config.refine_choice and state.history.records:
        best = refine_choice(train, best)
        state.history.refined_valid_nll = validation_nll(best, valid)
    return best, state.history
