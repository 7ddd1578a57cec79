"""Joint energy of (x, s, y) and the quantities derived from it.

    E(x, s, y) = -x'By - x'Ws - s'W'y - d'x - c'y - a's

``x`` is the encoded explanatory vector (length M), ``s`` the binary latent
vector (length H) and ``y`` the one-hot choice (length J). Summing the latents
out gives the free energy

    F(x, y) = -(By + d)'x - c'y - sum_h softplus((x'W)_h + (W'y)_h + a_h)

Continuous columns carry an implicit standard-normal base measure and cyclical
pairs live on the unit circle; neither depends on parameters, so neither
appears in E or F.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, i0e

from . import _io
from .errors import SchemaError


def softplus(z):
    """log(1 + exp(z)) without overflow for large |z|."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    return expit(z)


def logsumexp(a, axis=-1):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


@dataclass(eq=False)
class ModelParams:
    """Coefficients of the joint energy.

    beta is M x J, d length M, c length J, alpha length H, W is M x H and
    Wp (the latent-choice coupling W') is H x J. H = 0 is a plain MNL.
    """

    beta: np.ndarray
    d: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    W: np.ndarray
    Wp: np.ndarray
    schema_hash: str = None

    _BLOCKS = ("beta", "d", "c", "alpha", "W", "Wp")

    def __post_init__(self):
        for name in self._BLOCKS:
            setattr(self, name, np.array(getattr(self, name), dtype=float, order="C"))
        M, J = self.beta.shape if self.beta.ndim == 2 else (None, None)
        if M is None:
            raise SchemaError("beta must be an M x J matrix")
        H = self.alpha.shape[0] if self.alpha.ndim == 1 else None
        expected = {"d": (M,), "c": (J,), "alpha": (H,), "W": (M, H), "Wp": (H, J)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise SchemaError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in self._BLOCKS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise SchemaError(f"parameter block {name} has non-finite entries")

    @property
    def M(self):
        return self.beta.shape[0]

    @property
    def J(self):
        return self.beta.shape[1]

    @property
    def H(self):
        return self.alpha.shape[0]

    @classmethod
    def zeros(cls, M, J, H, schema_hash=None):
        return cls(np.zeros((M, J)), np.zeros(M), np.zeros(J), np.zeros(H),
                   np.zeros((M, H)), np.zeros((H, J)), schema_hash)

    @classmethod
    def initialize(cls, M, J, H, rng, scale=0.01, schema_hash=None):
        """Couplings ~ N(0, scale^2); biases and beta start at zero."""
        p = cls.zeros(M, J, H, schema_hash)
        p.W = rng.normal(0.0, scale, size=(M, H))
        p.Wp = rng.normal(0.0, scale, size=(H, J))
        return p

    def replace(self, **changes):
        fields = {name: getattr(self, name) for name in self._BLOCKS}
        fields["schema_hash"] = self.schema_hash
        fields.update(changes)
        return ModelParams(**fields)

    def copy(self):
        return self.replace()

    def arrays(self):
        return {name: getattr(self, name) for name in self._BLOCKS}

    def checksum(self):
        return _io.sha256_text("".join(getattr(self, n).tobytes().hex() for n in self._BLOCKS))

    def save(self, path, provenance=None):
        meta = {
            "kind": "model_params",
            "format_version": _io.FORMAT_VERSION,
            "dims": {"M": self.M, "J": self.J, "H": self.H},
            "schema_hash": self.schema_hash,
            "provenance": provenance or {},
        }
        _io.write_npz(path, self.arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = _io.read_npz(path)
        if meta.get("kind") != "model_params":
            raise SchemaError(f"{path}: not a model checkpoint")
        if meta.get("format_version") != _io.FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported format version {meta.get('format_version')}")
        missing = set(cls._BLOCKS) - set(arrays)
        if missing:
            raise SchemaError(f"{path}: missing parameter blocks {sorted(missing)}")
        params = cls(**{n: arrays[n] for n in cls._BLOCKS}, schema_hash=meta.get("schema_hash"))
        dims = meta.get("dims", {})
        if (dims.get("M"), dims.get("J"), dims.get("H")) != (params.M, params.J, params.H):
            raise SchemaError(f"{path}: declared dimensions {dims} do not match arrays")
        return params


def _check(x, y, params):
    if np.shape(x)[-1] != params.M:
        raise SchemaError(f"x has width {np.shape(x)[-1]}, params expect M={params.M}")
    if y is not None and np.shape(y)[-1] != params.J:
        raise SchemaError(f"y has width {np.shape(y)[-1]}, params expect J={params.J}")


def joint_energy(x, s, y, params):
    """E(x, s, y); broadcasts over leading axes of x, s and y."""
    x, s, y = (np.asarray(a, dtype=float) for a in (x, s, y))
    _check(x, y, params)
    if s.shape[-1] != params.H:
        raise SchemaError(f"s has length {s.shape[-1]}, params expect H={params.H}")
    return -(
        np.sum((x @ params.beta) * y, axis=-1)
        + np.sum((x @ params.W) * s, axis=-1)
        + np.sum((s @ params.Wp) * y, axis=-1)
        + x @ params.d
        + y @ params.c
        + s @ params.alpha
    )


def latent_preactivation(x, y, params):
    """(x'W)_h + (W'y)_h + alpha_h."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(x, y, params)
    return x @ params.W + y @ params.Wp.T + params.alpha


def latent_posterior(x, y, params):
    """p(s_h = 1 | x, y) for every h; the posterior factorizes over h."""
    return sigmoid(latent_preactivation(x, y, params))


def entropy_terms(x, params):
    """Entropy correction H_j(x) for every alternative; shape (..., J)."""
    x = np.asarray(x, dtype=float)
    _check(x, None, params)
    pre = (x @ params.W)[..., :, None] + params.Wp + params.alpha[:, None]
    return softplus(pre).sum(axis=-2)


def entropy_term(x, j, params):
    """H_j = sum_h softplus((x'W)_h + W'_hj + alpha_h); zero when H = 0."""
    if not 0 <= j < params.J:
        raise IndexError(f"alternative index {j} out of range for J={params.J}")
    x = np.asarray(x, dtype=float)
    _check(x, None, params)
    return softplus(x @ params.W + params.Wp[:, j] + params.alpha).sum(axis=-1)


def free_energy(x, y, params):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(x, y, params)
    visible = np.sum((x @ params.beta) * y, axis=-1) + x @ params.d + y @ params.c
    return -visible - softplus(latent_preactivation(x, y, params)).sum(axis=-1)


class Layout:
    """Column groups of an encoding schema, arranged for vectorized sampling."""

    def __init__(self, schema):
        self.schema = schema
        self.M = schema.encoded_width
        self.J = schema.n_alternatives
        self.blocks = schema.blocks
        cont, binary, cyc, cat = [], [], [], []
        for b in self.blocks:
            if b.kind == "continuous":
                cont.append(b.start)
            elif b.kind == "binary":
                binary.append(b.start)
            elif b.kind == "cyclical":
                cyc.append(b.start)
            else:
                cat.append(b)
        self.continuous = np.asarray(cont, dtype=int)
        self.binary = np.asarray(binary, dtype=int)
        self.cyclical = np.asarray(cyc, dtype=int)
        self.categorical = tuple(cat)

    def subset(self, names):
        """Layout restricted to the blocks named in ``names`` (same column indices)."""
        sub = object.__new__(Layout)
        sub.schema, sub.M, sub.J = self.schema, self.M, self.J
        sub.blocks = tuple(b for b in self.blocks if b.name in names)
        sub.continuous = np.asarray([b.start for b in sub.blocks if b.kind == "continuous"], dtype=int)
        sub.binary = np.asarray([b.start for b in sub.blocks if b.kind == "binary"], dtype=int)
        sub.cyclical = np.asarray([b.start for b in sub.blocks if b.kind == "cyclical"], dtype=int)
        sub.categorical = tuple(b for b in sub.blocks if b.kind == "categorical")
        return sub

    @property
    def columns(self):
        mask = np.zeros(self.M, dtype=bool)
        for b in self.blocks:
            mask[b.slice] = True
        return mask

    def log_partition(self, a):
        """Sum over blocks of log of the block normalizer at activation ``a`` (..., M).

        Additive constants common to all activations are dropped.
        """
        total = np.zeros(a.shape[:-1])
        if self.continuous.size:
            total += 0.5 * np.sum(a[..., self.continuous] ** 2, axis=-1)
        if self.binary.size:
            total += softplus(a[..., self.binary]).sum(axis=-1)
        if self.cyclical.size:
            kappa = np.hypot(a[..., self.cyclical], a[..., self.cyclical + 1])
            total += np.sum(np.log(i0e(kappa)) + kappa, axis=-1)
        for b in self.categorical:
            total += logsumexp(a[..., b.start:b.stop], axis=-1)
        return total

    def sample(self, a, X, rng):
        """Overwrite this layout's columns of ``X`` with draws given activation ``a``."""
        if self.continuous.size:
            X[:, self.continuous] = a[:, self.continuous] + rng.standard_normal((a.shape[0], self.continuous.size))
        if self.binary.size:
            p = sigmoid(a[:, self.binary])
            X[:, self.binary] = (rng.random(p.shape) < p).astype(float)
        if self.cyclical.size:
            a_sin, a_cos = a[:, self.cyclical], a[:, self.cyclical + 1]
            theta = rng.vonmises(np.arctan2(a_sin, a_cos), np.hypot(a_sin, a_cos))
            X[:, self.cyclical] = np.sin(theta)
            X[:, self.cyclical + 1] = np.cos(theta)
        for b in self.categorical:
            X[:, b.slice] = sample_categorical(a[:, b.slice], rng)
        return X


def sample_categorical(logits, rng):
    """One-hot draws from row-wise softmax(logits)."""
    logits = np.asarray(logits, dtype=float)
    p = np.exp(logits - logsumexp(logits, axis=-1)[:, None])
    cdf = np.cumsum(p, axis=1)
    u = rng.random((logits.shape[0], 1)) * cdf[:, -1:]
    idx = np.minimum((u > cdf).sum(axis=1), logits.shape[1] - 1)
    out = np.zeros_like(p)
    out[np.arange(p.shape[0]), idx] = 1.0
    return out


@dataclass
class ObservedConditional:
    """Activations of the observed units given latents (and optionally y).

    ``blocks`` maps each explanatory variable to its activation: softmax
    logits for categorical, Gaussian means for continuous, the 2-D von Mises
    natural parameter for cyclical, Bernoulli logits for binary.
    ``choice_logits`` are logits of p(y | s) with x summed/integrated out, or
    the clamped-y one-hot when y was supplied.
    """

    blocks: dict
    choice_logits: np.ndarray
    activation: np.ndarray


def conditional_observed_params(s, params, schema, y=None):
    """Sampling parameters of the observed block given latent state ``s``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if schema.encoded_width != params.M or schema.n_alternatives != params.J:
        raise SchemaError("schema and params disagree on M or J")
    if s.shape[-1] != params.H:
        raise SchemaError(f"s has length {s.shape[-1]}, params expect H={params.H}")
    layout = Layout(schema)
    base = params.d + s @ params.W.T
    if y is None:
        choice_logits = _choice_logits_given_latent(base, s, params, layout, None, None)
        a = base
    else:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        choice_logits = np.where(y > 0, 0.0, -np.inf)
        a = base + y @ params.beta.T
    blocks = {b.name: a[:, b.slice] if b.kind in ("categorical", "cyclical") else a[:, b.start] for b in layout.blocks}
    return ObservedConditional(blocks, choice_logits, a)


def _choice_logits_given_latent(base, s, params, free, X, clamped_cols):
    """log p(y = j | s, clamped x) up to a constant, free blocks integrated out."""
    a = base[:, None, :] + params.beta.T[None, :, :]
    logits = params.c + s @ params.Wp + free.log_partition(a)
    if clamped_cols is not None and clamped_cols.any():
        logits = logits + X[:, clamped_cols] @ params.beta[clamped_cols]
    return logits


def sample_latent(X, Y, params, rng):
    p = latent_posterior(X, Y, params)
    return (rng.random(p.shape) < p).astype(float), p


def sample_observed(s, X, Y, params, layout, rng, free=None, sample_choice=True):
    """One blocked draw of the observed units given latents ``s``.

    ``free`` is the layout of the explanatory blocks to resample (default: all);
    other columns of ``X`` stay clamped. When ``sample_choice`` is False the
    current ``Y`` is clamped. Returns new (X, Y); inputs are not modified.
    """
    free = layout if free is None else free
    X = X.copy()
    base = params.d + s @ params.W.T
    if sample_choice:
        clamped_cols = ~free.columns
        Y = sample_categorical(_choice_logits_given_latent(base, s, params, free, X, clamped_cols), rng)
    a = base + Y @ params.beta.T
    free.sample(a, X, rng)
    return X, Y
