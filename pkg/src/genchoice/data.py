"""Raw tabular records to model space and back.

Continuous-positive variables are log transformed and z-scored, categorical
variables use one-of-j dummies, cyclical variables become a (sin, cos) pair and
binary variables stay 0/1. The choice variable becomes a one-hot matrix ``Y``.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from . import _io
from .errors import IngestionError, SchemaError

KINDS = ("continuous", "categorical", "cyclical", "binary")
_KIND_ALIASES = {"continuous-positive": "continuous", "continuous_positive": "continuous"}
ROLES = ("explanatory", "choice")
LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple = None
    period: float = None
    role: str = "explanatory"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.levels is not None:
            levels = tuple(str(v) for v in self.levels)
            if kind != "categorical":
                raise SchemaError(f"variable {self.name!r}: levels only apply to categorical variables")
            if not levels:
                raise SchemaError(f"variable {self.name!r}: empty level list")
            if len(set(levels)) != len(levels):
                raise SchemaError(f"variable {self.name!r}: duplicate levels")
            object.__setattr__(self, "levels", levels)
        if kind == "cyclical":
            if self.period is None or not np.isfinite(self.period) or self.period <= 0:
                raise SchemaError(f"variable {self.name!r}: cyclical period must be > 0")
            object.__setattr__(self, "period", float(self.period))
        elif self.period is not None:
            raise SchemaError(f"variable {self.name!r}: period only applies to cyclical variables")
        if self.role == "choice" and kind != "categorical":
            raise SchemaError(f"choice variable {self.name!r} must be categorical")

    @property
    def width(self):
        if self.kind == "categorical":
            if self.levels is None:
                raise SchemaError(f"variable {self.name!r}: levels not resolved")
            return len(self.levels)
        return 2 if self.kind == "cyclical" else 1

    def to_dict(self):
        out = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.levels is not None:
            out["levels"] = list(self.levels)
        if self.period is not None:
            out["period"] = self.period
        return out

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"name", "kind", "levels", "period", "role"}
        if unknown:
            raise SchemaError(f"variable spec: unknown keys {sorted(unknown)}")
        if "name" not in d or "kind" not in d:
            raise SchemaError("variable spec needs 'name' and 'kind'")
        return cls(
            name=str(d["name"]),
            kind=str(d["kind"]),
            levels=d.get("levels"),
            period=d.get("period"),
            role=d.get("role", "explanatory"),
        )


class Block(NamedTuple):
    """Contiguous encoded columns belonging to one explanatory variable."""

    name: str
    kind: str
    start: int
    stop: int

    @property
    def slice(self):
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class EncodingSchema:
    variables: tuple
    continuous_stats: dict = field(default_factory=dict)
    floor_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        choice = [v for v in self.variables if v.role == "choice"]
        if len(choice) != 1:
            raise SchemaError(f"exactly one choice variable required, found {len(choice)}")
        if choice[0].levels is None or len(choice[0].levels) < 2:
            raise SchemaError("choice variable needs at least 2 levels")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names")
        for v in self.variables:
            if v.kind == "continuous":
                if v.name not in self.continuous_stats:
                    raise SchemaError(f"missing statistics for continuous variable {v.name!r}")
                _, std = self.continuous_stats[v.name]
                if not std > 0:
                    raise SchemaError(f"variable {v.name!r}: non-positive log standard deviation")

    @property
    def explanatory(self):
        return tuple(v for v in self.variables if v.role == "explanatory")

    @property
    def choice(self):
        return next(v for v in self.variables if v.role == "choice")

    @property
    def alternatives(self):
        return self.choice.levels

    @property
    def n_alternatives(self):
        return len(self.choice.levels)

    @property
    def encoded_width(self):
        return sum(v.width for v in self.explanatory)

    @property
    def blocks(self):
        out, start = [], 0
        for v in self.explanatory:
            out.append(Block(v.name, v.kind, start, start + v.width))
            start += v.width
        return tuple(out)

    @property
    def columns(self):
        cols = []
        for v in self.explanatory:
            if v.kind == "categorical":
                cols.extend(f"{v.name}={lvl}" for lvl in v.levels)
            elif v.kind == "cyclical":
                cols.extend([f"{v.name}:sin", f"{v.name}:cos"])
            else:
                cols.append(v.name)
        return tuple(cols)

    def variable(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"unknown variable {name!r}")

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise SchemaError(f"{name!r} is not an explanatory variable")

    def to_dict(self):
        return {
            "variables": [v.to_dict() for v in self.variables],
            "continuous_stats": {k: list(map(float, v)) for k, v in sorted(self.continuous_stats.items())},
            "floor_counts": dict(sorted(self.floor_counts.items())),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variables=tuple(VariableSpec.from_dict(v) for v in d["variables"]),
            continuous_stats={k: tuple(v) for k, v in d.get("continuous_stats", {}).items()},
            floor_counts=dict(d.get("floor_counts", {})),
        )

    @property
    def hash(self):
        # floor counts describe the fitting data, not the encoding
        d = self.to_dict()
        d.pop("floor_counts")
        return _io.sha256_text(_io.canonical_json(d))[:16]

    def describe(self):
        lines = [f"schema {self.hash}: M={self.encoded_width} encoded columns, J={self.n_alternatives} alternatives"]
        for v, b in zip(self.explanatory, self.blocks):
            extra = ""
            if v.kind == "continuous":
                m, s = self.continuous_stats[v.name]
                extra = f" log-mean={m:.6g} log-std={s:.6g} floored={self.floor_counts.get(v.name, 0)}"
            elif v.kind == "categorical":
                extra = f" levels={list(v.levels)}"
            elif v.kind == "cyclical":
                extra = f" period={v.period:g}"
            lines.append(f"  [{b.start}:{b.stop}] {v.name} ({v.kind}){extra}")
        lines.append(f"  choice {self.choice.name}: {list(self.alternatives)}")
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    schema: EncodingSchema
    ids: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        Y = np.ascontiguousarray(self.Y, dtype=float)
        ids = np.asarray(self.ids).astype(str)
        n = X.shape[0]
        if X.ndim != 2 or X.shape[1] != self.schema.encoded_width:
            raise SchemaError(f"X has shape {X.shape}, schema expects width {self.schema.encoded_width}")
        if Y.shape != (n, self.schema.n_alternatives):
            raise SchemaError(f"Y has shape {Y.shape}, expected ({n}, {self.schema.n_alternatives})")
        if ids.shape != (n,):
            raise SchemaError("ids length does not match record count")
        if n and not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
            raise IngestionError("Y rows must be one-hot")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.X.shape[0]

    @property
    def choices(self):
        return np.argmax(self.Y, axis=1)

    @property
    def class_shares(self):
        return self.Y.mean(axis=0)

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(int)
        return Dataset(self.X[idx], self.Y[idx], self.schema, self.ids[idx])

    def checksum(self):
        return _io.sha256_text(
            self.X.tobytes().hex() + self.Y.tobytes().hex() + "|".join(self.ids) + self.schema.hash
        )

    def save(self, path):
        meta = {
            "kind": "dataset",
            "format_version": _io.FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.hash,
        }
        _io.write_npz(path, {"X": self.X, "Y": self.Y, "ids": self.ids.astype("U")}, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = _io.read_npz(path)
        if meta.get("kind") != "dataset":
            raise IngestionError(f"{path}: not a dataset file")
        if meta.get("format_version") != _io.FORMAT_VERSION:
            raise IngestionError(f"{path}: unsupported format version {meta.get('format_version')}")
        schema = EncodingSchema.from_dict(meta["schema"])
        if schema.hash != meta["schema_hash"]:
            raise IngestionError(f"{path}: embedded schema hash mismatch")
        return cls(arrays["X"], arrays["Y"], schema, arrays["ids"])


def _row_ids(raw, id_column=None):
    if id_column is not None:
        if id_column not in raw.columns:
            raise SchemaError(f"missing id column {id_column!r}")
        return raw[id_column].astype(str).to_numpy()
    return np.asarray([str(i) for i in raw.index])


def _numeric(raw, name, ids):
    col = pd.to_numeric(raw[name], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(col)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestionError(f"variable {name!r}: missing or non-finite value {raw[name].iloc[i]!r} at row {ids[i]}")
    return col


def _floored_log(values, name, ids, floor):
    neg = values < 0
    if neg.any():
        i = int(np.flatnonzero(neg)[0])
        raise IngestionError(f"variable {name!r}: negative value {values[i]!r} at row {ids[i]}")
    low = values < floor
    return np.log(np.where(low, floor, values)), int(low.sum())


def _as_binary(raw, name, ids):
    mapping = {"0": 0.0, "1": 1.0, "false": 0.0, "true": 1.0, "0.0": 0.0, "1.0": 1.0}
    out = np.empty(len(raw))
    for i, v in enumerate(raw[name].tolist()):
        key = str(v).strip().lower()
        if key not in mapping:
            raise IngestionError(f"binary variable {name!r}: value {v!r} at row {ids[i]} is not 0/1")
        out[i] = mapping[key]
    return out


def _as_levels(raw, name, ids):
    col = raw[name]
    if col.isna().any():
        i = int(np.flatnonzero(col.isna().to_numpy())[0])
        raise IngestionError(f"variable {name!r}: missing value at row {ids[i]}")
    return col.astype(str).to_numpy()


def fit_schema(raw, specs, floor=LOG_FLOOR, id_column=None):
    """Resolve categorical levels and log statistics from ``raw`` (training rows only)."""
    if len(raw) == 0:
        raise IngestionError("cannot fit a schema on an empty table")
    specs = [s if isinstance(s, VariableSpec) else VariableSpec.from_dict(s) for s in specs]
    for s in specs:
        if s.name not in raw.columns:
            raise SchemaError(f"missing column {s.name!r}")
    ids = _row_ids(raw, id_column)
    resolved, stats, floors = [], {}, {}
    for s in specs:
        if s.kind == "categorical" and s.levels is None:
            levels = tuple(sorted(set(_as_levels(raw, s.name, ids))))
            s = VariableSpec(s.name, s.kind, levels=levels, role=s.role)
        if s.kind == "continuous":
            logs, n_floored = _floored_log(_numeric(raw, s.name, ids), s.name, ids, floor)
            std = float(np.std(logs))
            if not std > 0:
                raise IngestionError(f"variable {s.name!r}: degenerate variable (zero variance of log values)")
            stats[s.name] = (float(np.mean(logs)), std)
            floors[s.name] = n_floored
        resolved.append(s)
    return EncodingSchema(tuple(resolved), stats, floors)


def encode(raw, schema, id_column=None, floor=LOG_FLOOR):
    """Encode ``raw`` with a previously fitted ``schema``; never refits statistics."""
    for v in schema.variables:
        if v.name not in raw.columns:
            raise SchemaError(f"missing column {v.name!r}")
    ids = _row_ids(raw, id_column)
    n = len(raw)
    X = np.empty((n, schema.encoded_width))
    for v, b in zip(schema.explanatory, schema.blocks):
        if v.kind == "continuous":
            logs, _ = _floored_log(_numeric(raw, v.name, ids), v.name, ids, floor)
            mean, std = schema.continuous_stats[v.name]
            X[:, b.start] = (logs - mean) / std
        elif v.kind == "categorical":
            X[:, b.slice] = _one_hot(_as_levels(raw, v.name, ids), v, ids)
        elif v.kind == "cyclical":
            angle = 2.0 * np.pi * _numeric(raw, v.name, ids) / v.period
            X[:, b.start] = np.sin(angle)
            X[:, b.start + 1] = np.cos(angle)
        else:
            X[:, b.start] = _as_binary(raw, v.name, ids)
    choice = schema.choice
    Y = _one_hot(_as_levels(raw, choice.name, ids), choice, ids)
    return Dataset(X, Y, schema, ids)


def _one_hot(values, spec, ids):
    index = {lvl: i for i, lvl in enumerate(spec.levels)}
    out = np.zeros((len(values), len(spec.levels)))
    for i, v in enumerate(values):
        j = index.get(v)
        if j is None:
            raise IngestionError(f"variable {spec.name!r}: unseen level {v!r} at row {ids[i]}")
        out[i, j] = 1.0
    return out


def decode(dataset):
    """Map an encoded dataset back to raw units (exp of de-standardized logs, levels, angles)."""
    schema = dataset.schema
    cols = {}
    for v, b in zip(schema.explanatory, schema.blocks):
        block = dataset.X[:, b.slice]
        if v.kind == "continuous":
            mean, std = schema.continuous_stats[v.name]
            cols[v.name] = np.exp(block[:, 0] * std + mean)
        elif v.kind == "categorical":
            cols[v.name] = np.asarray(v.levels, dtype=object)[np.argmax(block, axis=1)]
        elif v.kind == "cyclical":
            angle = np.arctan2(block[:, 0], block[:, 1])
            cols[v.name] = np.mod(angle / (2.0 * np.pi) * v.period, v.period)
        else:
            cols[v.name] = block[:, 0].astype(int)
    cols[schema.choice.name] = np.asarray(schema.alternatives, dtype=object)[dataset.choices]
    frame = pd.DataFrame(cols, index=pd.Index(dataset.ids, name="id"))
    return frame[[v.name for v in schema.variables]]


def split_indices(labels, train_fraction, seed):
    """Stratified, reproducible partition of ``range(len(labels))``.

    The training size is ``round(train_fraction * N)``; per-class quotas are
    assigned by largest remainder so they add up to it exactly.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if n < 2:
        raise ValueError("need at least 2 records to split")
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    classes, inverse = np.unique(labels, return_inverse=True)
    counts = np.bincount(inverse)
    exact = counts * (n_train / n)
    quota = np.floor(exact).astype(int)
    short = n_train - quota.sum()
    order = np.lexsort((np.arange(len(classes)), -(exact - quota)))
    quota[order[:short]] += 1
    rng = np.random.default_rng(seed)
    train = []
    for k in range(len(classes)):
        members = np.flatnonzero(inverse == k)
        train.append(rng.permutation(members)[: quota[k]])
    train_idx = np.sort(np.concatenate(train))
    mask = np.zeros(n, dtype=bool)
    mask[train_idx] = True
    return train_idx, np.flatnonzero(~mask)


def split(dataset, train_fraction, seed):
    train_idx, valid_idx = split_indices(dataset.choices, train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(valid_idx)


def read_csv(path):
    return pd.read_csv(path, encoding="utf-8", comment=None)
