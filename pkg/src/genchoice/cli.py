"""Batch pipeline driven by a single YAML experiment file.

    genchoice {encode,train,report,generate,impute,sensitivity} CONFIG [--set key=value ...]

Relative paths in the config resolve against the config file's directory.
Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""
import argparse
import copy
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__, _io, plotting
from .choice import choice_probabilities, predict, relative_beta
from .data import Dataset, VariableSpec, decode, encode, fit_schema, read_csv, split_indices
from .diagnostics import activation_stats, beta_sensitivity, maxent_report
from .energy import ModelParams
from .errors import ConfigError, GenchoiceError, IngestionError, NumericalError, SchemaError
from .generator import distribution_report, generate, impute
from .trainer import TrainConfig, TrainState, train

log = logging.getLogger("genchoice")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "output": "run",
    "jobs": 1,
    "data": {
        "raw": None,
        "id_column": None,
        "train_fraction": 0.7,
        "split_seed": 0,
        "variables": None,
    },
    "train": {},
    "generate": {
        "count": 1000,
        "burn_in": 1000,
        "thin": 10,
        "chains": None,
        "seed": 0,
        "init": "train",
        "bins": 20,
    },
    "report": {
        "dataset": "valid",
        "threshold": 0.5,
        "generate": False,
        "sensitivity": None,
    },
    "impute": {
        "input": None,
        "targets": None,
        "steps": 100,
        "draws": 1,
        "seed": 0,
    },
}

# settings that change where results go or how fast, never what they are
_UNHASHED = ("output", "jobs")


class DataError(GenchoiceError):
    """Input files are missing or inconsistent with each other."""


def _line_map(node, path=(), out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            _line_map(value, path + (key.value,), out)
            out[path + (key.value,)] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            _line_map(value, path + (i,), out)
    return out


def _merge(defaults, given, where, fail):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            fail(where + (key,), f"unknown setting {'.'.join(map(str, where + (key,)))!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                fail(where + (key,), f"section {key!r} must be a mapping")
            out[key] = _merge(defaults[key], value, where + (key,), fail)
        else:
            out[key] = value
    return out


class Config:
    """Validated experiment settings with line numbers for error messages."""

    def __init__(self, path, overrides=()):
        self.path = Path(path)
        if not self.path.is_file():
            raise ConfigError(f"config file not found: {self.path}")
        text = self.path.read_text(encoding="utf-8")
        try:
            node = yaml.compose(text)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" line {mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{self.path}{where}: {getattr(exc, 'problem', None) or exc}") from None
        self.lines = _line_map(node) if node is not None else {}
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            self.fail((), "top level must be a mapping")
        self.overridden = set()
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            keys = tuple(key.split("."))
            target = raw
            for k in keys[:-1]:
                target = target.setdefault(k, {})
                if not isinstance(target, dict):
                    raise ConfigError(f"--set {key}: {k!r} is not a section")
            target[keys[-1]] = yaml.safe_load(value)
            self.overridden.add(keys)
        self.data = _merge(DEFAULTS, raw, (), self.fail)
        self._validate()

    def fail(self, where, message):
        where = tuple(where)
        if where in self.overridden:
            raise ConfigError(f"--set {'.'.join(map(str, where))}: {message}")
        probe = where
        while probe and probe not in self.lines:
            probe = probe[:-1]
        line = self.lines.get(probe)
        loc = f" line {line}" if line is not None else ""
        raise ConfigError(f"{self.path}{loc}: {message}")

    def __getitem__(self, key):
        return self.data[key]

    def _validate(self):
        d = self.data["data"]
        if d["variables"] is not None:
            if not isinstance(d["variables"], list) or not d["variables"]:
                self.fail(("data", "variables"), "data.variables must be a non-empty list")
            for i, v in enumerate(d["variables"]):
                if not isinstance(v, dict):
                    self.fail(("data", "variables", i), "each variable must be a mapping")
                try:
                    VariableSpec.from_dict(v)
                except (SchemaError, KeyError, TypeError) as exc:
                    self.fail(("data", "variables", i), f"bad variable declaration: {exc}")
            if sum(v.get("role") == "choice" for v in d["variables"]) != 1:
                self.fail(("data", "variables"), "exactly one variable must have role: choice")
        if not 0.0 < float(d["train_fraction"]) < 1.0:
            self.fail(("data", "train_fraction"), "train_fraction must lie in (0, 1)")
        try:
            self.train_config()
        except (ConfigError, TypeError, ValueError) as exc:
            self.fail(("train",), str(exc))
        g = self.data["generate"]
        if g["init"] not in ("train", "valid", "none"):
            self.fail(("generate", "init"), "generate.init must be train, valid or none")
        for key in ("count", "thin", "bins"):
            if int(g[key]) < 1:
                self.fail(("generate", key), f"generate.{key} must be >= 1")
        if int(g["burn_in"]) < 0:
            self.fail(("generate", "burn_in"), "generate.burn_in must be >= 0")
        r = self.data["report"]
        if r["dataset"] not in ("train", "valid"):
            self.fail(("report", "dataset"), "report.dataset must be train or valid")
        if not 0.0 < float(r["threshold"]) < 1.0:
            self.fail(("report", "threshold"), "report.threshold must lie in (0, 1)")
        if int(self.data["jobs"]) < 1:
            self.fail(("jobs",), "jobs must be >= 1")

    def require(self, where):
        section = self.data
        for k in where:
            section = section[k]
        if section is None:
            self.fail(where, f"{'.'.join(where)} is required for this command")
        return section

    def resolve(self, path):
        path = Path(path)
        return path if path.is_absolute() else self.path.parent / path

    @property
    def output(self):
        out = self.resolve(self.data["output"])
        out.mkdir(parents=True, exist_ok=True)
        return out

    @property
    def hash(self):
        hashed = {k: v for k, v in self.data.items() if k not in _UNHASHED}
        return _io.sha256_text(_io.canonical_json(hashed))[:16]

    def train_config(self):
        return TrainConfig.from_dict(self.data["train"])

    def provenance(self, schema_hash, seed):
        return {"config_hash": self.hash, "schema_hash": schema_hash, "seed": seed, "version": __version__}


def _load(path, loader, what):
    if not Path(path).is_file():
        raise DataError(f"{what} not found: {path}")
    return loader(path)


def _load_split(cfg):
    out = cfg.output
    return (_load(out / "train.npz", Dataset.load, "encoded training set (run encode first)"),
            _load(out / "valid.npz", Dataset.load, "encoded validation set (run encode first)"))


def _check_schema(params, dataset, what):
    if params.schema_hash != dataset.schema.hash:
        raise DataError(f"schema hash mismatch: checkpoint {params.schema_hash} vs {what} {dataset.schema.hash}")
    if (params.M, params.J) != (dataset.schema.encoded_width, dataset.schema.n_alternatives):
        raise DataError(f"checkpoint dimensions M={params.M}, J={params.J} do not match the {what} schema")


def _write_text(path, lines, provenance):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_io.provenance_lines(provenance))
        fh.write("\n".join(lines) + "\n")


def cmd_encode(cfg, args):
    d = cfg["data"]
    variables = cfg.require(("data", "variables"))
    raw_path = cfg.resolve(cfg.require(("data", "raw")))
    raw = _load(raw_path, read_csv, "raw data file")
    specs = [VariableSpec.from_dict(v) for v in variables]
    choice = next(s.name for s in specs if s.role == "choice")
    if choice not in raw.columns:
        raise SchemaError(f"{raw_path}: missing choice column {choice!r}")
    tr, va = split_indices(raw[choice].astype(str).to_numpy(), float(d["train_fraction"]), int(d["split_seed"]))
    schema = fit_schema(raw.iloc[tr], specs, id_column=d["id_column"])
    train_ds = encode(raw.iloc[tr], schema, id_column=d["id_column"])
    valid_ds = encode(raw.iloc[va], schema, id_column=d["id_column"])
    out = cfg.output
    train_ds.save(out / "train.npz")
    valid_ds.save(out / "valid.npz")
    shares = pd.DataFrame({
        "alternative": schema.alternatives,
        "train_share": train_ds.class_shares,
        "valid_share": valid_ds.class_shares,
    })
    lines = [
        schema.describe(),
        f"records: {len(raw)} raw, {len(train_ds)} train, {len(valid_ds)} validation",
        "class shares:",
        shares.to_string(index=False, float_format=lambda v: f"{v:.4f}"),
    ]
    _write_text(out / "schema.txt", lines, cfg.provenance(schema.hash, int(d["split_seed"])))
    print(f"encoded {len(train_ds)} train and {len(valid_ds)} validation records into {out}")
    return EXIT_OK


def _timing_header(path, provenance):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_io.provenance_lines(provenance))
        fh.write("epoch,seconds\n")


def cmd_train(cfg, args):
    train_ds, valid_ds = _load_split(cfg)
    config = cfg.train_config()
    schema = train_ds.schema
    out = cfg.output
    last, best_path, timing = out / "checkpoint_last.npz", out / "checkpoint_best.npz", out / "timing.csv"
    prov = cfg.provenance(schema.hash, config.seed)
    state = None
    if args.resume:
        state, saved, _ = _load(last, TrainState.load, "checkpoint to resume")
        if state.params.schema_hash != schema.hash:
            raise DataError(f"schema hash mismatch: checkpoint {state.params.schema_hash} vs dataset {schema.hash}")
        current = config.to_dict()
        changed = sorted(k for k in current if k != "max_epochs" and saved.get(k) != current[k])
        if changed:
            raise ConfigError(f"--resume: train settings differ from the checkpoint: {changed}")
        log.info("resuming after epoch %d", state.epoch)
    if state is None or not timing.exists():
        _timing_header(timing, prov)

    def on_epoch(st):
        tmp = last.with_suffix(".tmp.npz")
        st.save(tmp, config, prov)
        os.replace(tmp, last)
        with open(timing, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{st.epoch},{st.history.records[-1].seconds:.6f}\n")

    started = time.perf_counter()
    try:
        best, history = train(train_ds, valid_ds, config, state=state, on_epoch=on_epoch)
    except NumericalError as exc:
        kept = f"; last good checkpoint kept at {last}" if last.exists() else ""
        raise NumericalError(f"{exc}{kept}", block=exc.block) from None
    wall = time.perf_counter() - started
    best.save(best_path, prov)
    hyper = {f"train.{k}": v for k, v in config.to_dict().items()}
    _io.write_csv(out / "history.csv", history.to_frame(), {**prov, **hyper})
    mode = "MNL mode (H=0)" if config.latent_count == 0 else f"RBM with H={config.latent_count} latent variables"
    lines = [
        f"model: {mode}",
        f"epochs: {len(history.records)}",
        f"best epoch: {history.best_epoch}",
        f"best validation NLL: {history.best_valid_nll:.6f}" if history.records else "best validation NLL: n/a",
    ]
    if history.refined_valid_nll is not None:
        lines.append(f"validation NLL after choice refinement: {history.refined_valid_nll:.6f}")
    lines.append(f"wall time: {wall:.2f} s")
    _write_text(out / "summary.txt", lines, prov)
    print("\n".join(lines))
    return EXIT_OK


def _checkpoint(cfg, args):
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else cfg.output / "checkpoint_best.npz"
    return _load(path, ModelParams.load, "checkpoint")


def _report_dataset(cfg, args, train_ds, valid_ds):
    choice = getattr(args, "dataset", None) or cfg["report"]["dataset"]
    if choice == "train":
        return train_ds, "train"
    if choice == "valid":
        return valid_ds, "valid"
    return _load(Path(choice), Dataset.load, "dataset"), Path(choice).name


def _generate(cfg, params, schema, train_ds, valid_ds):
    g = cfg["generate"]
    init = {"train": train_ds, "valid": valid_ds, "none": None}[g["init"]]
    return generate(params, schema, int(g["count"]), burn_in=int(g["burn_in"]), thin=int(g["thin"]),
                    rng=np.random.default_rng(int(g["seed"])), init=init, chains=g["chains"])


def _long(figure, series, x, y):
    return pd.DataFrame({"figure": figure, "series": series, "x": list(x), "y": list(y)})


def _sensitivity(cfg, sizes, train_ds, valid_ds, out):
    config = cfg.train_config()
    res = beta_sensitivity(train_ds, valid_ds, sizes, config, jobs=int(cfg["jobs"]))
    prov = cfg.provenance(train_ds.schema.hash, config.seed)
    _io.write_csv(out / "sensitivity_maxent.csv", res.maxent.to_frame(), prov)
    _io.write_csv(out / "sensitivity_beta.csv", res.beta_frame(), prov)
    _io.write_csv(out / "sensitivity_nll.csv", pd.DataFrame({"S": res.sizes, "valid_nll": res.valid_nll}), prov)
    plotting.maxent_by_size(res.maxent, out / "maxent_by_size.png")
    plotting.beta_by_size(res, out / "beta_by_size.png")
    frames = [_long("maxent_by_size", row, res.sizes, vals) for row, vals in zip(res.maxent.rows, res.maxent.values)]
    frames.append(_long("maxent_by_size", "mean", res.sizes, res.maxent.mean))
    return res, frames


def _sizes(value):
    items = str(value).split(",") if isinstance(value, str) else value
    try:
        sizes = [int(s) for s in items if str(s).strip()]
    except (TypeError, ValueError):
        raise ConfigError(f"latent sizes must be integers, got {value!r}") from None
    if 0 not in sizes or min(sizes) < 0 or len(set(sizes)) != len(sizes):
        raise ConfigError(f"latent sizes must be distinct, non-negative and include 0, got {sizes}")
    return sizes


def cmd_report(cfg, args):
    params = _checkpoint(cfg, args)
    train_ds, valid_ds = _load_split(cfg)
    ds, name = _report_dataset(cfg, args, train_ds, valid_ds)
    _check_schema(params, ds, f"dataset {name}")
    schema = ds.schema
    rep = cfg.output / "report"
    rep.mkdir(exist_ok=True)
    prov = cfg.provenance(schema.hash, cfg.train_config().seed)
    alts = list(schema.alternatives)

    _, predicted = predict(ds, params)
    share = pd.DataFrame({"alternative": alts, "observed": ds.class_shares, "predicted": predicted})
    _io.write_csv(rep / "mode_share.csv", share, prov)
    _io.write_csv(rep / "utilities.csv", choice_probabilities(ds.X, params).to_frame(alts, ds.ids), prov)
    _io.write_csv(rep / "maxent.csv", maxent_report({params.H: params}, ds.class_shares, schema).to_frame(), prov)
    activation = activation_stats(params, ds, float(cfg["report"]["threshold"]))
    _io.write_csv(rep / "activation.csv", activation, prov)
    rel = relative_beta(params)
    beta = pd.DataFrame([{"parameter": col, "alternative": alt, "beta": rel[m, j]}
                         for m, col in enumerate(schema.columns) for j, alt in enumerate(alts)])
    _io.write_csv(rep / "beta.csv", beta, prov)

    frames = [_long("mode_share", "observed", alts, ds.class_shares), _long("mode_share", "predicted", alts, predicted)]
    plotting.mode_share(alts, ds.class_shares, predicted, rep / "mode_share.png")
    if params.H > 0:
        plotting.latent_weights(activation, rep / "latent_weights.png")
        frames += [_long("latent_weights", "wp_mean", alts, activation["wp_mean"]),
                   _long("latent_weights", "wp_std", alts, activation["wp_std"])]
    history = cfg.output / "history.csv"
    if history.is_file():
        hist = pd.read_csv(history, comment="#")
        plotting.learning_curve(hist, rep / "learning_curve.png")
        frames += [_long("learning_curve", "train_nll", hist["epoch"], hist["train_nll"]),
                   _long("learning_curve", "valid_nll", hist["epoch"], hist["valid_nll"])]

    if args.generate or cfg["report"]["generate"]:
        synth = _generate(cfg, params, schema, train_ds, valid_ds)
        gprov = cfg.provenance(schema.hash, int(cfg["generate"]["seed"]))
        rows = []
        for v in schema.variables:
            fit = distribution_report(ds, synth, v.name, bins=int(cfg["generate"]["bins"]))
            rows.append({"variable": v.name, "adjusted_r2": fit.adjusted_r2, "r2": fit.r2, "bins": len(fit.labels)})
            _io.write_csv(rep / f"fit_{v.name}.csv", fit.to_frame(), gprov)
            plotting.histogram_pair(fit, rep / f"hist_{v.name}.png")
            frames += [_long(f"hist_{v.name}", "real", fit.labels, fit.real_freq),
                       _long(f"hist_{v.name}", "synthetic", fit.labels, fit.synth_freq)]
        _io.write_csv(rep / "fit_summary.csv", pd.DataFrame(rows), gprov)

    sizes = args.sensitivity if args.sensitivity is not None else cfg["report"]["sensitivity"]
    if sizes:
        _, extra = _sensitivity(cfg, _sizes(sizes), train_ds, valid_ds, rep)
        frames += extra
    _io.write_csv(rep / "plot_data.csv", pd.concat(frames, ignore_index=True), prov)
    print(share.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"report written to {rep}")
    return EXIT_OK


def cmd_sensitivity(cfg, args):
    train_ds, valid_ds = _load_split(cfg)
    sizes = args.sizes if args.sizes is not None else cfg["report"]["sensitivity"]
    if not sizes:
        raise ConfigError("no latent sizes given (use --sizes or report.sensitivity)")
    out = cfg.output / "sensitivity"
    out.mkdir(exist_ok=True)
    res, frames = _sensitivity(cfg, _sizes(sizes), train_ds, valid_ds, out)
    prov = cfg.provenance(train_ds.schema.hash, cfg.train_config().seed)
    _io.write_csv(out / "plot_data.csv", pd.concat(frames, ignore_index=True), prov)
    print(res.maxent.to_frame().to_string(index=False))
    return EXIT_OK


def cmd_generate(cfg, args):
    params = _checkpoint(cfg, args)
    train_ds, valid_ds = _load_split(cfg)
    _check_schema(params, train_ds, "training set")
    synth = _generate(cfg, params, train_ds.schema, train_ds, valid_ds)
    out = cfg.output
    synth.save(out / "synthetic.npz")
    prov = cfg.provenance(train_ds.schema.hash, int(cfg["generate"]["seed"]))
    _io.write_csv(out / "synthetic.csv", decode(synth).reset_index(), prov)
    print(f"wrote {len(synth)} synthetic records to {out}")
    return EXIT_OK


def _placeholder(spec):
    if spec.kind == "categorical":
        return spec.levels[0]
    return 1.0 if spec.kind == "continuous" else 0


def cmd_impute(cfg, args):
    params = _checkpoint(cfg, args)
    train_ds, _ = _load_split(cfg)
    _check_schema(params, train_ds, "training set")
    schema = train_ds.schema
    imp = cfg["impute"]
    targets = args.targets.split(",") if args.targets else cfg.require(("impute", "targets"))
    targets = [targets] if isinstance(targets, str) else list(targets)
    unknown = sorted(set(targets) - {v.name for v in schema.variables})
    if unknown:
        raise ConfigError(f"unknown impute targets: {unknown}")
    source = Path(args.input) if args.input else cfg.resolve(cfg.require(("impute", "input")))
    raw = _load(source, read_csv, "impute input file").copy()
    for t in targets:
        raw[t] = _placeholder(schema.variable(t))
    ds = encode(raw, schema, id_column=cfg["data"]["id_column"])
    rng = np.random.default_rng(int(imp["seed"]))
    draws = int(imp["draws"])
    frames = []
    for i in range(len(ds)):
        X, Y = impute(ds.X[i], ds.Y[i], set(targets), params, schema, steps=int(imp["steps"]), rng=rng, draws=draws)
        frame = decode(Dataset(X, Y, schema, [ds.ids[i]] * draws)).reset_index()
        frame.insert(1, "draw", np.arange(draws))
        frames.append(frame)
    out = cfg.output
    _io.write_csv(out / "imputed.csv", pd.concat(frames, ignore_index=True),
                  cfg.provenance(schema.hash, int(imp["seed"])))
    print(f"imputed {', '.join(targets)} for {len(ds)} records ({draws} draw(s) each) into {out / 'imputed.csv'}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="genchoice", description="Entropy-corrected choice models: encode, train, report.")
    parser.add_argument("--version", action="version", version=f"genchoice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("config", help="experiment YAML file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.latent_count=8")
        p.add_argument("--jobs", type=int, help="cap on worker processes")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        p.set_defaults(func=func)
        return p

    command("encode", cmd_encode, "split and encode the raw CSV")
    p = command("train", cmd_train, "fit the model and write checkpoints")
    p.add_argument("--resume", action="store_true", help="continue from checkpoint_last.npz")
    p = command("report", cmd_report, "diagnostics tables and figures")
    p.add_argument("--checkpoint", help="model file (default: checkpoint_best.npz in the output directory)")
    p.add_argument("--dataset", help="train, valid or a path to an encoded dataset")
    p.add_argument("--sensitivity", help="comma-separated latent sizes, e.g. 0,5,20,35,50")
    p.add_argument("--generate", action="store_true", help="also score synthetic data against the dataset")
    p = command("generate", cmd_generate, "draw synthetic records")
    p.add_argument("--checkpoint")
    p = command("impute", cmd_impute, "resample target variables of given records")
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="CSV with the records to complete")
    p.add_argument("--targets", help="comma-separated variables to impute")
    p = command("sensitivity", cmd_sensitivity, "beta and maxent across latent sizes")
    p.add_argument("--sizes", help="comma-separated latent sizes including 0")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        overrides = list(args.set) + ([f"jobs={args.jobs}"] if args.jobs is not None else [])
        cfg = Config(args.config, overrides)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, SchemaError, IngestionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
