"""Config-driven experiment harness.

An experiment reads one INI file describing the data source, the model,
training options, and sweep lists, runs every (setting, seed) grid point,
and writes ``results.csv`` plus ``summary.json`` into the output
directory.  Rows stream to disk in grid order as jobs finish, so a
failed sweep keeps the rows computed before the failure, and a repeated
run with the same config reproduces the file byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import json
import multiprocessing
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics, synthetic
from .augment import assemble, build_graph, generate_entries
from .errors import ConfigurationError, FairtensorError
from .models import init_model
from .sparse import (
    SensitiveContext,
    downsample_minority,
    load_sensitive,
    load_tensor,
    split,
)
from .training import OBJECTIVES, TrainConfig, train

MODEL_KINDS = ("cp", "costco")


def _parse_floats(text: str):
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _parse_ints(text: str):
    return tuple(int(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _parse_words(text: str):
    return tuple(t for t in re.split(r"[,\s]+", text.strip()) if t)


def _fmt_seq(values) -> str:
    return " ".join(repr(v) if isinstance(v, float) else str(v)
                    for v in values)


@dataclass
class ExperimentConfig:
    """Everything an experiment run needs, with printable defaults."""

    # [data]
    source: str = "synthetic"
    entries_path: str = ""
    groups_path: str = ""
    dims: tuple | None = None
    sensitive_mode: int = 0
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0

    # [synthetic]
    synth_dims: tuple = (60, 40, 20)
    synth_rank: int = 3
    majority_entities: int = 30
    minority_entities: int = 30
    majority_density: float = 0.5
    minority_density: float = 0.05
    noise_std: float = 0.1
    factor_scale: float = 1.0
    synth_seed: int = 0

    # [model]
    kind: str = "cp"
    rank: int = 10
    channels: int = 8
    hidden_units: int = 32
    activation: str = "relu"
    init_scale: float = 0.1

    # [train]
    batch_size: int = 1024
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    max_epochs: int = 200
    patience: int = 10
    pretrain_epochs: int | None = None

    # [experiment]
    objectives: tuple = ("plain",)
    seeds: tuple = (0, 1, 2)
    keep_rates: tuple = (1.0,)
    lambda_f: tuple = tuple(float(x) for x in np.logspace(-6, 2, 9))
    gammas: tuple = (0.1, 0.5, 0.9, 1.0)
    ks: tuple = (3, 5, 7, 9, 11, 13, 15)
    n_own: int = 30
    n_borrowed: int = 30
    targets: str = "all"
    workers: int = 1
    output_dir: str = "results"

    def validate(self) -> None:
        if self.source not in ("synthetic", "files"):
            raise ConfigurationError(
                f"data source must be 'synthetic' or 'files', got "
                f"{self.source!r}"
            )
        if self.source == "files" and not self.entries_path:
            raise ConfigurationError(
                "source = files needs an entries path"
            )
        if self.source == "files" and not self.groups_path:
            raise ConfigurationError(
                "source = files needs a groups path"
            )
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(
                f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}"
            )
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ConfigurationError(
                    f"objective {obj!r} not in {OBJECTIVES}"
                )
        if not self.objectives:
            raise ConfigurationError("at least one objective is required")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.keep_rates:
            raise ConfigurationError("at least one keep_rate is required")
        for kr in self.keep_rates:
            if not 0.0 < kr <= 1.0:
                raise ConfigurationError(
                    f"keep_rate must lie in (0, 1], got {kr}"
                )
        if len(self.split_ratios) != 3:
            raise ConfigurationError(
                f"split_ratios needs three values, got {self.split_ratios}"
            )
        needs_lf = [o for o in self.objectives if o != "plain"]
        if needs_lf and not self.lambda_f:
            raise ConfigurationError(
                f"objectives {needs_lf} need a lambda_f list"
            )
        if "staff" in self.objectives and (not self.gammas or not self.ks):
            raise ConfigurationError(
                "the staff objective needs gamma and k lists"
            )
        if self.workers < 1:
            raise ConfigurationError(
                f"workers must be >= 1, got {self.workers}"
            )
        if self.n_own < 0 or self.n_borrowed < 0:
            raise ConfigurationError("entry budgets must be non-negative")

    def synth_spec(self) -> synthetic.SynthSpec:
        return synthetic.SynthSpec(
            dims=self.synth_dims,
            rank=self.synth_rank,
            sensitive_mode=self.sensitive_mode,
            majority_entities=self.majority_entities,
            minority_entities=self.minority_entities,
            majority_density=self.majority_density,
            minority_density=self.minority_density,
            noise_std=self.noise_std,
            factor_scale=self.factor_scale,
            seed=self.synth_seed,
        )

    def train_config(self, objective, fairness_coeff, seed,
                     max_epochs=None) -> TrainConfig:
        return TrainConfig(
            rank=self.rank,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            fairness_coeff=fairness_coeff,
            max_epochs=self.max_epochs if max_epochs is None else max_epochs,
            patience=self.patience,
            seed=seed,
            objective=objective,
        )


_SECTION_FIELDS = {
    "data": {
        "source": ("source", str),
        "entries": ("entries_path", str),
        "groups": ("groups_path", str),
        "dims": ("dims", "ints_or_none"),
        "sensitive_mode": ("sensitive_mode", int),
        "split_ratios": ("split_ratios", "floats"),
        "split_seed": ("split_seed", int),
    },
    "synthetic": {
        "dims": ("synth_dims", "ints"),
        "rank": ("synth_rank", int),
        "majority_entities": ("majority_entities", int),
        "minority_entities": ("minority_entities", int),
        "majority_density": ("majority_density", float),
        "minority_density": ("minority_density", float),
        "noise_std": ("noise_std", float),
        "factor_scale": ("factor_scale", float),
        "seed": ("synth_seed", int),
    },
    "model": {
        "kind": ("kind", str),
        "rank": ("rank", int),
        "channels": ("channels", int),
        "hidden_units": ("hidden_units", int),
        "activation": ("activation", str),
        "init_scale": ("init_scale", float),
    },
    "train": {
        "batch_size": ("batch_size", int),
        "learning_rate": ("learning_rate", float),
        "weight_decay": ("weight_decay", float),
        "max_epochs": ("max_epochs", int),
        "patience": ("patience", int),
        "pretrain_epochs": ("pretrain_epochs", "int_or_none"),
    },
    "experiment": {
        "objectives": ("objectives", "words"),
        "seeds": ("seeds", "ints"),
        "keep_rates": ("keep_rates", "floats"),
        "lambda_f": ("lambda_f", "floats"),
        "gammas": ("gammas", "floats"),
        "ks": ("ks", "ints"),
        "n_own": ("n_own", int),
        "n_borrowed": ("n_borrowed", int),
        "targets": ("targets", str),
        "workers": ("workers", int),
        "output_dir": ("output_dir", str),
    },
}


def _convert(raw: str, spec, key: str):
    raw = raw.strip()
    try:
        if spec is str:
            return raw
        if spec is int:
            return int(raw)
        if spec is float:
            return float(raw)
        if spec == "ints":
            return _parse_ints(raw)
        if spec == "floats":
            return _parse_floats(raw)
        if spec == "words":
            return _parse_words(raw)
        if spec == "ints_or_none":
            return _parse_ints(raw) if raw else None
        if spec == "int_or_none":
            return int(raw) if raw else None
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key!r}: {exc}") from exc
    raise AssertionError(spec)


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file; unknown keys are rejected."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc

    overrides = {}
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigurationError(
                f"unknown config section [{section}]"
            )
        known = _SECTION_FIELDS[section]
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(
                    f"unknown key {key!r} in section [{section}]"
                )
            attr, spec = known[key]
            overrides[attr] = _convert(raw, spec, f"{section}.{key}")
    cfg = replace(ExperimentConfig(), **overrides)
    cfg.validate()
    return cfg


def default_config_text() -> str:
    """A complete config file populated with the defaults."""
    c = ExperimentConfig()
    return "\n".join([
        "# fairtensor experiment configuration (defaults)",
        "",
        "[data]",
        f"source = {c.source}          # synthetic | files",
        "entries =                    # COO text file when source = files",
        "groups =                     # entity group labels, one per line",
        "dims =                       # blank: infer from the entry file",
        f"sensitive_mode = {c.sensitive_mode}",
        f"split_ratios = {_fmt_seq(c.split_ratios)}",
        f"split_seed = {c.split_seed}",
        "",
        "[synthetic]",
        f"dims = {_fmt_seq(c.synth_dims)}",
        f"rank = {c.synth_rank}",
        f"majority_entities = {c.majority_entities}",
        f"minority_entities = {c.minority_entities}",
        f"majority_density = {c.majority_density!r}",
        f"minority_density = {c.minority_density!r}",
        f"noise_std = {c.noise_std!r}",
        f"factor_scale = {c.factor_scale!r}",
        f"seed = {c.synth_seed}",
        "",
        "[model]",
        f"kind = {c.kind}              # cp | costco",
        f"rank = {c.rank}",
        f"channels = {c.channels}",
        f"hidden_units = {c.hidden_units}",
        f"activation = {c.activation}",
        f"init_scale = {c.init_scale!r}",
        "",
        "[train]",
        f"batch_size = {c.batch_size}",
        f"learning_rate = {c.learning_rate!r}",
        f"weight_decay = {c.weight_decay!r}",
        f"max_epochs = {c.max_epochs}",
        f"patience = {c.patience}",
        "pretrain_epochs =            # blank: same budget as max_epochs",
        "",
        "[experiment]",
        f"objectives = {' '.join(c.objectives)}",
        f"seeds = {_fmt_seq(c.seeds)}",
        f"keep_rates = {_fmt_seq(c.keep_rates)}",
        f"lambda_f = {_fmt_seq(c.lambda_f)}",
        f"gammas = {_fmt_seq(c.gammas)}",
        f"ks = {_fmt_seq(c.ks)}",
        f"n_own = {c.n_own}",
        f"n_borrowed = {c.n_borrowed}",
        f"targets = {c.targets}        # all | below_median",
        f"workers = {c.workers}",
        f"output_dir = {c.output_dir}",
        "",
    ])


@dataclass(frozen=True)
class Setting:
    """One sweep grid point, before the seed is applied."""
    objective: str
    keep_rate: float
    lambda_f: float | None
    gamma: float | None
    k: int | None


def build_grid(cfg: ExperimentConfig):
    """Deterministic sweep order: objective, keep_rate, then sweep lists.

    Plain runs once per keep_rate; the penalty objectives sweep lambda_f;
    staff sweeps lambda_f x gamma x k.
    """
    settings = []
    for objective in cfg.objectives:
        for kr in cfg.keep_rates:
            if objective == "plain":
                settings.append(Setting(objective, kr, None, None, None))
            elif objective in ("madr_penalty", "made_penalty"):
                for lf in cfg.lambda_f:
                    settings.append(Setting(objective, kr, lf, None, None))
            else:
                for lf in cfg.lambda_f:
                    for g in cfg.gammas:
                        for k in cfg.ks:
                            settings.append(Setting(objective, kr, lf, g, k))
    return settings


@dataclass
class _JobData:
    """Shared per-run data handed to workers once."""
    splits: dict
    test: object
    ctx: SensitiveContext
    cfg: ExperimentConfig


def prepare_data(cfg: ExperimentConfig) -> _JobData:
    if cfg.source == "synthetic":
        tensor, ctx, _ = synthetic.generate(cfg.synth_spec())
    else:
        tensor = load_tensor(cfg.entries_path, dims=cfg.dims)
        ctx = load_sensitive(
            cfg.groups_path, tensor.dims[cfg.sensitive_mode],
            mode=cfg.sensitive_mode,
        )
    parts = split(tensor, cfg.split_ratios, cfg.split_seed)
    splits = {}
    for kr in cfg.keep_rates:
        if kr == 1.0:
            train_t = parts.train
        else:
            train_t = downsample_minority(parts.train, ctx, kr,
                                          cfg.split_seed)
        splits[kr] = (train_t, parts.validation)
    return _JobData(splits=splits, test=parts.test, ctx=ctx, cfg=cfg)


def _init(cfg: ExperimentConfig, dims, seed):
    extra = {}
    if cfg.kind == "costco":
        extra = {
            "channels": cfg.channels,
            "hidden_units": cfg.hidden_units,
            "activation": cfg.activation,
        }
    return init_model(cfg.kind, dims, cfg.rank, scale=cfg.init_scale,
                      seed=seed, **extra)


def run_setting(setting: Setting, seed: int, data: _JobData):
    """Train one grid point and score it on the held-out test entries."""
    cfg = data.cfg
    train_t, val_t = data.splits[setting.keep_rate]
    ctx = data.ctx

    if setting.objective == "plain":
        model = _init(cfg, train_t.dims, seed)
        train(model, train_t, val_t, None,
              cfg.train_config("plain", 0.0, seed))
    elif setting.objective in ("madr_penalty", "made_penalty"):
        model = _init(cfg, train_t.dims, seed)
        train(model, train_t, val_t, ctx,
              cfg.train_config(setting.objective, setting.lambda_f, seed))
    else:
        pretrained = _init(cfg, train_t.dims, seed)
        train(pretrained, train_t, val_t, None,
              cfg.train_config("plain", 0.0, seed,
                               max_epochs=cfg.pretrain_epochs))
        graph = build_graph(
            pretrained.factors[ctx.sensitive_mode], ctx,
            setting.k, setting.gamma,
        )
        aug = generate_entries(
            train_t, graph, pretrained, ctx,
            cfg.n_own, cfg.n_borrowed, seed=seed, targets=cfg.targets,
        )
        big_train, pairs = assemble(train_t, aug)
        model = _init(cfg, big_train.dims, seed)
        train(model, big_train, val_t, ctx,
              cfg.train_config("staff", setting.lambda_f, seed),
              coupling=pairs)

    result = metrics.evaluate(model, data.test, ctx)
    return result


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def result_header(num_groups: int):
    return (
        ["model", "objective", "keep_rate", "lambda_f", "gamma", "k",
         "seed", "mse", "made", "madr"]
        + [f"mae_group{g}" for g in range(num_groups)]
    )


def result_row(cfg, setting: Setting, seed: int,
               result: metrics.EvalResult):
    return (
        [cfg.kind, setting.objective, _cell(setting.keep_rate),
         _cell(setting.lambda_f), _cell(setting.gamma), _cell(setting.k),
         str(seed), repr(result.mse), repr(result.made), repr(result.madr)]
        + [repr(g.mean_abs_error) for g in result.per_group]
    )


_WORKER_DATA = {}


def _worker_init(data):
    _WORKER_DATA["data"] = data


def _worker_run(job):
    setting, seed = job
    return run_setting(setting, seed, _WORKER_DATA["data"])


def _summarize(header, rows):
    """Mean and population std over seeds for every metric column."""
    key_cols = header[:6]
    metric_cols = header[7:]
    grouped = {}
    order = []
    for row in rows:
        key = tuple(row[:6])
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append([float(v) for v in row[7:]])
    summary = []
    for key in order:
        block = np.asarray(grouped[key])
        entry = dict(zip(key_cols, key))
        entry["n_seeds"] = len(block)
        for i, col in enumerate(metric_cols):
            entry[f"{col}_mean"] = float(block[:, i].mean())
            entry[f"{col}_std"] = float(block[:, i].std())
        summary.append(entry)
    return summary


def run_experiment(config_path, workers=None, seed_override=None,
                   out_dir=None) -> int:
    """Execute the full sweep; returns a process exit code.

    Rows stream to results.csv in grid order; summary.json is written
    only when every grid point succeeded.
    """
    try:
        cfg = load_config(config_path)
    except FairtensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if workers is not None:
        cfg = replace(cfg, workers=workers)
        cfg.validate()
    if seed_override is not None:
        cfg = replace(cfg, seeds=(seed_override,))
    if out_dir is not None:
        cfg = replace(cfg, output_dir=str(out_dir))

    try:
        data = prepare_data(cfg)
    except FairtensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    settings = build_grid(cfg)
    jobs = [(s, seed) for s in settings for seed in cfg.seeds]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = result_header(data.ctx.num_groups)

    rows = []
    failed = None
    with open(out / "results.csv", "w", newline="",
              encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        handle.flush()

        def emit(job, result):
            setting, seed = job
            row = result_row(cfg, setting, seed, result)
            writer.writerow(row)
            handle.flush()
            rows.append(row)

        try:
            if cfg.workers == 1 or len(jobs) == 1:
                _worker_init(data)
                for job in jobs:
                    emit(job, _worker_run(job))
            else:
                mp = multiprocessing.get_context("fork")
                with mp.Pool(
                    processes=min(cfg.workers, len(jobs)),
                    initializer=_worker_init, initargs=(data,),
                ) as pool:
                    for job, result in zip(
                        jobs, pool.imap(_worker_run, jobs, chunksize=1)
                    ):
                        emit(job, result)
        except Exception as exc:  # noqa: BLE001 - keep partial results
            failed = f"{type(exc).__name__}: {exc}"

    if failed is not None:
        print(
            f"error: {failed}\npartial results kept in {out / 'results.csv'}",
            file=sys.stderr,
        )
        return 1

    summary = _summarize(header, rows)
    with open(out / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2)
        handle.write("\n")
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return 0


def _select_tradeoff(rows):
    """Best setting for one objective: smallest MADE among settings whose
    mean MSE is within 10% of the objective's best mean MSE."""
    best_mse = min(r["mse"] for r in rows)
    candidates = [r for r in rows if r["mse"] <= 1.1 * best_mse]
    return min(candidates, key=lambda r: r["made"])


def report(results_dir) -> int:
    """Condense results.csv into a per-objective trade-off table."""
    path = Path(results_dir) / "results.csv"
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            raw = list(reader)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 1
    if header is None or not raw:
        print(f"error: {path} holds no result rows", file=sys.stderr)
        return 1

    col = {name: i for i, name in enumerate(header)}
    per_setting = {}
    for row in raw:
        key = tuple(row[: col["seed"]])
        per_setting.setdefault(key, []).append(
            (float(row[col["mse"]]), float(row[col["made"]]))
        )

    by_objective = {}
    for key, vals in per_setting.items():
        model, objective, keep_rate, lf, gamma, k = key
        arr = np.asarray(vals)
        by_objective.setdefault((model, keep_rate), {}).setdefault(
            objective, []
        ).append({
            "lambda_f": lf, "gamma": gamma, "k": k,
            "mse": float(arr[:, 0].mean()),
            "made": float(arr[:, 1].mean()),
        })

    out_rows = []
    for (model, keep_rate), objectives in by_objective.items():
        chosen = {
            obj: _select_tradeoff(rows) for obj, rows in objectives.items()
        }
        for obj, pick in chosen.items():
            dominated = any(
                other is not pick
                and o_mse <= pick["mse"] and o_made <= pick["made"]
                and (o_mse < pick["mse"] or o_made < pick["made"])
                for other in chosen.values()
                for o_mse, o_made in [(other["mse"], other["made"])]
            )
            out_rows.append({
                "model": model,
                "keep_rate": keep_rate,
                "objective": obj,
                "lambda_f": pick["lambda_f"],
                "gamma": pick["gamma"],
                "k": pick["k"],
                "mse": pick["mse"],
                "made": pick["made"],
                "mse_x100": pick["mse"] * 100.0,
                "made_x100": pick["made"] * 100.0,
                "pareto": "dominated" if dominated else "optimal",
            })

    out_path = Path(results_dir) / "tradeoff.csv"
    fields = ["model", "keep_rate", "objective", "lambda_f", "gamma", "k",
              "mse", "made", "mse_x100", "made_x100", "pareto"]
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in out_rows:
            writer.writerow({
                k: (repr(v) if isinstance(v, float) else v)
                for k, v in row.items()
            })

    widths = {f: max(len(f), *(len(str(r[f])) for r in out_rows))
              for f in ("model", "keep_rate", "objective", "pareto")}
    print(
        f"{'model':<{widths['model']}}  "
        f"{'keep_rate':<{widths['keep_rate']}}  "
        f"{'objective':<{widths['objective']}}  "
        f"{'mse*100':>10}  {'made*100':>10}  pareto"
    )
    for r in out_rows:
        print(
            f"{r['model']:<{widths['model']}}  "
            f"{r['keep_rate']:<{widths['keep_rate']}}  "
            f"{r['objective']:<{widths['objective']}}  "
            f"{r['mse_x100']:>10.4f}  {r['made_x100']:>10.4f}  "
            f"{r['pareto']}"
        )
    print(f"wrote {out_path}")
    return 0
