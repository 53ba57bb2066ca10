"""Command-line experiment runner.

Subcommands
-----------
``simulate``  write a synthetic stream (CSV) and its ground truth (JSON).
``run``       fit an algorithm roster on a stream for several repetitions and
              write per-batch metrics, a summary and final-state checkpoints.
``compare``   aggregate one or more summaries into a metric x algorithm table.

Configuration is a JSON file (see :data:`DEFAULT_EXPERIMENT` for the schema
and the defaults); any field can be overridden from the command line with a
flag mirroring its path, e.g. ``--model.alpha 2`` or
``--stream.drift_period 1``. Values are parsed as JSON when possible, so
``--algorithms '["MHPP", "PP(0.9)"]'`` works too.

Exit codes: 0 on success, 2 on configuration or input errors, 1 on runtime
errors. The default output directory is taken from ``DPMSTREAM_OUTPUT_DIR``
(``results`` when unset).
"""

from __future__ import annotations

import argparse
import copy
import csv
import glob
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dpm import ModelConfig
from .evaluation import evaluate_batch
from .expfam import ComponentPosterior
from .forgetting import AlgorithmSpec, fit_stream
from .stream import (
    StreamConfig,
    generate_stream,
    load_ground_truth,
    load_stream_csv,
    save_stream,
    truth_path_for,
)

logger = logging.getLogger(__name__)

OUTPUT_ENV = "DPMSTREAM_OUTPUT_DIR"
SEED_STRIDE = 10007
DEFAULT_ROSTER = ["MHPP", "HPP", "SVB", "PP(0.9)", "SVI", "Privileged"]

CSV_COLUMNS = [
    "rep", "algo", "t", "loglik", "silhouette", "nmi", "ari", "purity",
    "n_active", "e_rho_mean", "omega_min", "omega_max", "wall_ms",
]
SUMMARY_METRICS = ["loglik", "silhouette", "nmi", "ari", "purity", "n_active", "e_rho_mean"]
# Metrics where "higher is better" makes sense when highlighting the best algorithm.
RANKED_METRICS = {"loglik", "silhouette", "nmi", "ari", "purity"}

# The synthetic study: 20 batches of 1000/500 points from 4 clusters in 2-D,
# alpha = 2, T = 10, 100 iterations per batch, 10 repetitions. The relative
# tolerance is small enough that batches normally run to convergence well
# inside the iteration budget.
DEFAULT_EXPERIMENT = {
    "stream": {
        "n_batches": 20,
        "train_per_batch": 1000,
        "test_per_batch": 500,
        "k_true": 4,
        "dim": 2,
        "drift_period": 4,
        "seed": 0,
        "mean_box": 10.0,
        "std_range": [0.5, 1.5],
        "drift_scale": 3.0,
        "min_separation": 3.0,
    },
    "model": {"alpha": 2.0, "trunc": 10, "max_iters": 100, "tol": 1e-8, "init": "auto"},
    "algorithms": DEFAULT_ROSTER,
    "repetitions": 10,
    "seed": 0,
    "jobs": 1,
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """A fully validated experiment.

    ``stream`` is either a :class:`StreamConfig` or a CSV path/glob; for CSV
    streams ``truth`` optionally points at a ground-truth JSON file.
    """

    stream: StreamConfig | str
    model: ModelConfig
    algorithms: list[AlgorithmSpec]
    repetitions: int = 1
    seed: int = 0
    output_dir: Path = Path("results")
    jobs: int = 1
    truth: str | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be >= 1")
        if not self.algorithms:
            raise ConfigError("algorithms: at least one algorithm is required")
        if self.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"algorithms: duplicate entries in {labels}")

    @property
    def is_synthetic(self) -> bool:
        return isinstance(self.stream, StreamConfig)


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[tuple[str, str]]) -> dict:
    """Set dotted-path fields (``model.alpha``) from string values."""
    raw = copy.deepcopy(raw)
    for path, text in overrides:
        keys = path.split(".")
        node = raw
        for k in keys[:-1]:
            child = node.get(k)
            if not isinstance(child, dict):
                child = {}
                node[k] = child
            node = child
        node[keys[-1]] = _parse_value(text)
    return raw


def _build(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected an object, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown field")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        name = _field_in_message(str(exc), known)
        where = f"{section}.{name}" if name else section
        raise ConfigError(f"{where}: {exc}") from None


def _field_in_message(message: str, names) -> str | None:
    hits = [n for n in names if message.startswith(n) or f" {n} " in f" {message} "]
    return max(hits, key=len) if hits else None


def build_config(raw: dict, output_dir=None) -> ExperimentConfig:
    """Validate a raw (already merged) configuration mapping."""
    unknown = sorted(set(raw) - {"stream", "model", "algorithms", "repetitions", "seed", "output_dir", "jobs"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")

    stream_raw = raw.get("stream", {})
    truth = None
    if isinstance(stream_raw, str):
        stream = stream_raw
    elif isinstance(stream_raw, dict) and "csv" in stream_raw:
        extra = sorted(set(stream_raw) - {"csv", "truth"})
        if extra:
            raise ConfigError(f"stream.{extra[0]}: unknown field for a CSV stream")
        stream, truth = str(stream_raw["csv"]), stream_raw.get("truth")
    else:
        values = dict(stream_raw)
        if isinstance(values.get("std_range"), list):
            values["std_range"] = tuple(values["std_range"])
        stream = _build("stream", StreamConfig, values)

    model_raw = dict(raw.get("model", {}))
    if isinstance(stream, StreamConfig):
        if model_raw.setdefault("dim", stream.dim) != stream.dim:
            raise ConfigError(f"model.dim: {model_raw['dim']} does not match stream.dim {stream.dim}")
    if "prior" in model_raw:
        try:
            model_raw["prior"] = ComponentPosterior.from_dict(model_raw["prior"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model.prior: {exc}") from None
    model = _build("model", ModelConfig, model_raw)

    algos_raw = raw.get("algorithms", [])
    if not isinstance(algos_raw, list):
        raise ConfigError("algorithms: expected a list")
    algorithms = []
    for i, a in enumerate(algos_raw):
        try:
            algorithms.append(AlgorithmSpec.parse(a))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"algorithms[{i}]: {exc}") from None

    for key in ("repetitions", "seed", "jobs"):
        v = raw.get(key, DEFAULT_EXPERIMENT[key])
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
    out = output_dir or raw.get("output_dir") or default_output_dir()
    return ExperimentConfig(
        stream=stream,
        model=model,
        algorithms=algorithms,
        repetitions=raw.get("repetitions", DEFAULT_EXPERIMENT["repetitions"]),
        seed=raw.get("seed", DEFAULT_EXPERIMENT["seed"]),
        output_dir=Path(out),
        jobs=raw.get("jobs", DEFAULT_EXPERIMENT["jobs"]),
        truth=truth,
    )


def load_raw_config(path=None, overrides=()) -> dict:
    raw = copy.deepcopy(DEFAULT_EXPERIMENT)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a JSON object")
        if isinstance(user.get("stream"), (str, dict)) and _is_csv_stream(user["stream"]):
            raw.pop("stream")
        raw = _merge(raw, user)
    return apply_overrides(raw, list(overrides))


def _is_csv_stream(value) -> bool:
    return isinstance(value, str) or "csv" in value


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def run_seed(seed: int, rep: int) -> int:
    return seed + rep * SEED_STRIDE


def _load_stream(config: ExperimentConfig, rep: int):
    """Return ``(batches, ground_truth_or_None)`` for one repetition."""
    if config.is_synthetic:
        scfg = config.stream
        scfg = StreamConfig(**{**{f.name: getattr(scfg, f.name) for f in fields(scfg)}, "seed": run_seed(scfg.seed, rep)})
        return generate_stream(scfg)
    batches = load_stream_csv(config.stream)
    truth_path = config.truth
    if truth_path is None:
        # a sidecar next to the first matching file, as written by ``simulate``
        candidate = truth_path_for(sorted(glob.glob(config.stream))[0])
        truth_path = candidate if candidate.exists() else None
    truth = load_ground_truth(truth_path) if truth_path is not None else None
    return batches, truth


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def run_one(config: ExperimentConfig, rep: int, algorithm: AlgorithmSpec, batches=None, truth=None):
    """Fit one algorithm on one repetition; returns ``(rows, final_state)``."""
    if batches is None:
        batches, truth = _load_stream(config, rep)
    flags = truth.drift_flags if truth is not None else None
    if algorithm.kind == "Privileged" and flags is None:
        raise ConfigError("algorithms: Privileged needs a stream with ground-truth drift flags")
    alpha = config.model.alpha

    def score(record, batch):
        f = record.forgetting
        m = evaluate_batch(record.state, record.fit.counts, alpha, batch.test, batch.test_labels, f.e_rho_mean)
        return {
            "loglik": m.test_loglik_per_point,
            "silhouette": m.silhouette,
            "nmi": m.nmi,
            "ari": m.ari,
            "purity": m.purity,
            "n_active": m.n_active_components,
            "e_rho_mean": m.e_rho_mean,
            "omega_min": None if f.omegas is None else float(np.min(f.omegas)),
            "omega_max": None if f.omegas is None else float(np.max(f.omegas)),
        }

    records = fit_stream(
        algorithm, batches, config.model, seed=run_seed(config.seed, rep), drift_flags=flags, on_batch=score
    )
    rows = [{"rep": rep, "algo": algorithm.label, "t": r.t, **r.metrics, "wall_ms": r.wall_ms} for r in records]
    return rows, records[-1].state


def _run_task(args):
    config, rep, algorithm = args
    return run_one(config, rep, algorithm)


def summarize(rows: list[dict], algorithms: list[str], repetitions: int) -> dict:
    """Per algorithm and metric: the per-repetition stream means plus their mean and std (ddof 0)."""
    out = {}
    for algo in algorithms:
        block = {}
        for metric in SUMMARY_METRICS:
            per_rep = []
            for rep in range(repetitions):
                vals = [r[metric] for r in rows if r["algo"] == algo and r["rep"] == rep and r[metric] is not None]
                vals = np.asarray(vals, dtype=float)
                vals = vals[~np.isnan(vals)]
                per_rep.append(float(vals.mean()) if vals.size else None)
            block[metric] = _stats([v for v in per_rep if v is not None], per_rep)
        out[algo] = block
    return out


def _stats(values, per_rep=None) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()) if arr.size else None,
        "std": float(arr.std()) if arr.size else None,
        "values": list(per_rep if per_rep is not None else values),
    }


def write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r["rep"], r["algo"], r["t"]] + [_fmt(r[c]) for c in CSV_COLUMNS[3:]])


def _config_record(config: ExperimentConfig) -> dict:
    if config.is_synthetic:
        stream = {f.name: getattr(config.stream, f.name) for f in fields(config.stream)}
        stream["std_range"] = list(stream["std_range"])
    else:
        stream = {"csv": config.stream, "truth": config.truth}
    m = config.model
    return {
        "stream": stream,
        "model": {
            "alpha": m.alpha, "trunc": m.trunc, "dim": m.dim, "max_iters": m.max_iters,
            "tol": m.tol, "init": m.init, "prior": m.prior.to_dict(),
        },
        "algorithms": [a.label if a.kind != "SVI" else {
            "kind": "SVI", "svi_exponent": a.svi_exponent, "svi_delay": a.svi_delay, "dataset_size": a.dataset_size,
        } for a in config.algorithms],
        "repetitions": config.repetitions,
        "seed": config.seed,
    }


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every repetition x algorithm and write the result files.

    Files written to ``config.output_dir``: ``batches.csv`` (one row per
    batch), ``summary.json`` and ``checkpoints/<algo>_rep<r>.json`` (final
    mixture state of each run). Returns the summary mapping.
    """
    out = Path(config.output_dir)
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: cannot create {out}: {exc}") from None

    tasks = [(config, rep, algo) for rep in range(config.repetitions) for algo in config.algorithms]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = []
        cache = {}
        for config_, rep, algo in tasks:
            if rep not in cache:
                cache = {rep: _load_stream(config, rep)}
            results.append(run_one(config_, rep, algo, *cache[rep]))
            logger.info("finished %s repetition %d", algo.label, rep)

    rows = []
    for (_, rep, algo), (run_rows, state) in zip(tasks, results):
        rows.extend(run_rows)
        state.save(out / "checkpoints" / f"{_safe_name(algo.label)}_rep{rep}.json")
    rows.sort(key=lambda r: (r["rep"], [a.label for a in config.algorithms].index(r["algo"]), r["t"]))
    write_rows(rows, out / "batches.csv")

    labels = [a.label for a in config.algorithms]
    summary = {
        "config": _config_record(config),
        "metrics": SUMMARY_METRICS,
        "algorithms": summarize(rows, labels, config.repetitions),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, allow_nan=False), encoding="utf-8")
    return summary


def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label).strip("_")


# ---------------------------------------------------------------------------
# Comparison tables
# ---------------------------------------------------------------------------


def load_summary(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read summary {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"summary {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or "metrics" not in obj or "algorithms" not in obj:
        raise ConfigError(f"{path} is not a summary file")
    return obj


def aggregate(summaries: list[dict]) -> tuple[list[str], dict]:
    """Pool the per-repetition values of several summaries.

    All summaries must report the same metrics. Returns ``(metrics, table)``
    with ``table[algo][metric] = {"mean", "std", "values"}``.
    """
    if not summaries:
        raise ConfigError("no summaries to compare")
    metrics = list(summaries[0]["metrics"])
    for s in summaries[1:]:
        if set(s["metrics"]) != set(metrics):
            raise ConfigError(f"incompatible metric sets: {sorted(metrics)} vs {sorted(s['metrics'])}")
    pooled: dict[str, dict[str, list]] = {}
    for s in summaries:
        for algo, block in s["algorithms"].items():
            dest = pooled.setdefault(algo, {m: [] for m in metrics})
            for m in metrics:
                dest[m].extend(v for v in block.get(m, {}).get("values", []) if v is not None)
    table = {algo: {m: _stats(vals) for m, vals in block.items()} for algo, block in pooled.items()}
    return metrics, table


def best_algorithms(metrics, table) -> dict[str, str | None]:
    """Highest-mean non-Privileged algorithm per ranked metric."""
    best = {}
    for m in metrics:
        cands = [
            (table[a][m]["mean"], a) for a in table
            if m in RANKED_METRICS and a != "Privileged" and table[a][m]["mean"] is not None
        ]
        best[m] = max(cands)[1] if cands else None
    return best


def _cell(stat: dict) -> str:
    if stat["mean"] is None:
        return "n/a"
    return f"{stat['mean']:.2f} ± {stat['std']:.2f}"


def format_markdown(metrics, table) -> str:
    algos = list(table)
    best = best_algorithms(metrics, table)
    lines = ["| metric | " + " | ".join(algos) + " |", "|---" * (len(algos) + 1) + "|"]
    for m in metrics:
        cells = []
        for a in algos:
            c = _cell(table[a][m])
            cells.append(f"**{c}**" if best[m] == a else c)
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def format_csv(metrics, table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "algo", "mean", "std", "n"])
    for m in metrics:
        for a, block in table.items():
            st = block[m]
            w.writerow([m, a, _fmt(st["mean"]), _fmt(st["std"]), len(st["values"])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpmstream", description="Streaming DP mixture experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic stream and its ground truth")
    sim.add_argument("--config", help="JSON experiment config (only the stream section is used)")
    sim.add_argument("--out", help="stream CSV path (default: <output dir>/stream.csv)")
    sim.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./results)")

    run = sub.add_parser("run", help="fit an algorithm roster and write metrics")
    run.add_argument("--config", help="JSON experiment config")
    run.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./results)")
    run.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    cmp_ = sub.add_parser("compare", help="tabulate one or more run summaries")
    cmp_.add_argument("summaries", nargs="+", help="summary.json files or run directories")
    cmp_.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    cmp_.add_argument("--out", help="write the table here instead of stdout")
    return p


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{key}: missing value")
            value = extra[i + 1]
            i += 2
        out.append((key, value))
    return out


def cmd_simulate(args, overrides) -> int:
    raw = load_raw_config(args.config, overrides)
    config = build_config(raw, args.output_dir)
    if not config.is_synthetic:
        raise ConfigError("stream: simulate needs a synthetic stream configuration")
    batches, truth = generate_stream(config.stream)
    path = Path(args.out) if args.out else config.output_dir / "stream.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        written = save_stream(batches, truth, path)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
    for p in written:
        print(p)
    return 0


def cmd_run(args, overrides) -> int:
    raw = load_raw_config(args.config, overrides)
    config = build_config(raw, args.output_dir)
    if args.print_config:
        print(json.dumps(_config_record(config), indent=1))
        return 0
    summary = run_experiment(config)
    metrics = summary["metrics"]
    print(format_markdown(metrics, aggregate([summary])[1]), end="")
    print(f"results written to {config.output_dir}")
    return 0


def cmd_compare(args, overrides) -> int:
    if overrides:
        raise ConfigError("compare takes no config overrides")
    metrics, table = aggregate([load_summary(p) for p in args.summaries])
    text = format_markdown(metrics, table) if args.format == "markdown" else format_csv(metrics, table)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"simulate": cmd_simulate, "run": cmd_run, "compare": cmd_compare}
    try:
        return handlers[args.command](args, _split_overrides(extra))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
