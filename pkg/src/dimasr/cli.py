"""Command-line entry point: prepare | train | predict | evaluate | llm-baseline | compare.

Every command writes a manifest.json into its output directory recording the
command, resolved configuration, input/output paths, seed, timestamp, and
output checksums, so any artifact can be traced back to the run that made it.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import datetime
import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import yaml

from . import data as data_mod
from . import llm as llm_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .data import DataError
from .metrics import MetricsError
from .model import DimASRModel, ModelError, load_checkpoint, make_encoder, save_checkpoint
from .trainer import TrainConfig, TrainerError

click.UsageError.exit_code = 1


class ConfigError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: list, outputs: list, seed) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "checksums": {Path(p).name: _sha256(Path(p)) for p in outputs if Path(p).is_file()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _load_yaml(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            obj = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})")
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return obj


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(1)
        except (DataError, MetricsError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(2)
        except (TrainerError, ModelError, llm_mod.LlmError, RuntimeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
def main():
    """Dimensional aspect sentiment regression pipeline."""


@main.command()
@click.option("--train-file", required=True, type=click.Path(exists=True))
@click.option("--dev-file", type=click.Path(exists=True), help="Required for submission mode.")
@click.option("--format", "fmt", default="simple_jsonl", type=click.Choice(data_mod.FORMATS))
@click.option("--mode", default="dev", type=click.Choice(["dev", "submission"]),
              help="dev: 80/20 split of the train file; submission: merge train+dev, hold out 10%.")
@click.option("--ratio", default=0.8, show_default=True)
@click.option("--holdout", default=0.1, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def prepare(train_file, dev_file, fmt, mode, ratio, holdout, seed, out):
    """Expand sentences into instances and write the chosen split."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records = data_mod.parse_dataset(train_file, format=fmt)
    train_instances = data_mod.expand_instances(train_records)
    inputs = [train_file]

    if mode == "dev":
        split = data_mod.split_dev_protocol(train_instances, ratio=ratio, seed=seed)
        names = ("train.jsonl", "eval.jsonl")
    else:
        if dev_file is None:
            raise ConfigError("submission mode requires --dev-file")
        dev_records = data_mod.parse_dataset(dev_file, format=fmt)
        dev_instances = data_mod.expand_instances(dev_records)
        inputs.append(dev_file)
        split = data_mod.merge_and_hold_out(train_instances, dev_instances,
                                            holdout_fraction=holdout, seed=seed)
        names = ("fit.jsonl", "holdout.jsonl")

    outputs = []
    for name, part in zip(names, (split.train, split.eval)):
        path = out_dir / name
        data_mod.write_instances(part, path)
        outputs.append(path)

    for name, part in zip(names, (split.train, split.eval)):
        sentences = len({i.sentence_id for i in part})
        click.echo(f"{name}: {sentences} sentences, {len(part)} instances")
    write_manifest(out_dir, "prepare",
                   {"format": fmt, "mode": mode, "ratio": ratio, "holdout": holdout},
                   inputs, outputs, seed)


def _build_model_from_config(cfg: dict, train_cfg: TrainConfig) -> DimASRModel:
    encoder_spec = dict(cfg.get("encoder", {"type": "tiny"}))
    encoder_spec.setdefault("max_len", train_cfg.max_len)
    encoder = make_encoder(encoder_spec)
    return DimASRModel(
        encoder,
        seed=train_cfg.seed,
        input_dropout_rate=train_cfg.dropout,
        head_dropout_rate=train_cfg.dropout,
        head_internal_dropout=train_cfg.head_internal_dropout,
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", required=True, type=click.Path())
@handle_errors
def train(config_path, seed, out):
    """Fine-tune one model per the config; writes checkpoint + history."""
    cfg = _load_yaml(config_path)
    overrides = dict(cfg.get("train", {}))
    if seed is not None:
        overrides["seed"] = seed
    try:
        train_cfg = TrainConfig.from_mapping(overrides)
    except TrainerError as exc:
        raise ConfigError(str(exc))

    data_cfg = cfg.get("data", {})
    if "fit" not in data_cfg or "val" not in data_cfg:
        raise ConfigError("config must name data.fit and data.val instance files "
                          "(validation set required)")
    fit_set = data_mod.read_instances(data_cfg["fit"])
    val_set = data_mod.read_instances(data_cfg["val"])
    if not val_set:
        raise TrainerError("validation set required for early stopping")

    click.echo("resolved hyperparameters:")
    for key, value in train_cfg.to_dict().items():
        click.echo(f"  {key}: {value}")

    model = _build_model_from_config(cfg, train_cfg)
    model, history = trainer_mod.fit(model, fit_set, val_set, train_cfg)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoint"
    save_checkpoint(model, ckpt_dir)
    history_path = out_dir / "history.json"
    history_path.write_text(
        json.dumps(
            {"records": history.to_rows(), "best_epoch": history.best_epoch,
             "stopped_early": history.stopped_early},
            indent=2,
        ),
        encoding="utf-8",
    )
    tsv_path = out_dir / "history.tsv"
    with tsv_path.open("w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tval_rmse_va\n")
        for row in history.to_rows():
            fh.write(f"{row['epoch']}\t{row['train_loss']:.6f}\t{row['val_rmse_va']:.6f}\n")

    click.echo(f"best epoch: {history.best_epoch} "
               f"(val rmse_va {history.records[history.best_epoch - 1].val_rmse_va:.4f})")
    write_manifest(out_dir, "train", {"config_file": str(config_path), **train_cfg.to_dict()},
                   [config_path, data_cfg["fit"], data_cfg["val"]],
                   [history_path, tsv_path, ckpt_dir / "params.npz", ckpt_dir / "manifest.json"],
                   train_cfg.seed)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--instances", "instances_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--batch-size", default=64, show_default=True)
@handle_errors
def predict(checkpoint, instances_path, out, batch_size):
    """Eval-mode predictions for an instance file; writes predictions.jsonl."""
    model = load_checkpoint(checkpoint)
    instances = data_mod.read_instances(instances_path)
    pairs = []
    for start in range(0, len(instances), batch_size):
        pairs.extend(model.predict_pairs(instances[start : start + batch_size]))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_path = out_dir / "predictions.jsonl"
    data_mod.write_predictions(instances, pairs, pred_path)
    click.echo(f"wrote {len(pairs)} predictions to {pred_path}")
    write_manifest(out_dir, "predict", {"checkpoint": str(checkpoint)},
                   [checkpoint, instances_path], [pred_path], model.seed)


def _parse_edges(text: str):
    try:
        edges = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse bin edges {text!r}")
    return edges


@main.command()
@click.option("--gold", required=True, type=click.Path(exists=True))
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--gold-format", default="simple_jsonl", type=click.Choice(data_mod.FORMATS))
@click.option("--edges", default="1,3,5,7,9", show_default=True,
              help="Heatmap bin edges (used on both axes).")
@click.option("--method", default="model", show_default=True)
@click.option("--dataset", default="dataset", show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def evaluate(gold, pred, gold_format, edges, method, dataset, out):
    """Score a prediction file against gold and write the full report."""
    edge_list = _parse_edges(edges)
    report = metrics_mod.score_files(gold, pred, gold_format=gold_format)
    preds, golds, _ = metrics_mod.paired_from_files(gold, pred, gold_format=gold_format)
    grid = metrics_mod.va_heatmap(preds, golds, edge_list, edge_list)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(
            {"method": method, "dataset": dataset, **report.to_dict(),
             "heatmap": grid.to_dict(),
             "heatmap_note": "bin edges are configurable; defaults give a 4x4 grid"},
            indent=2,
        ),
        encoding="utf-8",
    )
    text_path = out_dir / "report.txt"
    lines = [
        f"method: {method}  dataset: {dataset}  n={report.n}",
        f"rmse_va={report.rmse_va:.4f}  rmse_v={report.rmse_v:.4f}  rmse_a={report.rmse_a:.4f}",
        f"error median={report.error_median:.4f}  "
        f"%<1.0={100 * report.frac_below_1:.1f}  %>2.0={100 * report.frac_above_2:.1f}",
        "heatmap (rows: valence bins, cols: arousal bins; rmse/count):",
    ]
    for i, row in enumerate(grid.cells):
        cells = []
        for cell in row:
            rmse = "-" if cell["rmse"] is None else f"{cell['rmse']:.2f}"
            cells.append(f"{rmse}/{cell['count']}")
        lines.append(f"  v[{grid.v_edges[i]:.0f},{grid.v_edges[i + 1]:.0f}): " + "  ".join(cells))
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo("\n".join(lines))
    write_manifest(out_dir, "evaluate", {"edges": list(edge_list), "gold_format": gold_format},
                   [gold, pred], [report_path, text_path], None)


@main.command("llm-baseline")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--instances", "instances_path", required=True, type=click.Path(exists=True))
@click.option("--replay", type=click.Path(exists=True),
              help="Transcript file to replay instead of live API calls.")
@click.option("--exemplar-pool", type=click.Path(exists=True),
              help="Instance file to sample exemplars from (default: built-in set).")
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def llm_baseline(config_path, instances_path, replay, exemplar_pool, seed, out):
    """Run the few-shot prompting baseline (live or replayed)."""
    cfg = _load_yaml(config_path)
    llm_cfg_fields = {k: v for k, v in cfg.get("llm", cfg).items()
                      if k in ("base_url", "model", "temperature", "max_retries",
                               "api_key_env", "timeout")}
    run_cfg = llm_mod.LlmRunConfig(**llm_cfg_fields)
    instances = data_mod.read_instances(instances_path)

    exemplars = llm_mod.DEFAULT_EXEMPLARS
    if exemplar_pool is not None:
        pool = data_mod.read_instances(exemplar_pool)
        k = int(cfg.get("n_exemplars", 6))
        exemplars = llm_mod.sample_exemplars(pool, k=k, seed=seed)

    if replay is not None:
        transport = llm_mod.ReplayTransport(replay)
    else:
        transport = llm_mod.HttpChatTransport(run_cfg)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    transcript_path = out_dir / "transcript.jsonl"
    pairs, log = llm_mod.run_baseline(instances, run_cfg, transport,
                                      exemplars=exemplars, transcript_out=transcript_path)
    pred_path = out_dir / "predictions.jsonl"
    data_mod.write_predictions(instances, pairs, pred_path)
    n_fallback = sum(1 for r in log if r["status"] != "ok")
    click.echo(f"wrote {len(pairs)} predictions ({n_fallback} fallbacks) to {pred_path}")
    write_manifest(out_dir, "llm-baseline",
                   {"config_file": str(config_path), "replay": bool(replay),
                    "model": run_cfg.model, "temperature": run_cfg.temperature},
                   [config_path, instances_path] + ([replay] if replay else []),
                   [pred_path, transcript_path], seed)


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handle_errors
def compare(reports, out):
    """Side-by-side table of evaluation reports: rows=methods, cols=datasets."""
    table = {}
    datasets = None
    for path in reports:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        table.setdefault(obj["method"], {})[obj["dataset"]] = obj["rmse_va"]
    for method, row in table.items():
        cols = set(row)
        if datasets is None:
            datasets = cols
        elif cols != datasets:
            raise MetricsError(
                f"method {method!r} covers datasets {sorted(cols)}, "
                f"expected {sorted(datasets)}"
            )
    dataset_names = sorted(datasets)
    best = {d: min(row[d] for row in table.values()) for d in dataset_names}

    lines = ["method\t" + "\t".join(dataset_names)]
    for method in sorted(table):
        cells = []
        for d in dataset_names:
            value = table[method][d]
            mark = "*" if value == best[d] else ""
            cells.append(f"{value:.4f}{mark}")
        lines.append(method + "\t" + "\t".join(cells))
    text = "\n".join(lines) + "\n"

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "comparison.tsv"
    table_path.write_text(text, encoding="utf-8")
    json_path = out_dir / "comparison.json"
    json_path.write_text(json.dumps({"table": table, "best": best}, indent=2), encoding="utf-8")
    click.echo(text, nl=False)
    write_manifest(out_dir, "compare", {}, list(reports), [table_path, json_path], None)


if __name__ == "__main__":
    main()
