"""Command-line entry point: ``deepmedix <command> --config run.json``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure. Errors are reported on stderr as ``error[<category>]: <message>``.
The output directory can be overridden with ``$DEEPMEDIX_OUT``; the
``--out`` flag wins over both the environment and the config file.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dio
from . import params as ps
from .analysis import count_flops, pullback_spectrum
from .architecture import VARIANTS, ArchitectureConfig
from .config import load_config, RunConfig
from .errors import ConfigError, DataError
from .federated import run_federated, write_rounds_csv
from .harness import accuracy, evaluate, train, write_history_csv
from .objective import ModelObjective

COMMANDS = ("train", "federated", "ablation", "flops", "analyze", "gendata", "eval")
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return out


def load_dataset(cfg: RunConfig):
    """``{"train": (x, y), "val": ..., "test": ...}`` at the model's input size and precision."""
    h, w, c = cfg.model.input_size
    if c != 3:
        raise ConfigError("models take 3-channel input")
    if cfg.data.manifest is not None:
        manifest = dio.read_manifest(cfg.data.manifest)
        splits = {s: dio.load_manifest_split(manifest, s, (h, w)) for s in dio.SPLITS}
    else:
        syn = cfg.data.synthetic
        if syn.num_classes != cfg.model.num_classes:
            raise ConfigError("synthetic num_classes must match model num_classes")
        spec = dio.SyntheticSpec(syn.num_samples, syn.image_size, syn.num_classes, syn.blob_sigma,
                                 syn.blob_intensity, syn.background, syn.noise, cfg.seed)
        images, labels = dio.generate_synthetic(spec)
        if tuple(syn.image_size) != (h, w):
            images = np.stack([dio.resize_bilinear(im, (h, w)) for im in images])
        try:
            idx = dio.split(labels, cfg.data.fractions, cfg.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        splits = {s: (images[i], labels[i]) for s, i in zip(dio.SPLITS, idx)}
    return {s: (x.astype(cfg.dtype), y) for s, (x, y) in splits.items()}


def _nonempty(splits, *names):
    for n in names:
        if len(splits[n][1]) == 0:
            raise DataError(f"the {n} split is empty")


def _report_split(splits):
    return "test" if len(splits["test"][1]) else "val"


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2))


def cmd_train(cfg: RunConfig):
    out = _out_dir(cfg)
    arch = cfg.model.architecture()
    model = arch.build()
    splits = load_dataset(cfg)
    _nonempty(splits, "train", "val")
    params = model.init_params(cfg.seed, cfg.dtype)
    result = train(model, splits["train"], splits["val"], cfg.train_config(), params)
    write_history_csv(out / "history.csv", result.history)
    extra = {"architecture": arch.to_dict(), "epoch": result.best_epoch,
             "val_accuracy": result.best_val_accuracy}
    ps.save_checkpoint(out / "checkpoint", result.best_params, extra)
    ps.save_checkpoint(out / "final_checkpoint", result.final_params, {"architecture": arch.to_dict()})
    report = evaluate(model, result.best_params, *splits[_report_split(splits)])
    (out / "metrics.json").write_text(report.to_json())
    return 0


def cmd_federated(cfg: RunConfig):
    fcfg = cfg.federated_config()
    out = _out_dir(cfg)
    arch = cfg.model.architecture()
    model = arch.build()
    splits = load_dataset(cfg)
    _nonempty(splits, "train")
    x_val, y_val = splits["val"]
    eval_fn = (lambda p: accuracy(model, p, x_val, y_val)) if len(y_val) else None
    objective = ModelObjective(model, *splits["train"])
    result = run_federated(fcfg, objective, model.init_params(cfg.seed, cfg.dtype), eval_fn)
    write_rounds_csv(out / "rounds.csv", result.history)
    ps.save_checkpoint(out / "checkpoint", result.params,
                       {"architecture": arch.to_dict(), "round": result.server.round})
    report = evaluate(model, result.params, *splits[_report_split(splits)])
    (out / "metrics.json").write_text(report.to_json())
    return 0


ABLATION_FIELDS = ("variant", "precision", "recall", "f1", "roc_auc", "accuracy")
STRUCTURE_FIELDS = ("variant", "pool", "skip_connection", "dropout_modules", "hidden_sizes",
                    "head_dropout", "head_batch_norm", "head_concat", "head_max_pool", "head_avg_pool",
                    "head_params", "total_params")


def structure_row(variant, arch: ArchitectureConfig):
    model = arch.build()
    head = arch.to_dict()["head"]
    census = model.census("head.")
    return {"variant": variant, "pool": head["pool"], "skip_connection": int(head["skip_connection"]),
            "dropout_modules": int(head["dropout_modules"]),
            "hidden_sizes": "-".join(map(str, head["hidden_sizes"])),
            "head_dropout": census["dropout"], "head_batch_norm": census["batch_norm"],
            "head_concat": census["concat"], "head_max_pool": census["global_max_pool"],
            "head_avg_pool": census["global_avg_pool"],
            "head_params": model.count_params("head."), "total_params": model.count_params()}


def cmd_ablation(cfg: RunConfig):
    out = _out_dir(cfg)
    splits = load_dataset(cfg)
    _nonempty(splits, "train", "val")
    tcfg = cfg.train_config()
    rows, structure = [], []
    for variant in VARIANTS:
        arch = cfg.model.architecture(variant)
        model = arch.build()
        result = train(model, splits["train"], splits["val"], tcfg, model.init_params(cfg.seed, cfg.dtype))
        rep = evaluate(model, result.best_params, *splits[_report_split(splits)])
        rows.append({"variant": variant, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                     "roc_auc": rep.roc_auc, "accuracy": rep.accuracy})
        structure.append(structure_row(variant, arch))
    for name, fields, table in (("ablation.csv", ABLATION_FIELDS, rows),
                                ("ablation_structure.csv", STRUCTURE_FIELDS, structure)):
        with open(out / name, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            w.writerows(table)
    return 0


def cmd_flops(cfg: RunConfig):
    out = _out_dir(cfg)
    model = cfg.model.architecture().build()
    report = count_flops(model)
    (out / "cost.csv").write_text(report.to_csv())
    text = report.to_text()
    (out / "cost.txt").write_text(text + "\n")
    print(text)
    return 0


def _load_params(cfg, model, checkpoint):
    if checkpoint is None:
        return model.init_params(cfg.seed, cfg.dtype)
    params, _ = ps.load_checkpoint(checkpoint)
    if set(params) != set(model.slots):
        raise DataError("checkpoint slots do not match the configured model")
    return params


def cmd_analyze(cfg: RunConfig):
    out = _out_dir(cfg)
    a = cfg.analyze
    model = cfg.model.architecture().build()
    params = ps.astype(_load_params(cfg, model, a.checkpoint), np.float64)
    splits = load_dataset(cfg)
    x, _ = splits[a.split]
    if len(x) == 0:
        raise DataError(f"the {a.split} split is empty")
    points = []
    for i in range(min(a.num_points, len(x))):
        spectrum = pullback_spectrum(model, params, x[i].astype(np.float64), a.top_k)
        points.append({"index": i, **spectrum})
    _write_json(out / "spectra.json", {"points": points})
    return 0


def cmd_gendata(cfg: RunConfig):
    out = _out_dir(cfg)
    syn = cfg.data.synthetic
    if syn is None:
        raise ConfigError("gendata needs a data.synthetic section")
    spec = dio.SyntheticSpec(syn.num_samples, syn.image_size, syn.num_classes, syn.blob_sigma,
                             syn.blob_intensity, syn.background, syn.noise, cfg.seed)
    images, labels = dio.generate_synthetic(spec)
    try:
        idx = dio.split(labels, cfg.data.fractions, cfg.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    which = np.empty(len(labels), dtype=object)
    for name, i in zip(dio.SPLITS, idx):
        which[i] = name
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    records = []
    for i, (img, label) in enumerate(zip(images, labels)):
        rel = f"images/{i:06d}.ppm"
        dio.save_image(out / rel, img * 255.0)
        records.append(dio.ManifestRecord(rel, int(label), which[i]))
    dio.write_manifest(out / "manifest.csv", records)
    return 0


def cmd_eval(cfg: RunConfig):
    e = cfg.eval
    if e.checkpoint is None:
        raise ConfigError("eval needs eval.checkpoint")
    params, manifest = ps.load_checkpoint(e.checkpoint)
    if "architecture" not in manifest:
        raise DataError("checkpoint manifest lacks an architecture description")
    model = ArchitectureConfig.from_dict(manifest["architecture"]).build()
    if set(params) != set(model.slots):
        raise DataError("checkpoint slots do not match its architecture")
    out = _out_dir(cfg)
    splits = load_dataset(cfg)
    x, y = splits[e.split]
    if len(y) == 0:
        raise DataError(f"the {e.split} split is empty")
    dtype = next(iter(params.values())).dtype
    report = evaluate(model, params, x.astype(dtype), y)
    (out / "metrics.json").write_text(report.to_json())
    return 0


HANDLERS = {"train": cmd_train, "federated": cmd_federated, "ablation": cmd_ablation,
            "flops": cmd_flops, "analyze": cmd_analyze, "gendata": cmd_gendata, "eval": cmd_eval}


def build_parser():
    p = argparse.ArgumentParser(prog="deepmedix", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    env_out = os.environ.get("DEEPMEDIX_OUT")
    if env_out:
        cfg.output_dir = env_out
    for name, attr in (("seed", "seed"), ("out", "output_dir"), ("threads", "threads"),
                       ("precision", "precision")):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, attr, value)
    cfg.__post_init__()
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            return HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"error[config]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"error[data]: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:  # includes NonFiniteError
        print(f"error[numerical]: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
