"""Command-line front end: ``fademl train | attack | sweep | report``.

Exit codes: 0 success, 2 configuration or input error, 3 training
divergence, 4 attack failure (with ``--require-success``, or every sweep
cell failing), 5 file I/O, codec or checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .attacks import attack_batch, top5_cost
from .config import describe_keys, load_config
from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.gtsrb import load_gtsrb_format
from .data.ppm import read_ppm, write_ppm
from .data.synthetic import generate_synthetic_signs
from .errors import (AttackError, CheckpointError, CodecError, ConfigError, IngestionError, InputError,
                     NumericError, TrainingError)
from .filters import build_filter
from .nn import accuracy, build_vgg_mini, predict_classes, train
from .plots import write_plots

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_ATTACK, EXIT_IO = 0, 2, 3, 4, 5
DEFAULT_OUT = "fademl-out"
MODEL_FILE = "model.fadm"

log = logging.getLogger("fademl")


class AttackFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_out(args, cfg):
    out = args.out or cfg.get("run", "out") or os.environ.get("FADEML_OUT") or DEFAULT_OUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args):
    cfg = load_config(args.config, args.config_json)
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        name, value = item.split("=", 1)
        section, key = name.strip().split(".", 1)
        cfg.set(section, key, value.strip())
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if getattr(args, "threads", None) is not None:
        cfg.set("run", "threads", args.threads)
    return cfg.validate()


def load_datasets(cfg, need_train=True):
    d = cfg.values["dataset"]
    if d["source"] == "synthetic":
        return generate_synthetic_signs(d["num_classes"], d["per_class"], d["image_size"], cfg.seed)
    train_ds = test_ds = None
    if need_train:
        if not d["train_dir"]:
            raise ConfigError("dataset.train_dir is required for training on GTSRB data")
        train_ds = load_gtsrb_format(d["train_dir"], d["image_size"], split="train")
        log.info("loaded %s", train_ds.info)
    test_dir = d["test_dir"] or d["train_dir"]
    test_ds = load_gtsrb_format(test_dir, d["image_size"], split="test")
    log.info("loaded %s", test_ds.info)
    return train_ds, test_ds


def _model_path(args, out):
    return Path(args.model) if getattr(args, "model", None) else out / MODEL_FILE


def _load_model(path, test_ds):
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}; run 'fademl train' first")
    net = load_checkpoint(path)
    if net.input_shape != test_ds.image_shape:
        raise ConfigError(f"checkpoint expects {net.input_shape} inputs, dataset has {test_ds.image_shape}")
    if net.num_classes != test_ds.num_classes:
        raise ConfigError(f"checkpoint has {net.num_classes} classes, dataset has {test_ds.num_classes}")
    return net


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text):
    tmp = Path(f"{path}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = _load_config(args)
    out = _resolve_out(args, cfg)
    t0 = time.perf_counter()
    train_ds, test_ds = load_datasets(cfg)
    size = cfg.get("dataset", "image_size")
    net = build_vgg_mini((3, size, size), train_ds.num_classes, cfg.get("model", "width_divisor"),
                         seed=cfg.seed, weight_init_scale=cfg.get("train", "weight_init_scale"))
    t_data = time.perf_counter() - t0
    log.info("training on %d images (%d classes)", len(train_ds), train_ds.num_classes)
    result = train(net, train_ds, cfg.train_config(),
                   log=lambda s: log.info("epoch %d loss %.4f acc %.4f", s.epoch, s.loss, s.accuracy))
    t_train = time.perf_counter() - t0 - t_data
    model_path = out / MODEL_FILE
    save_checkpoint(net, model_path)
    with open(out / "train.csv.tmp", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_accuracy"])
        for s in result.trace:
            writer.writerow([s.epoch, f"{s.loss:.6f}", f"{s.accuracy:.6f}"])
    (out / "train.csv.tmp").replace(out / "train.csv")
    test_acc = accuracy(net, test_ds.images, test_ds.labels)
    _write_json(out / "train.json", {
        "config": cfg.to_dict(), "class_names": train_ds.class_names,
        "train_size": len(train_ds), "test_size": len(test_ds), "test_accuracy": test_acc,
        "checkpoint_sha256": _sha256(model_path),
        "run": {"data_s": round(t_data, 3), "train_s": round(t_train, 3),
                "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}})
    log.info("test accuracy %.4f; wrote %s", test_acc, model_path)
    print(f"test_accuracy={test_acc:.4f} checkpoint={model_path}")
    return EXIT_OK


def _prediction_dict(probs, names):
    order = np.argsort(-probs, kind="stable")[:5]
    top = int(order[0])
    return {"class": top, "name": names[top], "confidence": float(probs[top]),
            "top5": [{"class": int(c), "name": names[int(c)], "p": float(probs[c])} for c in order]}


def _noise_image(noise):
    m = float(np.abs(noise).max())
    if m == 0:
        return np.full_like(noise, 0.5)
    return 0.5 + noise / (2 * m)


def cmd_attack(args):
    cfg = _load_config(args)
    out = _resolve_out(args, cfg)
    _, test_ds = load_datasets(cfg, need_train=False)
    net = _load_model(_model_path(args, out), test_ds)
    names = test_ds.class_names
    scenario = harness.parse_scenarios(cfg.get("attack", "scenario"), names)[0]
    spec = cfg.attack_spec()
    filt = build_filter(cfg.attack_filter(), net.input_shape)
    image_path = cfg.get("attack", "image")
    if image_path:
        x = read_ppm(image_path)
        if x.shape != net.input_shape:
            raise InputError(f"{image_path}: image is {x.shape}, network expects {net.input_shape}")
        source = {"image": str(image_path)}
    else:
        idx = test_ds.indices_of(scenario.source_class)
        k = cfg.get("attack", "index")
        if k >= len(idx):
            raise InputError(f"attack.index {k} out of range: {len(idx)} test images of class "
                             f"{names[scenario.source_class]}")
        x = test_ds.images[idx[k]]
        source = {"test_index": int(idx[k]), "class_index": k}
    y_samples = None
    if spec.kind == "fademl":
        tgt = test_ds.indices_of(scenario.target_class)
        if len(tgt) == 0:
            raise InputError(f"no test image of target class {names[scenario.target_class]}")
        pred = predict_classes(net, test_ds.images[tgt])
        good = tgt[pred == scenario.target_class]
        y_samples = test_ds.images[good[0] if len(good) else tgt[0]][None]
    ex = attack_batch(net, x[None], scenario.target_class, spec, filt=filt, y_samples=y_samples)[0]
    adv_path, noise_path = out / "adv.ppm", out / "noise.ppm"
    write_ppm(adv_path, ex.x_adversarial)
    write_ppm(noise_path, _noise_image(ex.noise))
    p1 = net.predict_proba(ex.x_adversarial)
    p2 = net.predict_proba(filt.apply(ex.x_adversarial))
    reread = read_ppm(adv_path)
    sidecar = {
        "attack": spec.name, "spec": spec.to_dict(), "filter": filt.config.label,
        "scenario": scenario.to_dict() | {"name": scenario.name}, "source": source,
        "target_class": scenario.target_class, "target_name": names[scenario.target_class],
        "iterations_used": ex.iterations_used,
        "l2_noise_norm": ex.l2_noise_norm, "linf_noise_norm": ex.linf_noise_norm,
        "success_unfiltered": ex.success_unfiltered,
        "success_filtered": bool(np.argmax(p2) == scenario.target_class),
        "clean_prediction": _prediction_dict(net.predict_proba(x), names),
        "tm1_prediction": _prediction_dict(p1, names),
        "tm2_prediction": _prediction_dict(p2, names),
        "tm3_prediction": _prediction_dict(p2, names),
        "eq3_cost": float(top5_cost(p1, p2)),
        "ppm_tm1_prediction": _prediction_dict(net.predict_proba(reread), names),
        "ppm_tm2_prediction": _prediction_dict(net.predict_proba(filt.apply(reread)), names),
        "metadata": ex.metadata, "seed": cfg.seed,
        "files": {"adversarial": adv_path.name, "noise": noise_path.name},
    }
    _write_json(out / "adv.json", sidecar)
    ok = sidecar["success_filtered"] if spec.kind == "fademl" else sidecar["success_unfiltered"]
    print(f"attack={spec.name} filter={filt.config.label} tm1={sidecar['tm1_prediction']['name']} "
          f"tm2={sidecar['tm2_prediction']['name']} target={names[scenario.target_class]} success={ok}")
    if args.require_success and not ok:
        raise AttackFailed(f"{spec.name} did not reach {names[scenario.target_class]}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _resolve_out(args, cfg)
    _, test_ds = load_datasets(cfg, need_train=False)
    model_path = _model_path(args, out)
    net = _load_model(model_path, test_ds)
    scenarios = harness.parse_scenarios(cfg.get("sweep", "scenarios"), test_ds.class_names)
    config = cfg.to_dict()
    config["run"] = {"seed": cfg.seed}  # threads and out directory must not change report bytes
    report = harness.analyze_filter_impact(
        net, cfg.sweep_attacks(), cfg.sweep_filters(), scenarios, test_ds,
        samples_per_cell=cfg.get("sweep", "samples_per_cell"), threat_models=cfg.threat_models(),
        threads=cfg.get("run", "threads"), seed=cfg.seed, log=log.info,
        extra_metadata={"config": config, "checkpoint_sha256": _sha256(model_path)})
    _write_text(out / "report.csv", report.csv_text())
    _write_text(out / "report.json", report.json_text())
    write_plots(report, out)
    print(f"cells={len(report.rows)} failed={report.n_failed} report={out / 'report.csv'}")
    if report.n_failed == len(report.rows):
        raise AttackFailed("every sweep cell failed")
    return EXIT_OK


def cmd_report(args):
    cfg = _load_config(args)
    out = _resolve_out(args, cfg)
    path = Path(args.report) if args.report else out / "report.json"
    if not path.is_file():
        raise FileNotFoundError(f"no report at {path}; run 'fademl sweep' first")
    report = harness.EvaluationReport.load(path)
    paths = write_plots(report, path.parent if args.report else out)
    print(" ".join(str(p) for p in paths.values()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="fademl", description="Filter-aware adversarial ML lab.",
                                     epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--quiet", action="store_true", help="only print warnings and the summary line")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, text):
        p = sub.add_parser(name, help=text, description=text, epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="plain-text config (section.key = value lines)")
        p.add_argument("--config-json", help="JSON config with the same sections and keys")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help="output directory (default: run.out, $FADEML_OUT, ./fademl-out)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--threads", type=int, help="override run.threads")
        p.add_argument("--quiet", action="store_true", help=argparse.SUPPRESS)
        p.set_defaults(func=fn)
        return p

    add("train", cmd_train, "train VGG-mini; writes model.fadm, train.csv, train.json")
    p = add("attack", cmd_attack, "attack one image; writes adv.ppm, noise.ppm, adv.json")
    p.add_argument("--model", help="checkpoint (default <out>/model.fadm)")
    p.add_argument("--require-success", action="store_true",
                   help="exit 4 unless the attack reaches its target (through the filter for fademl)")
    p = add("sweep", cmd_sweep, "attack x filter x threat model x scenario sweep; writes report.csv, "
                                "report.json and SVG plots")
    p.add_argument("--model", help="checkpoint (default <out>/model.fadm)")
    p.add_argument("--require-success", action="store_true", help=argparse.SUPPRESS)
    p = add("report", cmd_report, "re-render the SVG plots from an existing report.json")
    p.add_argument("--report", help="report.json to plot (default <out>/report.json)")
    p.add_argument("--require-success", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"fademl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"fademl: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (AttackFailed, AttackError, NumericError) as exc:
        print(f"fademl: attack failed: {exc}", file=sys.stderr)
        return EXIT_ATTACK
    except (OSError, CodecError, IngestionError, CheckpointError) as exc:
        print(f"fademl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
