"""Experiment configuration.

Plain-text form, one setting per line, ``#`` starts a comment::

    dataset.source = synthetic
    dataset.per_class = 500
    train.epochs = 20
    sweep.attacks = fgsm, bim, lbfgs, fademl:bim

The JSON form nests the same keys: ``{"dataset": {"per_class": 500}}``.
Both load into an ``ExperimentConfig``; every section is validated before
any work starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attacks import AttackSpec, parse_attack
from .data.gtsrb import GTSRB_CLASS_NAMES
from .data.synthetic import CLASS_NAMES
from .errors import ConfigError, FademlError
from .filters import FilterConfig, default_sweep
from .harness import DEFAULT_SAMPLES_PER_CELL, ThreatModel, parse_scenarios
from .nn import WIDTH_DIVISORS, TrainConfig

_NONE = "none"


def _opt_float(v):
    return None if v is None or str(v).strip().lower() in (_NONE, "") else float(v)


def _opt_int(v):
    return None if v is None or str(v).strip().lower() in (_NONE, "") else int(v)


def _opt_str(v):
    return None if v is None or str(v).strip().lower() in (_NONE, "") else str(v).strip()


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int(v):
    if isinstance(v, bool):
        raise ValueError("boolean where an integer is expected")
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"not an integer: {v!r}")
    return int(v)


def _str(v):
    return str(v).strip()


# section -> key -> (parser, default, help)
SCHEMA = {
    "dataset": {
        "source": (_str, "synthetic", "synthetic | gtsrb"),
        "num_classes": (_int, 10, "synthetic classes, 6..10"),
        "per_class": (_int, 500, "synthetic images per class before the 80/20 split"),
        "image_size": (_int, 32, "square input size in pixels (synthetic render / GTSRB resize)"),
        "train_dir": (_opt_str, None, "GTSRB-layout training directory (source = gtsrb)"),
        "test_dir": (_opt_str, None, "GTSRB-layout test directory (source = gtsrb)"),
    },
    "model": {
        "width_divisor": (_int, 8, "VGG-mini channel divisor, one of 1, 2, 4, 8, 16"),
    },
    "train": {
        "learning_rate": (float, 0.02, "SGD step size"),
        "epochs": (_int, 20, "passes over the training set"),
        "batch_size": (_int, 32, "mini-batch size"),
        "momentum": (float, 0.9, "SGD momentum in [0, 1)"),
        "weight_init_scale": (float, 1.0, "uniform init half-width times sqrt(fan_in)"),
    },
    "attack": {
        "kind": (_str, "fademl:bim", "fgsm | bim | lbfgs | fademl:<base> (attack command)"),
        "epsilon": (float, 0.05, "L-inf budget of fgsm/bim (and fademl's base)"),
        "eta": (float, 1.0, "noise scaling of fademl"),
        "step_size": (_opt_float, None, "bim alpha / fademl lambda / lbfgs initial step; none = default"),
        "max_iters": (_int, 50, "iteration cap per optimisation"),
        "penalty_weight": (float, 1.0, "lbfgs initial penalty weight c"),
        "mode": (_str, "targeted", "targeted | untargeted"),
        "filter": (_str, "lar:2", "filter for the attack command, e.g. identity, lap:16, lar:2"),
        "scenario": (_str, "stop->speed_60", "source->target class names (attack command)"),
        "index": (_int, 0, "which source-class test image to attack (attack command)"),
        "image": (_opt_str, None, "attack this P6 image instead of a test image"),
    },
    "sweep": {
        "attacks": (_str, "fgsm,bim,lbfgs,fademl:bim", "comma-separated attacks"),
        "filters": (_str, "default", "default (identity + LAP np 4..64 + LAR r 1..5) or comma list"),
        "scenarios": (_str, "default", "default or comma list of source->target"),
        "threat_models": (_str, "TM1,TM2,TM3", "comma-separated threat models"),
        "samples_per_cell": (_int, DEFAULT_SAMPLES_PER_CELL, "source-class test images per cell"),
    },
    "run": {
        "seed": (_int, 0, "single seed for data, initialisation and shuffling"),
        "out": (_opt_str, None, "output directory (else --out, else $FADEML_OUT, else ./fademl-out)"),
        "threads": (_int, 1, "sweep worker threads; output bytes do not depend on it"),
    },
}
REQUIRED_SECTIONS = ("dataset",)


def describe_keys() -> str:
    """One line per config key, used for ``--help``."""
    lines = ["config keys (section.key = value; default in brackets):"]
    for section, keys in SCHEMA.items():
        for key, (_, default, text) in keys.items():
            d = _NONE if default is None else default
            lines.append(f"  {section}.{key} [{d}]  {text}")
    return "\n".join(lines)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls):
        return cls({s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()})

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, raw):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{key}: invalid value {raw!r} ({exc})") from None

    def to_dict(self):
        return {s: dict(v) for s, v in self.values.items()}

    # -- typed views ------------------------------------------------------

    @property
    def seed(self):
        return self.get("run", "seed")

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(learning_rate=t["learning_rate"], epochs=t["epochs"], batch_size=t["batch_size"],
                           seed=self.seed, weight_init_scale=t["weight_init_scale"], momentum=t["momentum"])

    def _attack_overrides(self, kind):
        a = self.values["attack"]
        kw = {"epsilon": a["epsilon"], "max_iters": a["max_iters"], "mode": a["mode"]}
        if kind.startswith("fademl"):
            kw["eta"] = a["eta"]
        if kind.split(":")[-1] == "lbfgs":
            kw["penalty_weight"] = a["penalty_weight"]
        if a["step_size"] is not None:
            kw["step_size"] = a["step_size"]
        return kw

    def attack_spec(self, kind=None) -> AttackSpec:
        kind = kind or self.get("attack", "kind")
        return parse_attack(kind, **self._attack_overrides(kind))

    def sweep_attacks(self):
        kinds = [k.strip() for k in self.get("sweep", "attacks").split(",") if k.strip()]
        if not kinds:
            raise ConfigError("sweep.attacks is empty")
        return [self.attack_spec(k) for k in kinds]

    def attack_filter(self) -> FilterConfig:
        return FilterConfig.parse(self.get("attack", "filter"))

    def sweep_filters(self):
        text = self.get("sweep", "filters").strip()
        if text == "default":
            return default_sweep()
        out = [FilterConfig.parse(t) for t in text.split(",") if t.strip()]
        if not out:
            raise ConfigError("sweep.filters is empty")
        return out

    def threat_models(self):
        out = [ThreatModel.parse(t) for t in self.get("sweep", "threat_models").split(",") if t.strip()]
        if not out:
            raise ConfigError("sweep.threat_models is empty")
        return out

    def class_names(self):
        d = self.values["dataset"]
        if d["source"] == "synthetic":
            return list(CLASS_NAMES[:d["num_classes"]])
        return list(GTSRB_CLASS_NAMES)

    def validate(self):
        d = self.values["dataset"]
        if d["source"] not in ("synthetic", "gtsrb"):
            raise ConfigError(f"dataset.source must be synthetic or gtsrb, got {d['source']!r}")
        if d["source"] == "synthetic":
            if not 6 <= d["num_classes"] <= len(CLASS_NAMES):
                raise ConfigError(f"dataset.num_classes must be in [6, {len(CLASS_NAMES)}]")
            if d["per_class"] < 10:
                raise ConfigError("dataset.per_class must be >= 10")
        elif not d["train_dir"] and not d["test_dir"]:
            raise ConfigError("dataset.source = gtsrb needs dataset.train_dir and/or dataset.test_dir")
        if d["image_size"] < 16:
            raise ConfigError("dataset.image_size must be >= 16")
        if self.get("model", "width_divisor") not in WIDTH_DIVISORS:
            raise ConfigError(f"model.width_divisor must be one of {WIDTH_DIVISORS}")
        if self.get("sweep", "samples_per_cell") < 1:
            raise ConfigError("sweep.samples_per_cell must be >= 1")
        if self.get("run", "threads") < 1:
            raise ConfigError("run.threads must be >= 1")
        if self.get("attack", "index") < 0:
            raise ConfigError("attack.index must be >= 0")
        try:
            self.train_config()
            self.attack_spec()
            self.sweep_attacks()
            self.attack_filter()
            self.sweep_filters()
            self.threat_models()
            names = self.class_names()
            parse_scenarios(self.get("sweep", "scenarios"), names)
            parse_scenarios(self.get("attack", "scenario"), names)
        except ConfigError:
            raise
        except (FademlError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self


def parse_config_text(text, origin="<config>") -> ExperimentConfig:
    cfg = ExperimentConfig.defaults()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'section.key = value'")
        name, value = (s.strip() for s in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"{origin}:{lineno}: key {name!r} needs a section prefix")
        section, key = name.split(".", 1)
        try:
            cfg.set(section, key, value)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {exc}") from None
        seen.add(section)
    _require_sections(seen, origin)
    return cfg


def parse_config_json(text, origin="<config-json>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be an object of sections")
    cfg = ExperimentConfig.defaults()
    for section, keys in data.items():
        if not isinstance(keys, dict):
            raise ConfigError(f"{origin}: section {section!r} must be an object")
        for key, value in keys.items():
            try:
                cfg.set(section, key, value)
            except ConfigError as exc:
                raise ConfigError(f"{origin}: {exc}") from None
    _require_sections(set(data), origin)
    return cfg


def _require_sections(seen, origin):
    for section in REQUIRED_SECTIONS:
        if section not in seen:
            raise ConfigError(f"{origin}: missing required section [{section}]")


def load_config(path=None, json_path=None) -> ExperimentConfig:
    """Read a config file (plain or JSON); no file means all defaults."""
    if path and json_path:
        raise ConfigError("use either --config or --config-json, not both")
    if path is None and json_path is None:
        return ExperimentConfig.defaults()
    target = path or json_path
    try:
        with open(target, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {target}: {exc.strerror}") from None
    return parse_config_json(text, str(target)) if json_path else parse_config_text(text, str(target))
