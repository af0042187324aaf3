"""Threat-model pipelines, metrics and filter sweeps.

A sweep produces one report row per (attack, filter, threat model, scenario)
cell. Base attacks (fgsm, bim, lbfgs) do not see the filter, so their
adversarial examples are generated once per scenario and re-evaluated under
every filter. The filter-aware attack is regenerated for every filter.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, attack_batch, top5_cost
from .errors import ConfigError, FademlError, InputError
from .filters import FilterConfig, LinearFilter, build_filter, default_sweep
from .nn import Network, Prediction, predict_proba_batched, top_k_indices

CSV_COLUMNS = ("attack", "filter_kind", "filter_param", "threat_model", "scenario",
               "success_rate", "confidence", "top5_acc", "eq3_cost", "n_samples", "status")
METRICS = ("success_rate", "confidence", "top5_acc", "eq3_cost")
DEFAULT_SAMPLES_PER_CELL = 100
TOP_K = 5
REPORT_VERSION = 1


class ThreatModel(enum.Enum):
    TM1 = "TM1"  # perturbation lands after the filter
    TM2 = "TM2"  # before acquisition
    TM3 = "TM3"  # on acquired data, before buffering

    @property
    def filtered(self) -> bool:
        return self is not ThreatModel.TM1

    @classmethod
    def parse(cls, text):
        try:
            return cls(str(text).strip().upper())
        except ValueError:
            raise ConfigError(f"unknown threat model {text!r}; expected TM1, TM2 or TM3") from None


ALL_THREAT_MODELS = (ThreatModel.TM1, ThreatModel.TM2, ThreatModel.TM3)


@dataclass(frozen=True)
class Scenario:
    name: str
    source_class: int
    target_class: int

    def __post_init__(self):
        if self.source_class == self.target_class:
            raise ConfigError(f"scenario {self.name!r}: source and target class must differ")
        if self.source_class < 0 or self.target_class < 0:
            raise ConfigError(f"scenario {self.name!r}: negative class id")

    def to_dict(self):
        return {"name": self.name, "source_class": self.source_class, "target_class": self.target_class}


DEFAULT_SCENARIO_PAIRS = (
    ("stop", "speed_60"),
    ("speed_30", "speed_80"),
    ("left_turn", "right_turn"),
    ("right_turn", "left_turn"),
    ("no_entry", "speed_60"),
)


def _class_lookup(class_map):
    if isinstance(class_map, dict):
        return dict(class_map)
    return {name: i for i, name in enumerate(class_map)}


def make_scenario(source, target, class_map) -> Scenario:
    lookup = _class_lookup(class_map)
    ids = []
    for name in (source, target):
        if name not in lookup:
            raise ConfigError(f"class {name!r} is not in the dataset's class table")
        ids.append(int(lookup[name]))
    return Scenario(f"{source}->{target}", ids[0], ids[1])


def parse_scenarios(text, class_map):
    """``"default"`` or comma-separated ``source->target`` pairs."""
    text = str(text).strip()
    if text in ("", "default"):
        return default_scenarios(class_map)
    out = []
    for item in text.split(","):
        if "->" not in item:
            raise ConfigError(f"scenario {item.strip()!r} must look like source->target")
        src, tgt = (s.strip() for s in item.split("->", 1))
        out.append(make_scenario(src, tgt, class_map))
    return out


def default_scenarios(class_map):
    """The five targeted pairs, mapped onto the dataset's class ids by name."""
    lookup = _class_lookup(class_map)
    if len(lookup) < 6:
        raise ConfigError(f"default scenarios need at least 6 classes, got {len(lookup)}")
    return [make_scenario(s, t, lookup) for s, t in DEFAULT_SCENARIO_PAIRS]


# ---------------------------------------------------------------------------
# pipelines and metrics


def pipeline_proba(net: Network, filt: LinearFilter | None, tm: ThreatModel, xs):
    """Batched class probabilities of ``xs`` as seen under ``tm``."""
    xs = np.asarray(xs, dtype=np.float32)
    if xs.shape[1:] != net.input_shape:
        raise InputError(f"expected images of shape {net.input_shape}, got {xs.shape[1:]}")
    if tm.filtered and filt is not None:
        if filt.shape != net.input_shape:
            raise InputError(f"filter built for {filt.shape}, network expects {net.input_shape}")
        xs = filt.apply(xs)
    return predict_proba_batched(net, xs)


def evaluate_pipeline(net: Network, filt: LinearFilter | None, tm: ThreatModel, x_adv) -> Prediction:
    x_adv = np.asarray(x_adv, dtype=np.float32)
    if x_adv.shape != net.input_shape:
        raise InputError(f"expected an image of shape {net.input_shape}, got {x_adv.shape}")
    return Prediction(pipeline_proba(net, filt, tm, x_adv[None])[0])


def _top5_hits(probs, labels, k=TOP_K):
    return np.any(top_k_indices(probs, k) == np.asarray(labels)[:, None], axis=1)


def top5_accuracy(net: Network, filt: LinearFilter | None, dataset) -> float:
    if len(dataset.labels) == 0:
        raise InputError("top-5 accuracy of an empty dataset is undefined")
    if net.num_classes < 6:
        raise ConfigError(f"top-5 accuracy needs at least 6 classes, network has {net.num_classes}")
    tm = ThreatModel.TM2 if filt is not None else ThreatModel.TM1
    probs = pipeline_proba(net, filt, tm, dataset.images)
    return float(np.mean(_top5_hits(probs, dataset.labels)))


def cost_top5(p_tm1, p_tm2) -> float:
    """Top-5 difference between unfiltered and filtered predictions; lies in [-1, 1]."""
    p1 = p_tm1.probabilities if isinstance(p_tm1, Prediction) else p_tm1
    p2 = p_tm2.probabilities if isinstance(p_tm2, Prediction) else p_tm2
    return float(top5_cost(p1, p2))


# ---------------------------------------------------------------------------
# report


def _round(v):
    return None if v is None else round(float(v), 8)


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


@dataclass
class EvaluationReport:
    """Rows follow ``CSV_COLUMNS``. ``run`` holds timings and timestamps,
    the only content allowed to differ between identical runs."""

    rows: list
    clean: dict
    samples: dict
    metadata: dict
    run: dict = field(default_factory=dict)

    def cell(self, attack, filter_label, tm, scenario):
        for row in self.rows:
            if (row["attack"] == attack and row["filter"] == filter_label
                    and row["threat_model"] == tm and row["scenario"] == scenario):
                return row
        raise KeyError((attack, filter_label, tm, scenario))

    def mean_metric(self, attack, filter_label, tm, metric):
        """Mean of ``metric`` over the scenarios of an attack/filter/tm column."""
        vals = [r[metric] for r in self.rows
                if r["attack"] == attack and r["filter"] == filter_label
                and r["threat_model"] == tm and r["status"] == "ok"]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def attacks(self):
        return list(dict.fromkeys(r["attack"] for r in self.rows))

    @property
    def filters(self):
        return list(self.clean)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r["attack"], r["filter_kind"], "" if r["filter_param"] is None else r["filter_param"],
                             r["threat_model"], r["scenario"]]
                            + [_fmt(r[m]) for m in METRICS] + [r["n_samples"], r["status"]])
        return buf.getvalue()

    def to_dict(self, include_run=True):
        d = {"version": REPORT_VERSION, "columns": list(CSV_COLUMNS), "metadata": self.metadata,
             "rows": self.rows, "clean": self.clean, "samples": self.samples}
        if include_run:
            d["run"] = self.run
        return d

    def json_text(self, include_run=True) -> str:
        return json.dumps(self.to_dict(include_run), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("a report must be a JSON object")
        if d.get("version") != REPORT_VERSION:
            raise ConfigError(f"unsupported report version {d.get('version')!r}")
        return cls(d["rows"], d["clean"], d["samples"], d["metadata"], d.get("run", {}))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}: not a sweep report ({exc})") from None

    def recount(self, row):
        """Success rate recomputed from the stored per-sample predictions."""
        preds = self.samples[_sample_key(row["attack"], row["filter"], row["scenario"])]["predictions"]
        target = self.metadata["scenarios"][row["scenario"]]["target_class"]
        p = np.asarray(preds[row["threat_model"]])
        return float(np.mean(p == target))

    @property
    def n_failed(self):
        return sum(r["status"] != "ok" for r in self.rows)


def _sample_key(attack, filter_label, scenario):
    return f"{attack}|{filter_label}|{scenario}"


# ---------------------------------------------------------------------------
# sweep


def _pick_target_sample(net, dataset, target, clean_pred):
    idx = dataset.indices_of(target)
    if len(idx) == 0:
        raise InputError(f"no test image of target class {target}")
    good = idx[clean_pred[idx] == target]
    return dataset.images[good[0] if len(good) else idx[0]]


def _error_status(exc):
    msg = " ".join(str(exc).split())
    return f"error: {type(exc).__name__}: {msg}" if msg else f"error: {type(exc).__name__}"


def analyze_filter_impact(net: Network, attacks, filter_sweep=None, scenarios=None, dataset=None,
                          samples_per_cell=DEFAULT_SAMPLES_PER_CELL, threat_models=ALL_THREAT_MODELS,
                          threads=1, seed=0, log=None, extra_metadata=None) -> EvaluationReport:
    """Run every attack over every filter and scenario and collect the report.

    ``attacks`` is an ``AttackSpec`` or a list of them. Cells are computed by a
    pool of ``threads`` workers; results are gathered in config order, so the
    report bytes do not depend on the worker count.
    """
    if dataset is None:
        raise ConfigError("a labeled test dataset is required")
    if isinstance(attacks, AttackSpec):
        attacks = [attacks]
    attacks = list(attacks)
    filter_sweep = list(default_sweep() if filter_sweep is None else filter_sweep)
    scenarios = list(default_scenarios(dataset.class_names) if scenarios is None else scenarios)
    threat_models = [ThreatModel.parse(t) if not isinstance(t, ThreatModel) else t for t in threat_models]
    if not attacks or not filter_sweep or not scenarios or not threat_models:
        raise ConfigError("attacks, filter sweep, scenarios and threat models must all be nonempty")
    if len({a.name for a in attacks}) != len(attacks):
        raise ConfigError("attack names in a sweep must be unique")
    if len({f.label for f in filter_sweep}) != len(filter_sweep):
        raise ConfigError("filter configurations in a sweep must be unique")
    if len({s.name for s in scenarios}) != len(scenarios):
        raise ConfigError("scenario names in a sweep must be unique")
    if samples_per_cell < 1:
        raise ConfigError("samples_per_cell must be >= 1")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    if dataset.image_shape != net.input_shape:
        raise InputError(f"dataset images {dataset.image_shape} do not match network input {net.input_shape}")
    for sc in scenarios:
        if max(sc.source_class, sc.target_class) >= net.num_classes:
            raise ConfigError(f"scenario {sc.name!r} refers to a class the network does not have")
    say = log or (lambda msg: None)
    timings = {}
    t_start = time.perf_counter()
    filters = [build_filter(cfg, net.input_shape) for cfg in filter_sweep]
    labels = dataset.labels
    pool = ThreadPoolExecutor(max_workers=threads)
    try:
        # clean predictions per filter over the whole test set
        t0 = time.perf_counter()
        clean_probs = list(pool.map(lambda f: pipeline_proba(net, f, ThreatModel.TM2, dataset.images), filters))
        plain_probs = predict_proba_batched(net, dataset.images)
        clean_pred = np.argmax(plain_probs, axis=1)
        timings["clean_s"] = time.perf_counter() - t0

        sample_idx = {sc.name: dataset.indices_of(sc.source_class)[:samples_per_cell] for sc in scenarios}
        y_samples = {}
        for sc in scenarios:
            try:
                y_samples[sc.name] = _pick_target_sample(net, dataset, sc.target_class, clean_pred)
            except FademlError as exc:
                y_samples[sc.name] = exc

        def generate(spec, filt, sc):
            idx = sample_idx[sc.name]
            if len(idx) == 0:
                raise InputError(f"no test image of source class {sc.source_class}")
            xs = dataset.images[idx]
            if spec.kind == "fademl":
                y = y_samples[sc.name]
                if isinstance(y, Exception):
                    raise y
                ex = attack_batch(net, xs, sc.target_class, spec, filt=filt,
                                  y_samples=np.broadcast_to(y, xs.shape), strict=False)
            else:
                ex = attack_batch(net, xs, sc.target_class, spec)
            x_adv = np.stack([e.x_adversarial for e in ex])
            if not np.isfinite(x_adv).all():
                raise FademlError("attack produced non-finite pixels")
            return x_adv

        def guarded(fn, *args):
            try:
                return fn(*args)
            except (FademlError, ArithmeticError, ValueError, FloatingPointError) as exc:
                return exc

        # base attacks are filter-independent: one batch per (attack, scenario)
        t0 = time.perf_counter()
        base_jobs = [(a, sc) for a in attacks if a.kind != "fademl" for sc in scenarios]
        base_adv = dict(zip(((a.name, sc.name) for a, sc in base_jobs),
                            pool.map(lambda job: guarded(generate, job[0], None, job[1]), base_jobs)))
        timings["base_attacks_s"] = time.perf_counter() - t0

        def evaluate(job):
            spec, fi, sc = job
            filt = filters[fi]
            if spec.kind == "fademl":
                x_adv = guarded(generate, spec, filt, sc)
            else:
                x_adv = base_adv[(spec.name, sc.name)]
            if isinstance(x_adv, Exception):
                return x_adv
            return guarded(_evaluate_cell, net, filt, x_adv, sample_idx[sc.name], labels,
                           clean_probs[fi], plain_probs)

        t0 = time.perf_counter()
        jobs = [(a, fi, sc) for a in attacks for fi in range(len(filters)) for sc in scenarios]
        results = list(pool.map(evaluate, jobs))
        timings["evaluate_s"] = time.perf_counter() - t0
    finally:
        pool.shutdown()

    rows, samples = [], {}
    by_job = dict(zip(((a.name, fi, sc.name) for a, fi, sc in jobs), results))
    for a in attacks:
        for fi, cfg in enumerate(filter_sweep):
            for tm in threat_models:
                for sc in scenarios:
                    res = by_job[(a.name, fi, sc.name)]
                    row = {"attack": a.name, "filter": cfg.label, "filter_kind": cfg.kind,
                           "filter_param": cfg.param, "threat_model": tm.value, "scenario": sc.name}
                    if isinstance(res, Exception):
                        row.update({m: None for m in METRICS})
                        row.update(n_samples=0, status=_error_status(res))
                    else:
                        key = "TM2" if tm.filtered else "TM1"
                        probs = res["probs"][key]
                        row.update(
                            success_rate=_round(np.mean(np.argmax(probs, axis=1) == sc.target_class)),
                            confidence=_round(np.mean(probs.max(axis=1))),
                            top5_acc=_round(res["top5"][key]),
                            eq3_cost=_round(np.mean(top5_cost(res["probs"]["TM1"], probs))),
                            n_samples=int(len(probs)), status="ok")
                    rows.append(row)
            for sc in scenarios:
                res = by_job[(a.name, fi, sc.name)]
                if isinstance(res, Exception):
                    continue
                preds = {"TM1": np.argmax(res["probs"]["TM1"], axis=1).tolist()}
                for tm in threat_models:
                    if tm.filtered:
                        preds[tm.value] = np.argmax(res["probs"]["TM2"], axis=1).tolist()
                samples[_sample_key(a.name, cfg.label, sc.name)] = {
                    "indices": sample_idx[sc.name].tolist(), "predictions": preds}

    clean = {}
    for cfg, probs in zip(filter_sweep, clean_probs):
        clean[cfg.label] = {
            "kind": cfg.kind, "param": cfg.param,
            "top1_acc": _round(np.mean(np.argmax(probs, axis=1) == labels)),
            "top5_acc": _round(np.mean(_top5_hits(probs, labels))),
            "confidence": _round(np.mean(probs.max(axis=1))),
            "scenario_confidence": {sc.name: (_round(np.mean(probs[sample_idx[sc.name]].max(axis=1)))
                                              if len(sample_idx[sc.name]) else None)
                                    for sc in scenarios},
        }
    metadata = {
        "seed": int(seed),
        "attacks": [a.to_dict() for a in attacks],
        "filters": [cfg.to_dict() for cfg in filter_sweep],
        "threat_models": [tm.value for tm in threat_models],
        "scenarios": {sc.name: sc.to_dict() for sc in scenarios},
        "samples_per_cell": int(samples_per_cell),
        "test_set_size": int(len(labels)),
        "class_names": list(dataset.class_names),
        "clean_top1_unfiltered": _round(np.mean(clean_pred == labels)),
        # LAP averages the centre pixel with its np nearest neighbours (divisor np + 1);
        # other readings of the neighbourhood would shift the LAP columns
        "lap_convention": "centre plus np nearest, row-major ties, divisor np+1",
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    timings["total_s"] = time.perf_counter() - t_start
    report = EvaluationReport(rows, clean, samples, metadata,
                              {"timings": {k: round(v, 3) for k, v in timings.items()},
                               "threads": int(threads),
                               "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
    say(f"sweep done: {len(rows)} cells, {report.n_failed} failed, {timings['total_s']:.1f}s")
    return report


def _evaluate_cell(net, filt, x_adv, idx, labels, clean_filtered, clean_plain):
    """Probabilities of ``x_adv`` with and without the filter, plus top-5
    accuracy of the test set in which the attacked images are swapped for
    their adversarial versions."""
    p1 = predict_proba_batched(net, x_adv)
    p2 = predict_proba_batched(net, filt.apply(x_adv))
    n = len(labels)
    top5 = {}
    for key, p, clean in (("TM1", p1, clean_plain), ("TM2", p2, clean_filtered)):
        hits = _top5_hits(clean, labels)
        swapped = int(hits.sum()) - int(hits[idx].sum()) + int(_top5_hits(p, labels[idx]).sum())
        top5[key] = swapped / n
    return {"probs": {"TM1": p1, "TM2": p2}, "top5": top5}
