"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end fixture trains the default VGG-mini, runs the default sweep
and re-renders the plots through the installed command line, timing each
stage. Criteria 4, 5, 6 and 8 read its artefacts.
"""

import os
import subprocess
import sys
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fademl.attacks import AttackSpec, bim, fademl_attack, fgsm, lbfgs_attack, parse_attack
from fademl.data.checkpoint import load_checkpoint
from fademl.data.synthetic import generate_synthetic_signs
from fademl.filters import FilterConfig, build_filter, default_sweep
from fademl.harness import EvaluationReport, analyze_filter_impact, default_scenarios
from fademl.nn import Conv2D, Dense, MaxPool, Network, ReLU, Softmax, input_gradient, loss
from conftest import record_acceptance

pytestmark = pytest.mark.acceptance


def fademl_cli(*args, cwd):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "fademl", "--quiet", *args], cwd=cwd,
                          capture_output=True, text=True, env=dict(os.environ, PYTHONHASHSEED="0"))
    return proc, time.perf_counter() - t0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    out = str(root / "out")
    timings = {}
    t0 = time.perf_counter()
    for stage in ("train", "sweep", "report"):
        proc, timings[stage] = fademl_cli(stage, "--out", out, cwd=root)
        assert proc.returncode == 0, f"{stage} failed: {proc.stderr[-2000:]}"
    timings["total"] = time.perf_counter() - t0
    return root / "out", timings


# ---------------------------------------------------------------------------
# criterion 1


def random_small_net(seed):
    """At most three weight layers on inputs of at most 8x8."""
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(3, 9)), int(rng.integers(3, 9)))
    h, w = shape[1:]
    classes = int(rng.integers(2, 7))
    layers, flat = [], False
    for _ in range(int(rng.integers(0, 3))):
        if not flat and rng.uniform() < 0.5:
            layers += [Conv2D(int(rng.integers(1, 4))), ReLU()]
            if rng.uniform() < 0.4 and min(h, w) >= 4:
                layers.append(MaxPool(2))
                h, w = h // 2, w // 2
        else:
            layers += [Dense(int(rng.integers(3, 9))), ReLU()]
            flat = True
    layers += [Dense(classes), Softmax()]
    return Network(layers, shape).initialize(seed), classes


def central_difference(net64, x, target, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (loss(net64, xp, target) - loss(net64, xm, target)) / (2 * h)
    return g


def test_criterion_1_gradient_oracle():
    t0 = time.perf_counter()
    worst, checked, n_nets = 0.0, 0, 24
    for seed in range(n_nets):
        net, classes = random_small_net(seed)
        assert sum(isinstance(l, (Conv2D, Dense)) for l in net.layers) <= 3
        assert max(net.input_shape[1:]) <= 8
        rng = np.random.default_rng(100 + seed)
        x = rng.uniform(size=net.input_shape)
        target = int(rng.integers(classes))
        g = input_gradient(net, x.astype(np.float32), target)
        fd = central_difference(net.astype(np.float64), x, target)
        mask = np.abs(fd) > 1e-4
        checked += int(mask.sum())
        if mask.any():
            worst = max(worst, float(np.max(np.abs(g - fd)[mask] / np.abs(fd[mask]))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-2 and elapsed < 30 and checked > 0
    record_acceptance(1, ok, f"{n_nets} nets, {checked} elements, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# criterion 2


def dense_oracle(cfg, h, w):
    if cfg.kind == "identity":
        return np.eye(h * w)
    pts = sorted((dy * dy + dx * dx, dy, dx) for dy in range(-8, 9) for dx in range(-8, 9))
    if cfg.kind == "lar":
        offs = [(dy, dx) for d, dy, dx in pts if d <= cfg.r ** 2]
    else:
        offs = [(dy, dx) for _, dy, dx in pts[:cfg.np + 1]]
    m = np.zeros((h * w, h * w))
    for i in range(h):
        for j in range(w):
            for dy, dx in offs:
                m[i * w + j, min(max(i + dy, 0), h - 1) * w + min(max(j + dx, 0), w - 1)] += 1 / len(offs)
    return m


def test_criterion_2_filter_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = {"rows": 0.0, "linear": 0.0, "adjoint": 0.0, "dense": 0.0}
    configs = default_sweep()
    for cfg in configs:
        for size in (8, 32):
            f = build_filter(cfg, (3, size, size))
            worst["rows"] = max(worst["rows"], float(np.abs(f.row_sums() - 1).max()))
            for _ in range(5):
                x, y = rng.uniform(size=(2, 3, size, size)).astype(np.float32)
                a, b = (np.float32(v) for v in rng.uniform(-2, 2, 2))
                worst["linear"] = max(worst["linear"],
                                      float(np.abs(f.apply(a * x + b * y) - a * f.apply(x) - b * f.apply(y)).max()))
                lhs = float(np.sum(f.apply(x).astype(np.float64) * y))
                rhs = float(np.sum(x.astype(np.float64) * f.adjoint_apply(y)))
                worst["adjoint"] = max(worst["adjoint"], abs(lhs - rhs) / max(1.0, abs(lhs)))
        f5 = build_filter(cfg, (1, 5, 5))
        worst["dense"] = max(worst["dense"], float(np.abs(f5.dense_matrix() - dense_oracle(cfg, 5, 5)).max()))
    elapsed = time.perf_counter() - t0
    ok = (worst["rows"] <= 1e-6 and worst["linear"] <= 1e-5 and worst["adjoint"] <= 1e-4
          and worst["dense"] <= 1e-12 and elapsed < 30 and len(configs) == 11)
    record_acceptance(2, ok, f"{len(configs)} configs x (8, 32); row {worst['rows']:.1e}, linear "
                             f"{worst['linear']:.1e}, adjoint {worst['adjoint']:.1e}, dense {worst['dense']:.1e}, "
                             f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# criterion 3


def test_criterion_3_attack_contracts():
    rng = np.random.default_rng(3)
    net = Network([Conv2D(4), ReLU(), MaxPool(2), Dense(6), Softmax()], (3, 8, 8)).initialize(3)
    checks = {}
    eps = 0.07
    alphabet, linf, bim_fgsm, ident = True, True, True, True
    ident_filter = build_filter(FilterConfig(), net.input_shape)
    n_ident = 0
    for i in range(10):
        x = rng.uniform(0.1, 0.9, size=(3, 8, 8)).astype(np.float32)
        t = int((np.argmax(net.predict_proba(x)) + 1 + i % 5) % 6)
        f = fgsm(net, x, t, AttackSpec("fgsm", epsilon=eps))
        alphabet &= set(np.unique(f.noise)).issubset({np.float32(-eps), np.float32(0), np.float32(eps)})
        b = bim(net, x, t, AttackSpec("bim", epsilon=eps, max_iters=20))
        linf &= float(np.abs(b.x_adversarial - x).max()) <= eps + 1e-7
        b1 = bim(net, x, t, AttackSpec("bim", epsilon=eps, step_size=eps, max_iters=1))
        bim_fgsm &= np.array_equal(b1.x_adversarial, np.clip(x + f.noise, 0, 1))
        # any input the net assigns to the target class serves as the target sample
        ys = rng.uniform(size=(400, 3, 8, 8)).astype(np.float32)
        hits = np.flatnonzero(net.predict_proba(ys).argmax(axis=1) == t)
        if len(hits) == 0:
            continue
        for base in (AttackSpec("fgsm", epsilon=eps), AttackSpec("bim", epsilon=eps, max_iters=10)):
            fa = fademl_attack(net, ident_filter, x, ys[hits[0]], AttackSpec("fademl", base=base))
            want = (fgsm if base.kind == "fgsm" else bim)(net, x, t, base)
            ident &= fa.x_adversarial.tobytes() == want.x_adversarial.tobytes()
            n_ident += 1
    ident &= n_ident >= 10
    checks.update(alphabet=alphabet, linf=linf, bim1_fgsm=bim_fgsm, fademl_identity=ident)

    # two-class linear toy: distance to the decision hyperplane
    lin = Network([Dense(2), Softmax()], (1, 4, 4)).initialize(0)
    w, bias = lin.layers[0].params()
    errs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        normal = r.normal(size=16)
        offset = r.normal() * 0.1
        w[...] = np.stack([np.zeros(16), normal])
        bias[...] = [0.0, offset]
        distance = r.uniform(0.05, 0.25)
        anchor = r.uniform(0.4, 0.6, 16)
        unit = normal / np.linalg.norm(normal)
        on_plane = anchor - (offset + normal @ anchor) / (normal @ normal) * normal
        x = (on_plane - distance * unit).reshape(1, 4, 4).astype(np.float32)
        exact = float(-(normal @ x.ravel() + offset) / np.linalg.norm(normal))
        ex = lbfgs_attack(lin, x, 1, AttackSpec("lbfgs"))
        errs.append(abs(ex.l2_noise_norm - exact) / exact if ex.success_unfiltered else np.inf)
    checks["lbfgs_hyperplane"] = max(errs) <= 0.05
    ok = all(checks.values())
    record_acceptance(3, ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
                      + f" (hyperplane max rel err {max(errs):.3f})")
    assert ok


# ---------------------------------------------------------------------------
# criteria 4-8 on the trained model


def test_criterion_4_ordering(e2e):
    out, timings = e2e
    import json
    train_meta = json.loads((out / "train.json").read_text())
    acc = train_meta["test_accuracy"]
    net = load_checkpoint(out / "model.fadm")
    _, test = generate_synthetic_signs(10, 500, 32, seed=0)
    scenarios = default_scenarios(test.class_names)
    n_src = min(len(test.indices_of(s.source_class)) for s in scenarios)
    t0 = time.perf_counter()
    rep = analyze_filter_impact(net, [parse_attack("bim"), parse_attack("fademl:bim")],
                                [FilterConfig("lar", r=2)], scenarios, test, samples_per_cell=100,
                                threat_models=["TM1", "TM2"])
    attack_s = time.perf_counter() - t0
    bim1 = rep.mean_metric("bim", "lar_r2", "TM1", "success_rate")
    bim2 = rep.mean_metric("bim", "lar_r2", "TM2", "success_rate")
    fad2 = rep.mean_metric("fademl(bim)", "lar_r2", "TM2", "success_rate")
    # the sweep report holds the same cells
    full = EvaluationReport.load(out / "report.json")
    same = all(full.cell(a, "lar_r2", tm, s.name)["success_rate"] == rep.cell(a, "lar_r2", tm, s.name)["success_rate"]
               for a in ("bim", "fademl(bim)") for tm in ("TM1", "TM2") for s in scenarios)
    ok = (acc >= 0.90 and timings["train"] < 300 and n_src >= 100 and bim1 >= 0.60
          and bim1 - bim2 >= 0.30 and fad2 - bim2 >= 0.20 and attack_s < 300 and same)
    record_acceptance(4, ok, f"clean top-1 {acc:.3f} in {timings['train']:.0f}s; BIM TM1 {bim1:.3f}, "
                             f"BIM TM2@lar_r2 {bim2:.3f} (drop {100 * (bim1 - bim2):.1f}pp), fademl(BIM) TM2 "
                             f"{fad2:.3f} (+{100 * (fad2 - bim2):.1f}pp); attack phase {attack_s:.0f}s; "
                             f"sweep agrees={same}")
    assert ok


def test_criterion_5_confidence_reduction(e2e):
    out, _ = e2e
    rep = EvaluationReport.load(out / "report.json")
    clean = rep.clean["lar_r2"]["scenario_confidence"]
    parts, ok = [], True
    for atk in ("fgsm", "bim", "lbfgs"):
        adv = [rep.cell(atk, "lar_r2", "TM2", s)["confidence"] for s in clean]
        adv_mean, clean_mean = float(np.mean(adv)), float(np.mean(list(clean.values())))
        ok &= adv_mean < clean_mean
        parts.append(f"{atk} {adv_mean:.3f} vs clean {clean_mean:.3f}")
    record_acceptance(5, ok, "filtered confidence at lar_r2: " + "; ".join(parts))
    assert ok


def test_criterion_6_filter_strength(e2e):
    out, _ = e2e
    rep = EvaluationReport.load(out / "report.json")
    top5 = {k: v["top5_acc"] for k, v in rep.clean.items()}
    lap_mid = max(top5[f"lap_np{n}"] for n in (8, 16, 32))
    lar_mid = max(top5[f"lar_r{r}"] for r in (2, 3, 4))
    svg = ET.parse(out / "top5_vs_filter.svg").getroot()
    curves = {(p.get("data-panel"), p.get("data-series")): len(p.get("points").split())
              for p in svg.iter("{http://www.w3.org/2000/svg}polyline")}
    rendered = curves.get(("LAP", "clean")) == 5 and curves.get(("LAR", "clean")) == 5
    ok = top5["lap_np64"] < lap_mid and top5["lar_r5"] < lar_mid and rendered
    record_acceptance(6, ok, f"clean top-5 lap_np64 {top5['lap_np64']:.3f} < {lap_mid:.3f}, lar_r5 "
                             f"{top5['lar_r5']:.3f} < {lar_mid:.3f}; both curves rendered={rendered}")
    assert ok


def test_criterion_7_determinism(e2e, tmp_path):
    out, _ = e2e
    model = str(out / "model.fadm")
    csvs = []
    for i, threads in enumerate(("1", "1", "8")):
        proc, _ = fademl_cli("sweep", "--model", model, "--out", str(tmp_path / f"run{i}"),
                             "--threads", threads, "--set", "sweep.samples_per_cell=5", cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr[-2000:]
        csvs.append((tmp_path / f"run{i}" / "report.csv").read_bytes())
    ok = csvs[0] == csvs[1] == csvs[2]
    rows = len(csvs[0].splitlines()) - 1
    record_acceptance(7, ok, f"reduced sweep ({rows} rows): repeat identical="
                             f"{csvs[0] == csvs[1]}, threads 1 vs 8 identical={csvs[0] == csvs[2]}")
    assert ok


def test_bim_is_at_least_as_strong_as_fgsm(e2e):
    # not a numbered criterion: the refinement ordering the report should show
    rep = EvaluationReport.load(e2e[0] / "report.json")
    assert rep.mean_metric("bim", "identity", "TM1", "success_rate") >= \
        rep.mean_metric("fgsm", "identity", "TM1", "success_rate")
    assert "lap_convention" in rep.metadata


def test_criterion_8_end_to_end(e2e):
    out, t = e2e
    files = ["model.fadm", "train.csv", "report.csv", "report.json", "top5_vs_filter.svg", "success_vs_filter.svg"]
    present = all((out / f).is_file() for f in files)
    ok = present and t["total"] < 15 * 60
    record_acceptance(8, ok, f"train {t['train']:.0f}s + sweep {t['sweep']:.0f}s + plots {t['report']:.1f}s "
                             f"= {t['total'] / 60:.1f} min; artefacts present={present}")
    assert ok
