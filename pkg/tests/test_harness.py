import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fademl.attacks import AttackSpec, parse_attack
from fademl.data.dataset import LabeledDataset
from fademl.data.synthetic import CLASS_NAMES
from fademl.errors import ConfigError, InputError
from fademl.filters import FilterConfig, build_filter
from fademl.harness import (CSV_COLUMNS, EvaluationReport, Scenario, ThreatModel, analyze_filter_impact,
                            cost_top5, default_scenarios, evaluate_pipeline, make_scenario, parse_scenarios,
                            pipeline_proba, top5_accuracy)
from fademl.nn import Dense, Network, Softmax
from conftest import small_conv_net

NAMES = list(CLASS_NAMES[:7])
SHAPE = (3, 8, 8)


def toy_dataset(per_class=6, seed=0, classes=7):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    images = rng.uniform(0, 1, (len(labels),) + SHAPE).astype(np.float32)
    # a class-dependent brightness so a random net spreads its votes a bit
    images *= (0.5 + labels / (2 * classes))[:, None, None, None].astype(np.float32)
    return LabeledDataset(images, labels, NAMES[:classes], "test")


@pytest.fixture(scope="module")
def net():
    return small_conv_net(seed=11, shape=SHAPE, classes=7)


@pytest.fixture(scope="module")
def data():
    return toy_dataset()


SWEEP = [FilterConfig(), FilterConfig("lap", np=4), FilterConfig("lar", r=2)]
ATTACKS = [AttackSpec("fgsm", epsilon=0.1), AttackSpec("bim", epsilon=0.1, max_iters=5),
           parse_attack("fademl:fgsm", epsilon=0.1, max_iters=5)]


@pytest.fixture(scope="module")
def report(net, data):
    scen = parse_scenarios("stop->speed_60,left_turn->right_turn", data.class_names)
    return analyze_filter_impact(net, ATTACKS, SWEEP, scen, data, samples_per_cell=4, seed=0)


def test_default_scenarios_map_names_to_ids():
    scen = default_scenarios(NAMES)
    assert [s.name for s in scen] == ["stop->speed_60", "speed_30->speed_80", "left_turn->right_turn",
                                      "right_turn->left_turn", "no_entry->speed_60"]
    assert (scen[0].source_class, scen[0].target_class) == (0, 2)
    assert parse_scenarios("default", NAMES) == scen


@pytest.mark.parametrize("text", ["stop", "stop->nowhere", "stop->stop"])
def test_bad_scenarios_rejected(text):
    with pytest.raises(ConfigError):
        parse_scenarios(text, NAMES)


def test_default_scenarios_need_six_classes():
    with pytest.raises(ConfigError):
        default_scenarios(NAMES[:5])


def test_threat_model_parse():
    assert ThreatModel.parse(" tm2 ") is ThreatModel.TM2
    assert not ThreatModel.TM1.filtered and ThreatModel.TM3.filtered
    with pytest.raises(ConfigError):
        ThreatModel.parse("TM4")


def test_identity_filter_makes_threat_models_agree(net, data):
    f = build_filter(FilterConfig(), SHAPE)
    p1 = pipeline_proba(net, f, ThreatModel.TM1, data.images)
    p2 = pipeline_proba(net, f, ThreatModel.TM2, data.images)
    np.testing.assert_array_equal(p1, p2)


def test_tm2_and_tm3_see_the_same_pipeline(net, data):
    f = build_filter(FilterConfig("lar", r=2), SHAPE)
    np.testing.assert_array_equal(pipeline_proba(net, f, ThreatModel.TM2, data.images),
                                  pipeline_proba(net, f, ThreatModel.TM3, data.images))
    x = data.images[0]
    a = evaluate_pipeline(net, f, ThreatModel.TM1, x)
    b = evaluate_pipeline(net, f, ThreatModel.TM2, x)
    np.testing.assert_allclose(a.probabilities, net.predict_proba(x), rtol=1e-6)
    np.testing.assert_allclose(b.probabilities, net.predict_proba(f.apply(x)), rtol=1e-6)


def test_pipeline_rejects_mismatched_filter(net, data):
    f = build_filter(FilterConfig("lar", r=1), (3, 9, 9))
    with pytest.raises(InputError):
        pipeline_proba(net, f, ThreatModel.TM2, data.images)


def test_top5_of_a_uniform_classifier_is_half():
    # ties go to lower ids, so a flat classifier over 10 classes ranks 0..4 first
    net = Network([Dense(10), Softmax()], SHAPE).initialize(0)
    for p in net.parameters():
        p[...] = 0
    labels = np.repeat(np.arange(10), 3)
    ds = LabeledDataset(np.zeros((30,) + SHAPE), labels, list(CLASS_NAMES), "test")
    assert top5_accuracy(net, None, ds) == pytest.approx(0.5)


def test_top5_on_a_hand_built_classifier():
    # logits are the image's channel means, so class c wins for image c
    net = Network([Dense(6), Softmax()], (6, 1, 1)).initialize(0)
    w, b = net.layers[0].params()
    w[...] = 10 * np.eye(6)
    b[...] = 0
    images = np.eye(6, dtype=np.float32).reshape(6, 6, 1, 1)
    ds = LabeledDataset(images, [0, 1, 2, 3, 4, 5], NAMES[:6], "test")
    assert top5_accuracy(net, None, ds) == 1.0
    # labels shifted by one; the five runners-up tie and go to lower ids, so
    # image 4 ranks (4, 0, 1, 2, 3) and misses label 5
    ds2 = LabeledDataset(images, [1, 2, 3, 4, 5, 0], NAMES[:6], "test")
    assert top5_accuracy(net, None, ds2) == pytest.approx(5 / 6)


def test_top5_errors(net):
    empty = LabeledDataset(np.zeros((0,) + SHAPE), np.zeros(0, int), NAMES, "test")
    with pytest.raises(InputError):
        top5_accuracy(net, None, empty)
    small = Network([Dense(3), Softmax()], SHAPE).initialize(0)
    with pytest.raises(ConfigError):
        top5_accuracy(small, None, toy_dataset(classes=3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(6, 12))
def test_top5_cost_is_bounded_and_zero_on_itself(seed, k):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(k))
    q = rng.dirichlet(np.ones(k))
    assert -1.0 <= cost_top5(p, q) <= 1.0
    assert cost_top5(p, p) == 0.0


def test_csv_has_one_row_per_cell(report):
    lines = report.csv_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(ATTACKS) * len(SWEEP) * 3 * 2


def test_success_rate_matches_stored_predictions(report):
    for row in report.rows:
        assert row["status"] == "ok"
        assert report.recount(row) == pytest.approx(row["success_rate"], abs=1e-8)


def test_tm3_rows_equal_tm2_rows(report):
    for a in report.attacks:
        for f in report.filters:
            for sc in report.metadata["scenarios"]:
                r2 = report.cell(a, f, "TM2", sc)
                r3 = report.cell(a, f, "TM3", sc)
                assert [r2[m] for m in ("success_rate", "confidence", "top5_acc", "eq3_cost")] == \
                       [r3[m] for m in ("success_rate", "confidence", "top5_acc", "eq3_cost")]


def test_identity_filter_rows(report):
    for a in report.attacks:
        for sc in report.metadata["scenarios"]:
            r1 = report.cell(a, "identity", "TM1", sc)
            r2 = report.cell(a, "identity", "TM2", sc)
            assert r1["success_rate"] == r2["success_rate"]
            assert r1["eq3_cost"] == 0.0 and r2["eq3_cost"] == 0.0


def test_base_attacks_ignore_the_filter_under_tm1(report):
    for a in ("fgsm", "bim"):
        for sc in report.metadata["scenarios"]:
            vals = {report.cell(a, f, "TM1", sc)["success_rate"] for f in report.filters}
            assert len(vals) == 1


def test_clean_section_covers_every_filter(report, data):
    assert list(report.clean) == [c.label for c in SWEEP]
    for entry in report.clean.values():
        assert 0 <= entry["top5_acc"] <= 1 and 0 < entry["confidence"] <= 1
    assert report.metadata["test_set_size"] == len(data)


def test_report_json_roundtrip(report, tmp_path):
    path = tmp_path / "report.json"
    path.write_text(report.json_text())
    back = EvaluationReport.load(path)
    assert back.csv_text() == report.csv_text()
    assert back.json_text() == report.json_text()


def test_load_rejects_other_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"version": 1}')
    with pytest.raises(ConfigError):
        EvaluationReport.load(path)


def test_thread_count_does_not_change_the_report(net, data, report):
    scen = parse_scenarios("stop->speed_60,left_turn->right_turn", data.class_names)
    again = analyze_filter_impact(net, ATTACKS, SWEEP, scen, data, samples_per_cell=4, seed=0, threads=4)
    assert again.csv_text() == report.csv_text()
    assert again.json_text(include_run=False) == report.json_text(include_run=False)


def test_failing_cells_are_isolated(net):
    # no test images of class 6, so the scenario starting there cannot run
    ds = toy_dataset(classes=7)
    keep = ds.labels != 6
    ds = LabeledDataset(ds.images[keep], ds.labels[keep], NAMES, "test")
    scen = [make_scenario("stop", "speed_60", NAMES), make_scenario("no_entry", "speed_30", NAMES)]
    rep = analyze_filter_impact(net, [AttackSpec("fgsm", epsilon=0.1)], SWEEP[:2], scen, ds,
                                samples_per_cell=3)
    bad = [r for r in rep.rows if r["scenario"] == "no_entry->speed_30"]
    good = [r for r in rep.rows if r["scenario"] == "stop->speed_60"]
    assert all(r["status"].startswith("error: InputError") for r in bad)
    assert all(r["success_rate"] is None and r["n_samples"] == 0 for r in bad)
    assert all(r["status"] == "ok" for r in good)
    assert rep.n_failed == len(bad)
    assert len(rep.csv_text().splitlines()) == 1 + len(rep.rows)


@pytest.mark.parametrize("kw", [dict(samples_per_cell=0), dict(threads=0), dict(filter_sweep=[]),
                                dict(attacks=[AttackSpec("fgsm"), AttackSpec("fgsm")])])
def test_sweep_argument_validation(net, data, kw):
    args = dict(attacks=[AttackSpec("fgsm")], filter_sweep=SWEEP, dataset=data,
                scenarios=[Scenario("a", 0, 1)])
    args.update(kw)
    with pytest.raises(ConfigError):
        analyze_filter_impact(net, **args)


def test_scenario_outside_network_classes(data):
    net6 = small_conv_net(seed=1, shape=SHAPE, classes=6)
    with pytest.raises(ConfigError):
        analyze_filter_impact(net6, [AttackSpec("fgsm")], SWEEP, [Scenario("x", 0, 6)], data)
