import csv
import io
import json
import math

import numpy as np
import pytest

from ncl.evaluation import (
    ProbeConfig,
    Protocol,
    evaluate_representations,
    fit_probe,
    format_mean_std,
    neighborhood_cosine,
    report_csv,
    report_json,
    task_metrics,
)
from ncl.exceptions import ConfigError, DataError
from ncl.training import TrainConfig, pretrain


def _separable(rng, n=400, shift=3.0):
    y = rng.integers(0, 2, size=n)
    Z = rng.normal(size=(n, 4))
    Z[:, 0] += shift * (2 * y - 1)
    return Z, y


def test_probe_learns_a_separable_problem():
    rng = np.random.default_rng(0)
    Z, y = _separable(rng)
    for head in ("linear", "mlp"):
        probe = fit_probe(Z, y, cfg=ProbeConfig(head=head, lr=1e-2, max_epochs=30))
        m = task_metrics(probe, *_separable(rng), n_classes=2)
        assert m["auroc"] > 0.95


def test_probe_early_stopping_and_validation():
    rng = np.random.default_rng(1)
    Z, y = _separable(rng)
    # overlapping validation classes: the probe becomes overconfident and val loss turns up
    Z_val, y_val = _separable(rng, shift=0.7)
    probe = fit_probe(Z, y, Z_val, y_val, ProbeConfig(lr=1e-2, max_epochs=200, patience=2))
    assert probe.epochs < 200
    assert probe.best_val_loss < math.log(2)
    with pytest.raises(DataError):
        fit_probe(Z, np.zeros(len(Z)))
    with pytest.raises(ConfigError):
        ProbeConfig(head="tree")


def test_undefined_auroc_is_flagged():
    rng = np.random.default_rng(2)
    Z, y = _separable(rng)
    probe = fit_probe(Z, y, cfg=ProbeConfig(lr=1e-2, max_epochs=5))
    m = task_metrics(probe, Z[:10], np.zeros(10), 2)
    assert m["undefined"] and math.isnan(m["auroc"])


def test_multiclass_uses_kappa():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 4, size=300)
    Z = np.eye(4)[y] * 3 + rng.normal(size=(300, 4)) * 0.3
    probe = fit_probe(Z, y, cfg=ProbeConfig(lr=1e-2, max_epochs=30), n_classes=10)
    m = task_metrics(probe, Z, y, 10)
    assert set(m) == {"kappa"} and m["kappa"] > 0.9


def test_format_mean_std():
    assert format_mean_std(0.3123, 0.0061) == "31.2 $\\pm$ 0.6"
    assert format_mean_std(float("nan"), 0.0) == "n/a"


@pytest.fixture(scope="module")
def pretrained(small_stays):
    from conftest import SMALL_ENCODER

    cfg = TrainConfig(method="ncl_w", steps=5, batch_size=8, queue_size=64, t_h=12, encoder=SMALL_ENCODER)
    params, header, _ = pretrain(small_stays, cfg)
    return params, header


def test_report_rows_and_frozen_encoder(small_stays, pretrained):
    params, header = pretrained
    before = {k: v.data.copy() for k, v in params.items()}
    protocol = Protocol(tasks=["decompensation", "length_of_stay"], heads=["linear"], seeds=2,
                        label_fractions=[0.5, 1.0], probe={"lr": 1e-2, "max_epochs": 3})
    rep = evaluate_representations(small_stays, params, header, protocol)
    for k, v in params.items():
        np.testing.assert_array_equal(v.data, before[k])
    keys = {(r["eval_task"], r["label_fraction"], r["metric"]) for r in rep["results"]}
    assert ("decompensation", 0.5, "auroc") in keys and ("length_of_stay", 1.0, "kappa") in keys
    assert all(r["pretrain_task"] == "none" and r["n_seeds"] == 2 for r in rep["results"])
    assert rep["report_version"] == 1 and rep["method"] == "ncl_w"
    # json and csv agree and are deterministic
    again = evaluate_representations(small_stays, params, header, protocol)
    assert report_json(rep) == report_json(again)
    parsed = list(csv.DictReader(io.StringIO(report_csv(rep))))
    assert len(parsed) == len(rep["results"])
    for r, row in zip(json.loads(report_json(rep))["results"], parsed):
        assert r["mean"] == pytest.approx(float(row["mean"]), nan_ok=True)


def test_evaluation_rejects_leaky_splits(small_stays, pretrained):
    params, header = pretrained
    leaky = list(small_stays)
    s = leaky[0]
    leaky.append(type(s)(s.stay_id + "_b", s.patient_id, s.static, s.series, s.labels,
                         "test" if s.split != "test" else "train"))
    with pytest.raises(DataError):
        evaluate_representations(leaky, params, header, Protocol(seeds=1))


def test_neighborhood_cosine_by_hand():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    Z = np.stack([a, a, b, a, b])
    pairs = np.array([[0, 0], [0, 1], [0, 5], [1, 0], [1, 1]])
    # stay 0 with w=2: only hours 0 and 1 are close (cos 1); stay 1: cos 0
    assert neighborhood_cosine(Z, pairs, 2) == 0.5
    # w=10: stay 0 pairs (0,1)=1, (0,5)=0, (1,5)=0
    assert neighborhood_cosine(Z, pairs, 10) == pytest.approx((1 / 3 + 0) / 2)
    with pytest.raises(DataError):
        neighborhood_cosine(Z[:1], pairs[:1], 2)
