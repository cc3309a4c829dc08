import logging

import numpy as np
import pytest

from ncl.data import (
    LOS_BIN_EDGES,
    PatientStay,
    RawStay,
    SynthConfig,
    check_patient_disjoint,
    fit_scaler,
    forward_fill,
    los_bins,
    mimic_like_schema,
    prevalence,
    preprocess,
    read_dataset,
    stratified_label_fraction_split,
    synth_generate,
    synth_schema,
    synthetic_dataset,
    window,
    windows,
    write_dataset,
)
from ncl.exceptions import DataError

nan = np.nan


def _mimic_raw(rng, stay_id, split, T=30):
    schema = mimic_like_schema()
    cols = []
    for v in schema.series:
        if v.kind == "categorical":
            col = rng.choice(v.categories, size=T).astype(float)
        else:
            col = rng.normal(size=T) * 3 + 10
        col[rng.random(T) < 0.3] = nan
        cols.append(col)
    series = np.stack(cols, axis=1)
    return RawStay(stay_id, stay_id.split("_")[0], np.array([170.0 + rng.normal()]), series,
                   {"decompensation": np.zeros(T)}, split)


def test_mimic_like_schema_gives_48_by_42_windows():
    rng = np.random.default_rng(0)
    schema = mimic_like_schema()
    assert len(schema.encoded_channels()) == 42
    raw = [_mimic_raw(rng, f"p{i}_s0", "train") for i in range(4)]
    stays = preprocess(raw, fit_scaler(raw, schema), schema)
    assert window(stays[0], 29).window.shape == (48, 42)
    assert not np.isnan(stays[0].series).any()


def test_forward_fill_keeps_leading_nans():
    x = np.array([[nan, 1.0], [2.0, nan], [nan, nan], [3.0, 4.0]])
    np.testing.assert_array_equal(forward_fill(x), [[nan, 1], [2, 1], [2, 1], [3, 4]])
    np.testing.assert_array_equal(forward_fill(np.array([nan, 5.0, nan])), [nan, 5, 5])


def test_scaler_ignores_val_and_test_rows():
    schema = synth_schema(SynthConfig(n_channels=1, n_static=1))
    train = RawStay("a", "a", np.array([1.0]), np.array([[0.0], [2.0]]), {}, "train")
    val = RawStay("b", "b", np.array([50.0]), np.array([[1000.0], [1000.0]]), {}, "val")
    stats = fit_scaler([train, val], schema)
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    out = preprocess([train, val], stats, schema)
    np.testing.assert_allclose(out[0].series[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(out[1].series[:, 0], [999.0, 999.0])


def test_constant_channel_scales_to_zero():
    schema = synth_schema(SynthConfig(n_channels=1, n_static=1))
    s = RawStay("a", "a", np.array([1.0]), np.array([[3.0], [3.0]]), {}, "train")
    stats = fit_scaler([s], schema)
    assert stats.constant[0]
    np.testing.assert_array_equal(preprocess([s], stats, schema)[0].series, 0.0)


def test_pipeline_order_and_zero_impute():
    schema = synth_schema(SynthConfig(n_channels=2, n_static=1))
    s = RawStay("a", "a", np.array([nan]), np.array([[nan, 1.0], [2.0, nan], [4.0, 3.0]]), {}, "train")
    stats = fit_scaler([s], schema)
    out = preprocess([s], stats, schema)[0]
    # column 0: ffill -> [nan, 2, 4], scaled with mean 3 / std 1, leading gap -> 0
    np.testing.assert_allclose(out.series[:, 0], [0.0, -1.0, 1.0])
    # column 1: ffill -> [1, 1, 3], mean 5/3
    std = np.std([1, 1, 3])
    np.testing.assert_allclose(out.series[:, 1], (np.array([1, 1, 3]) - 5 / 3) / std)
    assert out.static[0] == 0.0


def test_one_hot_and_unknown_category(caplog):
    schema = mimic_like_schema()
    rng = np.random.default_rng(1)
    raw = _mimic_raw(rng, "p0_s0", "train", T=5)
    stats = fit_scaler([raw], schema)
    j = [v.name for v in schema.series].index("gcs_eye")
    raw.series[:, j] = [1, 4, 9, nan, 2]
    with caplog.at_level(logging.WARNING):
        out = preprocess([raw], stats, schema)[0]
    start = schema.encoded_channels().index("gcs_eye=1")
    block = out.series[:, start:start + 4]
    np.testing.assert_array_equal(block, [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0]])
    assert stats.unknown_categories == 2  # 9 and its forward-filled copy
    assert "unknown categorical" in caplog.text


def test_preprocess_is_idempotent():
    stays = synthetic_dataset(SynthConfig(n_patients=10, missing_rate=0.2, seed=3))
    again = preprocess(stays)
    for a, b in zip(stays, again):
        np.testing.assert_array_equal(a.series, b.series)
        np.testing.assert_array_equal(a.static, b.static)


def test_windows_pre_pad_and_end_at_t():
    series = np.arange(10.0)[:, None]
    s = PatientStay("s", "p", np.zeros(1), series, {"y": np.arange(10.0)})
    w = window(s, 2, t_h=5)
    np.testing.assert_array_equal(w.window[:, 0], [0, 0, 0, 1, 2])
    assert w.label["y"] == 2.0
    np.testing.assert_array_equal(windows(s, [9], t_h=3)[0, :, 0], [7, 8, 9])
    with pytest.raises(DataError):
        window(s, 10, t_h=5)


def test_los_bins():
    assert len(LOS_BIN_EDGES) == 9
    np.testing.assert_array_equal(los_bins([0, 23, 24, 47, 200, 335, 336, 1000]), [0, 0, 1, 1, 8, 8, 9, 9])


def test_label_length_must_match():
    with pytest.raises(DataError):
        PatientStay("s", "p", np.zeros(1), np.zeros((3, 1)), {"y": np.zeros(2)})


def test_synthetic_cohort_properties():
    cfg = SynthConfig(n_patients=60, seed=4, prevalence=0.05)
    a, b = synth_generate(cfg), synth_generate(cfg)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.series, t.series)
    check_patient_disjoint(a)
    assert {s.split for s in a} == {"train", "val", "test"}
    assert abs(prevalence(a) - 0.05) < 0.02
    assert all(s.series.shape[1] == cfg.n_channels for s in a)
    with pytest.raises(DataError):
        synth_generate(SynthConfig(n_channels=4, signal_channels=5))


def test_check_patient_disjoint_detects_leak():
    s1 = PatientStay("a", "p", np.zeros(1), np.zeros((2, 1)), {}, "train")
    s2 = PatientStay("b", "p", np.zeros(1), np.zeros((2, 1)), {}, "test")
    with pytest.raises(DataError):
        check_patient_disjoint([s1, s2])


def test_stratified_fraction_split():
    stays = [s for s in synth_generate(SynthConfig(n_patients=100, seed=5, prevalence=0.05)) if s.split == "train"]
    pos = {s.patient_id for s in stays if s.labels["decompensation"].any()}
    sub = stratified_label_fraction_split(stays, 0.5, seed=0)
    sub_pos = {s.patient_id for s in sub if s.labels["decompensation"].any()}
    assert len(sub_pos) == round(0.5 * len(pos))
    assert len(sub) == pytest.approx(0.5 * len(stays), abs=1)
    assert [s.stay_id for s in stratified_label_fraction_split(stays, 0.5, seed=0)] == [s.stay_id for s in sub]
    with pytest.raises(DataError):
        stratified_label_fraction_split(stays, 0.0, seed=0)
    with pytest.raises(DataError):
        stratified_label_fraction_split(stays[:1], 0.01, seed=0)


def test_dataset_round_trip_is_byte_stable(tmp_path):
    cfg = SynthConfig(n_patients=8, seed=6, missing_rate=0.1)
    raw = synth_generate(cfg)
    schema = synth_schema(cfg)
    stays = synthetic_dataset(cfg)
    write_dataset(tmp_path / "a", stays, schema)
    loaded, schema2, _ = read_dataset(tmp_path / "a")
    assert schema2.to_dict() == schema.to_dict()
    for s, t in zip(stays, loaded):
        assert isinstance(t, PatientStay) and t.split == s.split
        np.testing.assert_array_equal(s.series, t.series)
        np.testing.assert_array_equal(s.labels["decompensation"], t.labels["decompensation"])
    write_dataset(tmp_path / "b", loaded, schema)
    for f in ["manifest.json", f"stays/{stays[0].stay_id}.csv"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert raw[0].series.shape == stays[0].series.shape


def test_read_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text('{"format_version": 99}')
    with pytest.raises(DataError):
        read_dataset(tmp_path)
