"""Anomaly detection and feature squeezing semantics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hijacklab import attack, data, defenses, models
from hijacklab.attack import AnchorFeature, ClassMapping, CloakSet
from hijacklab.defenses import AnomalyConfig, DefenseReport, SqueezeConfig


def _model(seed=0):
    return models.init_model(models.ModelSpec(8, (6, 5), 4), seed=seed)


def _anchor_for(params, x):
    feats = models.forward_features(params, np.atleast_2d(x))[0]
    return AnchorFeature(0, feats, 1.0, np.asarray(x, dtype=np.float64))


def test_config_validation():
    anchor = _anchor_for(_model(), np.zeros(8))
    with pytest.raises(ValueError):
        AnomalyConfig({0: anchor}, tau=0.0)
    with pytest.raises(ValueError):
        AnomalyConfig({}, tau=1.0)
    with pytest.raises(ValueError):
        SqueezeConfig(0, 0.1)
    with pytest.raises(ValueError):
        SqueezeConfig(9, 0.1)
    with pytest.raises(ValueError):
        SqueezeConfig(3, -0.1)
    with pytest.raises(ValueError):
        DefenseReport(1.2, 0.5, 0.5, 0.5)


# -- squeezing -----------------------------------------------------------------


def test_squeeze_examples():
    # one bit leaves two levels, 0 and 255; 127/255 rounds down
    x = np.array([0.0, 255.0, 127.0, 128.0])
    assert np.array_equal(defenses.feature_squeeze(x, 1), [0.0, 255.0, 0.0, 255.0])
    # 3 bits: 8 levels spaced 255/7 apart
    assert defenses.feature_squeeze(np.array([36.0]), 3)[0] == pytest.approx(255 / 7)


def test_squeeze_preserves_endpoints_and_range():
    rng = np.random.default_rng(0)
    for depth in range(1, 9):
        x = rng.uniform(0, 255, size=200)
        out = defenses.feature_squeeze(x, depth)
        assert out.min() >= 0.0 and out.max() <= 255.0
        assert defenses.feature_squeeze(np.array([0.0]), depth)[0] == 0.0
        assert defenses.feature_squeeze(np.array([255.0]), depth)[0] == 255.0


def test_squeeze_level_counts():
    x = np.linspace(0, 255, 4096)
    for depth in (1, 2, 3, 8):
        out = defenses.feature_squeeze(x, depth)
        assert len(np.unique(out)) == 2 ** depth


def test_squeeze_bit_depth_one_is_binary():
    out = defenses.feature_squeeze(np.linspace(0, 255, 100), 1)
    assert set(np.unique(out)) == {0.0, 255.0}


def test_squeeze_eight_bits_close_to_identity():
    x = np.random.default_rng(1).uniform(0, 255, size=500)
    assert np.abs(defenses.feature_squeeze(x, 8) - x).max() <= 0.5


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_squeeze_idempotent(seed, depth):
    x = np.random.default_rng(seed).uniform(0, 255, size=20)
    once = defenses.feature_squeeze(x, depth)
    assert np.array_equal(defenses.feature_squeeze(once, depth), once)


def test_squeeze_distance_zero_on_fixed_points():
    params = _model()
    grid = defenses.feature_squeeze(
        np.random.default_rng(2).uniform(0, 255, size=(6, 8)), 4)
    assert np.allclose(defenses.squeeze_distance(params, grid, 4), 0.0)


def test_squeeze_detect_threshold_monotonicity():
    params = _model()
    x = np.random.default_rng(3).uniform(0, 255, size=8)
    d = defenses.squeeze_distance(params, x, 2)[0]
    assert defenses.squeeze_detect(params, x, SqueezeConfig(2, d * 0.5)) or d == 0.0
    assert not defenses.squeeze_detect(params, x, SqueezeConfig(2, d * 2 + 1e-9))


# -- anomaly detection ---------------------------------------------------------


def test_feature_distances_recount():
    params = _model()
    batch = np.random.default_rng(4).uniform(0, 255, size=(5, 8))
    anchor = _anchor_for(params, batch[0])
    dists = defenses._feature_distances(params, batch, anchor.feature)
    feats = models.forward_features(params, batch)
    for i in range(5):
        assert dists[i] == pytest.approx(np.mean((feats[i] - anchor.feature) ** 2))
    # BLAS may order the row-0 dot product differently for the 1-row call
    assert dists[0] == pytest.approx(0.0, abs=1e-18)


def test_anomaly_requires_batch():
    params = _model()
    cfg = AnomalyConfig({0: _anchor_for(params, np.zeros(8))}, tau=1.0)
    with pytest.raises(ValueError):
        defenses.feature_anomaly_detect(params, np.zeros(8), cfg)


def test_anomaly_identical_batch_not_flagged():
    params = _model()
    x = np.random.default_rng(5).uniform(0, 255, size=8)
    cfg = AnomalyConfig({0: _anchor_for(params, x)}, tau=1e-6)
    batch = np.tile(x, (4, 1))
    # zero far queries for the matching anchor, four for any distant anchor
    assert not defenses.feature_anomaly_detect(params, batch, cfg)


def test_anomaly_flags_exactly_one_far_query():
    params = _model()
    near = np.full(8, 10.0)
    far = np.full(8, 250.0)
    anchor = _anchor_for(params, near)
    feats = models.forward_features(params, np.stack([near, far]))
    gap = float(np.mean((feats[1] - feats[0]) ** 2))
    assert gap > 0.0
    cfg = AnomalyConfig({0: anchor}, tau=gap / 2)
    batch = np.stack([near, near, near, far])
    assert defenses.feature_anomaly_detect(params, batch, cfg)
    # two far queries break the signature
    two_far = np.stack([near, near, far, far])
    assert not defenses.feature_anomaly_detect(params, two_far, cfg)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_anomaly_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    params = _model()
    batch = rng.uniform(0, 255, size=(5, 8))
    cfg = AnomalyConfig({0: _anchor_for(params, batch[0]),
                         1: _anchor_for(params, rng.uniform(0, 255, size=8))},
                        tau=float(rng.uniform(0.01, 5.0)))
    base = defenses.feature_anomaly_detect(params, batch, cfg)
    for _ in range(3):
        perm = rng.permutation(5)
        assert defenses.feature_anomaly_detect(params, batch[perm], cfg) == base


# -- end-to-end evaluation ------------------------------------------------------


def _defense_world():
    params = _model()
    mapping = ClassMapping({0: 0, 1: 1, 2: 2}, negative_class=3)
    rng = np.random.default_rng(6)
    cloaks = CloakSet({h: rng.normal(size=8) for h in range(3)}, 0.5, "h")
    hijack = data.LabeledDataset("h", rng.uniform(0, 255, size=(12, 1, 2, 4)),
                                 np.repeat(np.arange(3), 4).astype(np.int64), 3)
    original = data.LabeledDataset("o", rng.uniform(0, 255, size=(15, 1, 2, 4)),
                                   rng.integers(0, 4, size=15), 4)
    return params, mapping, cloaks, hijack, original


def test_evaluate_flag_nothing_matches_undefended():
    params, mapping, cloaks, hijack, original = _defense_world()
    permissive = SqueezeConfig(8, 10.0)  # L1 of probas is at most 2
    report = defenses.evaluate_under_defense(params, permissive, hijack,
                                             original, cloaks, mapping)
    assert report.detection_rate == 0.0
    assert report.false_positive_rate == 0.0
    assert report.asr == attack.evaluate_asr(params, hijack, cloaks, mapping)
    assert report.utility == models.accuracy(params, original.flat(),
                                             original.labels)


def test_evaluate_flag_everything_kills_both_sides():
    params, mapping, cloaks, hijack, original = _defense_world()
    paranoid = SqueezeConfig(1, 0.0)
    report = defenses.evaluate_under_defense(params, paranoid, hijack,
                                             original, cloaks, mapping)
    assert report.detection_rate == 1.0
    assert report.asr == 0.0
    assert report.false_positive_rate == 1.0
    assert report.utility == 0.0


def test_evaluate_anomaly_recount():
    params, mapping, cloaks, hijack, original = _defense_world()
    anchors = {0: _anchor_for(params, np.full(8, 30.0)),
               3: _anchor_for(params, np.full(8, 220.0))}
    cfg = AnomalyConfig(anchors, tau=0.5)
    report = defenses.evaluate_under_defense(params, cfg, hijack, original,
                                             cloaks, mapping)
    sessions = defenses._query_batches(hijack.flat(), cloaks, mapping)
    flagged = np.array([defenses.feature_anomaly_detect(params, s, cfg)
                        for s in sessions])
    assert report.detection_rate == pytest.approx(flagged.mean())
    scores = attack.query_scores(params, hijack.flat(), cloaks, mapping)
    classes = np.array(mapping.hijack_classes)
    hit = (classes[scores.argmax(axis=1)] == hijack.labels) & ~flagged
    assert report.asr == pytest.approx(hit.mean())


def test_evaluate_rejects_unknown_defense():
    params, mapping, cloaks, hijack, original = _defense_world()
    with pytest.raises(TypeError):
        defenses.evaluate_under_defense(params, object(), hijack, original,
                                        cloaks, mapping)


def test_calibrate_anomaly_tau_separable_case():
    params, mapping, cloaks, hijack, original = _defense_world()
    anchors = {0: _anchor_for(params, np.full(8, 30.0))}
    sessions = defenses._query_batches(hijack.flat(), cloaks, mapping)
    benign = [original.flat()[i:i + 3] for i in range(0, 15, 3)]
    tau = defenses.calibrate_anomaly_tau(params, anchors, sessions, benign)
    cfg = AnomalyConfig(anchors, tau)
    fpr = np.mean([defenses.feature_anomaly_detect(params, b, cfg)
                   for b in benign])
    assert fpr <= 0.10


def test_calibrate_squeeze_thresholds_ordering():
    params, mapping, cloaks, hijack, original = _defense_world()
    low, high = defenses.calibrate_squeeze_thresholds(
        params, 3, np.concatenate(
            defenses._query_batches(hijack.flat(), cloaks, mapping)),
        original.flat())
    benign = defenses.squeeze_distance(params, original.flat(), 3)
    assert low == pytest.approx(np.quantile(benign, 0.5))
    assert high >= 0.0
