"""Cloak-based model hijacking: class mapping, anchor features, cloak
optimization, and query-time execution.

The adversary snapshots the global model at some round, greedily maps each
hijacking class to an original class (reserving the highest-index original
class as the negative class), synthesizes one anchor feature per mapped
class plus the negative class, then optimizes one pixel-space cloak per
hijacking class so that cloaked samples of that class land on the mapped
anchor while cloaked samples of every other class land on the negative
anchor. At query time the sample is cloaked once per class and the cloak
whose target class wins is decoded back through the inverse mapping.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .data import LabeledDataset
from .models import Parameters

CLOAKSET_MAGIC = b"HJLCLOK1"


@dataclass(frozen=True)
class AttackConfig:
    """Reference hyperparameters: alpha=0.5, lambda=1.2, anchors 500
    iterations at lr 0.005 to confidence 0.99, cloaks 100 iterations at
    lr 0.005. Desk-scale experiments override the two optimizer settings
    (see experiments.DESK_ATTACK); the MLP input scale needs larger steps.
    """

    alpha: float = 0.5
    lam: float = 1.2
    anchor_iters: int = 500
    anchor_lr: float = 0.005
    confidence_threshold: float = 0.99
    anchor_restarts: int = 5
    cloak_iters: int = 100
    cloak_lr: float = 0.005
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.lam < 0.0:
            raise ValueError("lambda must be non-negative")


class AnchorSearchError(RuntimeError):
    """Anchor optimization failed to reach the confidence threshold."""


@dataclass
class FrequencyMatrix:
    """counts[h][y]: class-h probes predicted as original class y, with the
    reserved negative-class column already excluded."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValueError("frequency matrix must be 2-d")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")


@dataclass
class ClassMapping:
    forward: dict          # hijacking class -> original class
    negative_class: int    # reserved original class y*

    def __post_init__(self):
        values = list(self.forward.values())
        if len(set(values)) != len(values):
            raise ValueError("class mapping must be injective")
        if self.negative_class in values:
            raise ValueError("negative class must not be a mapping target")

    @property
    def inverse(self) -> dict:
        return {y: h for h, y in self.forward.items()}

    @property
    def hijack_classes(self) -> list:
        return sorted(self.forward)


@dataclass
class AnchorFeature:
    target_class: int
    feature: np.ndarray
    confidence: float
    sample: np.ndarray = field(repr=False, default=None)


@dataclass
class CloakSet:
    """Per-hijacking-class raw cloak parameters (pre-sigmoid); the pixel
    cloak is 255 * sigmoid(raw)."""

    raw: dict              # hijacking class -> raw delta, flat float64
    alpha: float
    snapshot_hash: str
    hijack_round: int = -1

    def materialized(self, h: int) -> np.ndarray:
        return models.PIXEL_MAX * ad._sigmoid_values(self.raw[h])

    @property
    def classes(self) -> list:
        return sorted(self.raw)


# -- class mapping -----------------------------------------------------------


def build_frequency_matrix(params: Parameters, probes: LabeledDataset,
                           original_classes: int) -> FrequencyMatrix:
    """Predict every probe and count per (hijack class, original class);
    the last original class is reserved and its column dropped."""
    counts_per_class = np.bincount(probes.labels, minlength=probes.num_classes)
    if len(set(counts_per_class.tolist())) > 1:
        raise ValueError("probe set must have equal samples per hijacking class")
    preds = models.predict(params, probes.flat())
    counts = np.zeros((probes.num_classes, original_classes), dtype=np.int64)
    for h, y in zip(probes.labels, preds):
        counts[h, y] += 1
    return FrequencyMatrix(counts[:, :original_classes - 1])


def greedy_class_mapping(freq: FrequencyMatrix) -> ClassMapping:
    """Repeatedly assign the globally maximal remaining cell.

    Ties resolve to the lowest (hijack class, original class) pair in
    row-major order, which is what ``argmax`` over the masked matrix gives.
    """
    counts = freq.counts.astype(np.float64).copy()
    rows, cols = counts.shape
    if rows > cols:
        raise ValueError(f"{rows} hijacking classes exceed {cols} assignable original classes")
    forward = {}
    for _ in range(rows):
        h, y = np.unravel_index(np.argmax(counts), counts.shape)
        forward[int(h)] = int(y)
        counts[h, :] = -np.inf
        counts[:, y] = -np.inf
    return ClassMapping(forward, negative_class=cols)


def worked_example_matrix() -> FrequencyMatrix:
    """A 3x4 probe-count matrix whose greedy resolution order is
    1=>3 first (global max 80), then 0=>0 (70), then 2=>1 (60), giving
    the mapping [0=>0, 1=>3, 2=>1].

    Rows are hijacking classes 0..2; columns are original classes 0..3 of
    a 5-class original task whose negative-class column is already gone.
    """
    # With a 4-class original task, columns stop at 2 once y*=3 is dropped,
    # so an assignment to column 3 needs a 5-class task: columns 0..3,
    # negative class 4.
    counts = np.array([
        [70, 20, 5, 5],    # h=0 prefers y=0
        [10, 5, 5, 80],    # h=1 prefers y=3 (global max, picked first)
        [30, 60, 5, 5],    # h=2 prefers y=1
    ])
    return FrequencyMatrix(counts)


# -- anchor features -----------------------------------------------------------


def compute_anchor_feature(params: Parameters, target_class: int,
                           cfg: AttackConfig,
                           rng: np.random.Generator) -> AnchorFeature:
    """Optimize a Gaussian-noise input until the model assigns it the
    target class with probability >= the confidence threshold.

    The input is optimized unconstrained in pixel space and passes through
    the model's /255 normalization. Retries with fresh noise up to the
    restart budget.
    """
    spec = params.spec
    if not 0 <= target_class < spec.num_classes:
        raise ValueError(f"target class {target_class} out of range")
    ws, bs = models.as_tensors(params)
    target = np.array([target_class])
    for _ in range(cfg.anchor_restarts):
        r = ad.parameter(rng.normal(127.5, 40.0, size=(1, spec.input_dim)))
        state = ad.AdamState([r])
        for _ in range(cfg.anchor_iters):
            logits = models.logits_graph(ws, bs, r.scale(1.0 / models.PIXEL_MAX))
            proba = ad.softmax_values(logits.data)[0, target_class]
            if proba >= cfg.confidence_threshold:
                break
            loss = ad.softmax_cross_entropy(logits, target)
            ad.zero_grads([r])
            ad.backward(loss)
            ad.adam_step([r], state, cfg.anchor_lr)
        proba = float(models.predict_proba(params, r.data)[0, target_class])
        if proba >= cfg.confidence_threshold:
            feature = models.forward_features(params, r.data)[0]
            return AnchorFeature(target_class, feature, proba, r.data[0].copy())
    raise AnchorSearchError(
        f"no anchor for class {target_class} reached confidence "
        f"{cfg.confidence_threshold} within {cfg.anchor_restarts} restarts")


def compute_all_anchors(params: Parameters, mapping: ClassMapping,
                        cfg: AttackConfig) -> dict:
    """Anchors for every mapped original class plus the negative class."""
    targets = sorted(set(mapping.forward.values()) | {mapping.negative_class})
    anchors = {}
    for y in targets:
        rng = flrng(cfg.seed, "anchor", y)
        anchors[y] = compute_anchor_feature(params, y, cfg, rng)
    return anchors


def flrng(seed: int, *labels) -> np.random.Generator:
    from .flrun import derive_rng

    return derive_rng(seed, *labels)


# -- cloaks --------------------------------------------------------------------


def apply_cloak(x: np.ndarray, raw_cloak: np.ndarray, alpha: float) -> np.ndarray:
    """Convex blend alpha*x + (1-alpha)*255*sigmoid(raw); stays in [0,255]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != raw_cloak.shape[-1]:
        raise ad.ShapeError(f"cloak width {raw_cloak.shape} vs sample {x.shape}")
    return alpha * x + (1.0 - alpha) * models.PIXEL_MAX * ad._sigmoid_values(raw_cloak)


def _cloak_graph(x_batch: np.ndarray, raw: Tensor, alpha: float) -> Tensor:
    """apply_cloak inside the autodiff graph, normalized for the model."""
    pixel_cloak = ad.sigmoid(raw).scale(models.PIXEL_MAX * (1.0 - alpha))
    blended = ad.constant(alpha * x_batch) + _tile(pixel_cloak, len(x_batch))
    return blended.scale(1.0 / models.PIXEL_MAX)


def _tile(t: Tensor, n: int) -> Tensor:
    """Broadcast a (1, d) tensor to (n, d) with gradient summation."""
    out = Tensor(np.repeat(t.data, n, axis=0), _parents=(t,))

    def back(g):
        t._accumulate(g.sum(axis=0, keepdims=True))

    out._backward = back
    return out


@dataclass
class CloakTrace:
    hijack_class: int
    losses: list


def compute_cloaks(params: Parameters, hijack_train: LabeledDataset,
                   mapping: ClassMapping, anchors: dict, cfg: AttackConfig,
                   one_cloak: bool = False):
    """Optimize one cloak per hijacking class (or one shared cloak).

    Each iteration samples a batch from the class and an equal-size batch
    from all other classes, and minimizes

        Dist(features(cloaked positives), anchor[M(h)])
        + lambda * Dist(features(cloaked negatives), anchor[negative])

    with Adam on the raw (pre-sigmoid) cloak. Returns (CloakSet, traces).
    """
    for h in mapping.hijack_classes:
        if mapping.forward[h] not in anchors:
            raise ValueError(f"missing anchor for original class {mapping.forward[h]}")
    if mapping.negative_class not in anchors:
        raise ValueError("missing anchor for the negative class")
    x_flat = hijack_train.flat()
    labels = hijack_train.labels
    ws, bs = models.as_tensors(params)
    neg_anchor = anchors[mapping.negative_class].feature

    class_idx = {h: np.flatnonzero(labels == h) for h in mapping.hijack_classes}
    for h, idx in class_idx.items():
        if len(idx) == 0:
            raise ValueError(f"hijacking class {h} has no samples")
        if len(idx) == len(labels):
            raise ValueError("cloak optimization requires negative samples "
                             "from at least one other hijacking class")

    def optimize(classes, label):
        rng = flrng(cfg.seed, "cloak", label)
        raw = ad.parameter(rng.normal(0.0, 1.0, size=(1, hijack_train.input_dim)))
        state = ad.AdamState([raw])
        losses = []
        for _ in range(cfg.cloak_iters):
            loss = None
            for h in classes:
                pos_idx = rng.choice(class_idx[h], size=cfg.batch_size,
                                     replace=len(class_idx[h]) < cfg.batch_size)
                others = np.flatnonzero(labels != h)
                neg_idx = rng.choice(others, size=cfg.batch_size,
                                     replace=len(others) < cfg.batch_size)
                pos_anchor = anchors[mapping.forward[h]].feature
                f_pos = models.features_graph(ws, bs, _cloak_graph(x_flat[pos_idx], raw, cfg.alpha))
                f_neg = models.features_graph(ws, bs, _cloak_graph(x_flat[neg_idx], raw, cfg.alpha))
                term = (ad.l2_distance(f_pos, ad.constant(np.tile(pos_anchor, (cfg.batch_size, 1))))
                        + ad.l2_distance(f_neg, ad.constant(np.tile(neg_anchor, (cfg.batch_size, 1)))).scale(cfg.lam))
                loss = term if loss is None else loss + term
            losses.append(float(loss.data))
            ad.zero_grads([raw])
            ad.backward(loss)
            ad.adam_step([raw], state, cfg.cloak_lr)
        return raw.data[0].copy(), losses

    raw_cloaks, traces = {}, []
    if one_cloak:
        shared, losses = optimize(mapping.hijack_classes, "shared")
        for h in mapping.hijack_classes:
            raw_cloaks[h] = shared
        traces.append(CloakTrace(-1, losses))
    else:
        for h in mapping.hijack_classes:
            raw_cloaks[h], losses = optimize([h], h)
            traces.append(CloakTrace(h, losses))
    cloaks = CloakSet(raw_cloaks, cfg.alpha, models.params_hash(params))
    return cloaks, traces


# -- execution ------------------------------------------------------------------


def query_scores(params: Parameters, x_flat: np.ndarray, cloaks: CloakSet,
                 mapping: ClassMapping) -> np.ndarray:
    """scores[i, k]: probability of M(h_k) for sample i under cloak h_k,
    columns ordered by ascending hijacking class."""
    classes = mapping.hijack_classes
    scores = np.empty((len(x_flat), len(classes)))
    for k, h in enumerate(classes):
        cloaked = apply_cloak(x_flat, cloaks.raw[h], cloaks.alpha)
        proba = models.predict_proba(params, cloaked)
        scores[:, k] = proba[:, mapping.forward[h]]
    return scores


def execute_query(params: Parameters, x: np.ndarray, cloaks: CloakSet,
                  mapping: ClassMapping) -> int:
    """Cloak the sample once per class, pick the cloak whose own target
    class scores highest; ties go to the lowest hijacking class."""
    scores = query_scores(params, np.atleast_2d(x), cloaks, mapping)[0]
    return mapping.hijack_classes[int(np.argmax(scores))]


def evaluate_asr(params: Parameters, hijack_test: LabeledDataset,
                 cloaks: CloakSet, mapping: ClassMapping) -> float:
    """Fraction of hijack test samples decoded to their true class."""
    scores = query_scores(params, hijack_test.flat(), cloaks, mapping)
    classes = np.array(mapping.hijack_classes)
    preds = classes[scores.argmax(axis=1)]
    return float(np.mean(preds == hijack_test.labels))


# -- cloak-set file format -------------------------------------------------------
# Layout: magic | format version u32 | JSON header length u32 | JSON header
# (alpha, snapshot hash, hijack round, mapping, class list, width) | per
# class raw float64 values, ascending class order, little-endian.


def save_cloakset(cloaks: CloakSet, mapping: ClassMapping, path) -> None:
    classes = cloaks.classes
    header = {
        "alpha": cloaks.alpha,
        "snapshot_hash": cloaks.snapshot_hash,
        "hijack_round": cloaks.hijack_round,
        "mapping": {str(h): mapping.forward[h] for h in mapping.forward},
        "negative_class": mapping.negative_class,
        "classes": classes,
        "width": int(cloaks.raw[classes[0]].shape[0]),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CLOAKSET_MAGIC)
        f.write(struct.pack("<II", 1, len(blob)))
        f.write(blob)
        for h in classes:
            f.write(np.ascontiguousarray(cloaks.raw[h], dtype="<f8").tobytes())


def load_cloakset(path):
    with open(path, "rb") as f:
        if f.read(8) != CLOAKSET_MAGIC:
            raise ValueError("not a cloak-set file")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != 1:
            raise ValueError(f"unsupported cloak-set version {version}")
        header = json.loads(f.read(blob_len).decode("utf-8"))
        raw = {}
        for h in header["classes"]:
            raw[h] = np.frombuffer(f.read(8 * header["width"]), dtype="<f8").astype(np.float64)
    mapping = ClassMapping({int(k): v for k, v in header["mapping"].items()},
                           header["negative_class"])
    cloaks = CloakSet(raw, header["alpha"], header["snapshot_hash"], header["hijack_round"])
    return cloaks, mapping
