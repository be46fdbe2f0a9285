"""Data-poisoning and model-replacement hijacking baselines.

Both baselines inject the hijacking effect into the global parameters at a
single round. The data-poison adversary trains its local model on a mix of
its original share and relabeled hijacking samples; the model-poison
adversary additionally scales its update by gamma = n / eta so the
submitted model survives averaging and replaces the global model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flrun, models
from .data import LabeledDataset
from .flrun import FLConfig, TrainingHooks, TrainingResult
from .models import Parameters


@dataclass(frozen=True)
class PoisonPlan:
    """Injective relabeling of hijacking classes onto original classes."""

    relabel: dict  # hijack class -> original class

    def __post_init__(self):
        targets = list(self.relabel.values())
        if len(set(targets)) != len(targets):
            raise ValueError("relabel mapping must be injective")

    @property
    def inverse(self) -> dict:
        return {y: h for h, y in self.relabel.items()}


@dataclass(frozen=True)
class ReplacementConfig:
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def surviving_average(cls, cfg: FLConfig) -> "ReplacementConfig":
        """gamma = n / eta, the scale at which the replacement survives."""
        return cls(cfg.n / cfg.eta)


def build_poisoned_dataset(local: LabeledDataset, hijack: LabeledDataset,
                           plan: PoisonPlan, seed: int) -> LabeledDataset:
    """Union of the local original data and relabeled hijack samples,
    shuffled deterministically."""
    for h, y in plan.relabel.items():
        if not 0 <= y < local.num_classes:
            raise ValueError(f"relabel target {y} out of range for {local.num_classes} classes")
    if len(hijack) == 0:
        return local
    unknown = set(np.unique(hijack.labels)) - set(plan.relabel)
    if unknown:
        raise ValueError(f"hijack classes without relabel target: {sorted(unknown)}")
    new_labels = np.array([plan.relabel[int(h)] for h in hijack.labels], dtype=np.int64)
    samples = np.concatenate([local.samples, hijack.samples])
    labels = np.concatenate([local.labels, new_labels])
    order = np.random.default_rng(seed).permutation(len(labels))
    return LabeledDataset(f"{local.name}+poison", samples[order], labels[order],
                          local.num_classes)


def model_poison_update(global_params: Parameters, malicious: Parameters,
                        gamma: float) -> Parameters:
    """The submitted delta gamma * (X - G), so the effective local model is
    gamma * (X - G) + G."""
    d = models.delta(malicious, global_params)
    return Parameters(d.spec, [gamma * w for w in d.weights], [gamma * b for b in d.biases])


_scaled_delta = model_poison_update


def direct_asr(params: Parameters, hijack_test: LabeledDataset, plan: PoisonPlan) -> float:
    """Baseline attack success: classify uncloaked hijack samples and decode
    through the inverse relabel plan."""
    preds = models.predict(params, hijack_test.flat())
    inverse = plan.inverse
    decoded = np.array([inverse.get(int(y), -1) for y in preds])
    return float(np.mean(decoded == hijack_test.labels))


def run_baseline_attack(kind: str, cfg: FLConfig, partition, train: LabeledDataset,
                        test: LabeledDataset, init_params: Parameters,
                        hijack_train: LabeledDataset, hijack_round: int,
                        plan: PoisonPlan,
                        replacement: ReplacementConfig | None = None,
                        adversary_client: int = 0) -> TrainingResult:
    """Run FL with a single malicious round.

    ``kind`` is "data_poison" or "model_poison". The adversary trains on its
    poisoned local dataset at the hijack round and (for model poisoning)
    scales the resulting update by gamma before submission.
    """
    if kind not in ("data_poison", "model_poison"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    if kind == "model_poison" and replacement is None:
        replacement = ReplacementConfig.surviving_average(cfg)
    local_idx = partition.assignment[adversary_client]
    local = train.subset(local_idx, "adversary-local")

    def build_update(global_params: Parameters, client_id: int) -> Parameters:
        poisoned = build_poisoned_dataset(local, hijack_train, plan,
                                          seed=cfg.master_seed + 7919)
        rng = flrun.derive_rng(cfg.master_seed, "poison", hijack_round, client_id)
        malicious = flrun.local_train(global_params, poisoned.flat(),
                                      poisoned.labels, cfg, rng)
        if kind == "model_poison":
            return _scaled_delta(global_params, malicious, replacement.gamma)
        return models.delta(malicious, global_params)

    hooks = TrainingHooks(override_round=hijack_round,
                          override_client=adversary_client,
                          build_update=build_update)
    return flrun.run_training(cfg, partition, train, test, init_params, hooks)
