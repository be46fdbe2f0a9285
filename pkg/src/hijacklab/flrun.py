"""Deterministic FedSGD simulation with adversarial hooks.

The server holds a global model; each round it samples m of n clients,
every selected client runs local SGD from the current global parameters,
and the server applies

    G' = G + (eta / n) * sum_i (F_i - G)

with the client deltas summed in ascending client-id order so the
floating-point result is reproducible. All randomness derives from one
master seed through named streams (see ``derive_rng``), which keeps a run
bitwise reproducible even when an adversary performs extra offline
computation on a snapshot.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import models
from .data import ClientPartition, LabeledDataset
from .models import Parameters


@dataclass(frozen=True)
class FLConfig:
    """Desk-scale defaults; eta/n == 1/m (plain averaging) like the
    reference setting n=50, m=5, eta=10, rounds=200, which remains
    expressible by overriding the fields."""

    n: int = 20
    m: int = 4
    rounds: int = 60
    eta: float = 5.0
    local_lr: float = 0.1
    local_epochs: int = 2
    batch_size: int = 32
    master_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


# the reference full-scale federation shape; desk defaults shrink it 10x
REFERENCE_FL = FLConfig(n=50, m=5, rounds=200, eta=10.0,
                        local_lr=0.1, local_epochs=2)


@dataclass
class ClientUpdate:
    client_id: int
    delta: Parameters


@dataclass
class RoundLog:
    round: int
    selected: list
    utility: float
    duration_ms: float


@dataclass
class TrainingHooks:
    """Adversarial instrumentation for ``run_training``.

    ``snapshot_rounds``: rounds whose pre-training global parameters are
    copied into the result (read-only; never perturbs the run).
    ``override_round`` / ``build_update``: at that round, replace one
    selected client's update with ``build_update(global, client_id) ->
    delta Parameters``. ``override_client`` picks the victim slot; None
    means the first selected client.
    """

    snapshot_rounds: tuple = ()
    override_round: Optional[int] = None
    override_client: Optional[int] = None
    build_update: Optional[Callable[[Parameters, int], Parameters]] = None


@dataclass
class TrainingResult:
    final_params: Parameters
    logs: list
    snapshots: dict = field(default_factory=dict)


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Named, independent RNG stream keyed by (master_seed, labels)."""
    key = "/".join([str(master_seed), *map(str, labels)])
    digest = hashlib.sha256(key.encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def select_clients(master_seed: int, round_no: int, n: int, m: int) -> list:
    """m distinct client ids, uniform without replacement."""
    if m > n:
        raise ValueError("m > n")
    rng = derive_rng(master_seed, "select", round_no)
    return [int(c) for c in rng.choice(n, size=m, replace=False)]


def local_train(global_params: Parameters, x_flat: np.ndarray, y: np.ndarray,
                cfg: FLConfig, rng: np.random.Generator) -> Parameters:
    """Mini-batch SGD on softmax cross-entropy from a copy of the global."""
    if len(x_flat) == 0:
        raise ValueError("client has no local data")
    ws, bs = models.as_tensors(global_params, requires_grad=True)
    tensors = ws + bs
    n = len(x_flat)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = ad.constant(x_flat[idx] / models.PIXEL_MAX)
            logits = models.logits_graph(ws, bs, xb)
            loss = ad.softmax_cross_entropy(logits, y[idx])
            ad.zero_grads(tensors)
            ad.backward(loss)
            ad.sgd_step(tensors, cfg.local_lr)
    return Parameters(global_params.spec, [w.data for w in ws], [b.data for b in bs])


def aggregate(global_params: Parameters, updates: list, eta: float, n: int) -> Parameters:
    """Apply the FedSGD rule; deltas summed in ascending client-id order."""
    if not updates:
        return global_params.copy()
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = ordered[0].delta
    for u in ordered[1:]:
        total = models.add_scaled(total, u.delta, 1.0)
    return models.add_scaled(global_params, total, eta / n)


def run_training(cfg: FLConfig, partition: ClientPartition, train: LabeledDataset,
                 test: LabeledDataset, init_params: Parameters,
                 hooks: Optional[TrainingHooks] = None) -> TrainingResult:
    """Execute the full FedSGD schedule; rounds are numbered from 0."""
    hooks = hooks or TrainingHooks()
    if hooks.override_client is not None and not 0 <= hooks.override_client < cfg.n:
        raise ValueError(f"hook references unknown client {hooks.override_client}")
    if partition.n != cfg.n:
        raise ValueError("partition client count differs from FLConfig.n")
    client_x = [train.flat()[idx] for idx in partition.assignment]
    client_y = [train.labels[idx] for idx in partition.assignment]
    test_x, test_y = test.flat(), test.labels

    params = init_params.copy()
    logs, snapshots = [], {}
    for rnd in range(cfg.rounds):
        started = time.perf_counter()
        if rnd in hooks.snapshot_rounds:
            snapshots[rnd] = params.copy()
        selected = select_clients(cfg.master_seed, rnd, cfg.n, cfg.m)
        updates = []
        for cid in selected:
            rng = derive_rng(cfg.master_seed, "client", rnd, cid)
            local = local_train(params, client_x[cid], client_y[cid], cfg, rng)
            updates.append(ClientUpdate(cid, models.delta(local, params)))
        if hooks.override_round == rnd and hooks.build_update is not None:
            victim = hooks.override_client
            slot = 0
            if victim is not None and victim in selected:
                slot = selected.index(victim)
            cid = updates[slot].client_id
            updates[slot] = ClientUpdate(cid, hooks.build_update(params, cid))
        params = aggregate(params, updates, cfg.eta, cfg.n)
        params.version = rnd + 1
        utility = models.accuracy(params, test_x, test_y)
        logs.append(RoundLog(rnd, selected, utility,
                             (time.perf_counter() - started) * 1000.0))
    return TrainingResult(params, logs, snapshots)


def round_logs_csv(logs: list) -> str:
    """One CSV row per round: round, selected ids (semicolon-joined),
    utility, duration_ms."""
    lines = ["round,selected_ids,utility,duration_ms"]
    for log in logs:
        ids = ";".join(str(c) for c in log.selected)
        lines.append(f"{log.round},{ids},{log.utility:.6f},{log.duration_ms:.3f}")
    return "\n".join(lines) + "\n"
