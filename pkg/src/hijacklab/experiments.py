"""Config-driven experiment scenarios with reproducible artifacts.

Every scenario is a pure function of its configuration: metrics land in a
CSV whose bytes are reproducible, wall-clock information goes to a separate
manifest, and models, cloaks, and feature projections are written next to
the metrics. The default desk-scale task pair is an original task with ten
classes (the last one a broad background class) and a nine-class hijacking
task built from single-channel patterns replicated to three channels.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import attack, baselines, data, defenses, flrun, models
from .attack import AttackConfig, ClassMapping, CloakSet
from .data import LabeledDataset
from .flrun import FLConfig, TrainingHooks
from .models import ModelSpec, Parameters

# Attack optimizer settings for the desk-scale MLP. The reference values in
# AttackConfig assume a much larger model; the small dense network needs
# bigger steps and longer schedules, and a slightly sample-heavy blend
# (alpha 0.65) scores best on the default task pair.
DESK_ATTACK = AttackConfig(alpha=0.65, lam=1.2,
                           anchor_iters=2000, anchor_lr=1.0,
                           confidence_threshold=0.99, anchor_restarts=5,
                           cloak_iters=800, cloak_lr=0.05,
                           batch_size=32, seed=7)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class TaskSpec:
    """The seeded desk-scale task pair."""

    original_classes: int = 10
    original_samples_per_class: int = 400
    original_shape: tuple = (3, 16, 16)
    original_separation: float = 0.5
    original_noise_sigma: float = 18.0
    original_background_sigma: float = 90.0
    original_seed: int = 101
    original_test_fraction: float = 0.2
    original_split_seed: int = 202
    hijack_classes: int = 9
    hijack_samples_per_class: int = 80
    hijack_separation: float = 1.4
    hijack_noise_sigma: float = 18.0
    hijack_seed: int = 505
    hijack_test_fraction: float = 0.25
    hijack_split_seed: int = 606
    partition_seed: int = 303
    hidden_widths: tuple = (256, 128)
    model_seed: int = 404

    def __post_init__(self):
        data.check_hijack_class_budget(self.hijack_classes, self.original_classes)


SCENARIOS = ("clean", "hijackfl", "data_poison", "model_poison",
             "attack_comparison", "fluctuation", "mapping_comparison",
             "hijack_round_sweep", "alpha_sweep", "one_cloak",
             "complexity_grid", "defenses")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    fl: FLConfig = FLConfig()
    attack: AttackConfig = DESK_ATTACK
    task: TaskSpec = TaskSpec()
    hijack_round: int = 45
    seeds: tuple = (0,)
    alpha_grid: tuple = (0.0, 0.25, 0.5, 0.65, 0.8, 1.0)
    hijack_round_grid: tuple = (6, 24, 45)
    class_count_grid: tuple = (3, 6, 9)
    samples_per_class_grid: tuple = (20, 40, 80)
    output_dir: str = "out"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; "
                              f"choose one of {', '.join(SCENARIOS)}")
        if not 0 <= self.hijack_round < self.fl.rounds:
            raise ConfigError(f"hijack_round {self.hijack_round} must be in "
                              f"[0, rounds={self.fl.rounds})")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        grids = {"alpha_sweep": self.alpha_grid,
                 "hijack_round_sweep": self.hijack_round_grid,
                 "complexity_grid": self.class_count_grid and self.samples_per_class_grid}
        if self.scenario in grids and not grids[self.scenario]:
            raise ConfigError(f"scenario {self.scenario} needs a non-empty grid")
        if self.scenario == "hijack_round_sweep":
            bad = [r for r in self.hijack_round_grid if not 0 <= r < self.fl.rounds]
            if bad:
                raise ConfigError(f"hijack_round_grid entries {bad} outside "
                                  f"[0, rounds={self.fl.rounds})")


_SECTION_TYPES = {"fl": FLConfig, "attack": AttackConfig, "task": TaskSpec}
_TUPLE_FIELDS = {"seeds", "alpha_grid", "hijack_round_grid", "class_count_grid",
                 "samples_per_class_grid", "original_shape", "hidden_widths"}


def _build_section(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': "
                          f"{', '.join(sorted(unknown))}")
    coerced = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
               for k, v in raw.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section '{section}': {e}") from e


def parse_config_dict(raw: dict) -> ExperimentConfig:
    if "scenario" not in raw:
        raise ConfigError("missing required key 'scenario'")
    top_known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be a mapping")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        elif key in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON experiment config; unknown keys rejected."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, "
                          f"column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


# -- task construction ---------------------------------------------------------


def build_original(task: TaskSpec):
    dataset = data.synthesize_task(
        task.original_classes, task.original_samples_per_class,
        shape=task.original_shape, separation=task.original_separation,
        noise_sigma=task.original_noise_sigma,
        background_sigma=task.original_background_sigma,
        seed=task.original_seed, name="original")
    return data.train_test_split(dataset, task.original_test_fraction,
                                 task.original_split_seed)


def build_hijack(task: TaskSpec, num_classes=None, samples_per_class=None):
    num_classes = task.hijack_classes if num_classes is None else num_classes
    spc = task.hijack_samples_per_class if samples_per_class is None else samples_per_class
    data.check_hijack_class_budget(num_classes, task.original_classes)
    gray_shape = (1,) + tuple(task.original_shape[1:])
    gray = data.synthesize_task(num_classes, spc, shape=gray_shape,
                                separation=task.hijack_separation,
                                noise_sigma=task.hijack_noise_sigma,
                                seed=task.hijack_seed, name="hijack")
    return data.train_test_split(data.replicate_channels(gray),
                                 task.hijack_test_fraction,
                                 task.hijack_split_seed)


@dataclass
class PipelineRun:
    """A clean training run plus everything the adversary derives from it."""

    train: LabeledDataset
    test: LabeledDataset
    hijack_train: LabeledDataset
    hijack_test: LabeledDataset
    partition: data.ClientPartition
    init_params: Parameters
    result: flrun.TrainingResult
    snapshot: Parameters
    mapping: ClassMapping


def run_clean_pipeline(cfg: ExperimentConfig, seed: int,
                       snapshot_rounds=None) -> PipelineRun:
    """Train the clean global model and derive the adversary's mapping."""
    train, test = build_original(cfg.task)
    hijack_train, hijack_test = build_hijack(cfg.task)
    fl = replace(cfg.fl, master_seed=seed)
    partition = data.partition_iid(train, fl.n, seed=cfg.task.partition_seed)
    spec = ModelSpec(train.input_dim, tuple(cfg.task.hidden_widths),
                     cfg.task.original_classes)
    init_params = models.init_model(spec, seed=cfg.task.model_seed)
    rounds = tuple(snapshot_rounds) if snapshot_rounds else (cfg.hijack_round,)
    result = flrun.run_training(fl, partition, train, test, init_params,
                                TrainingHooks(snapshot_rounds=rounds))
    snapshot = result.snapshots[cfg.hijack_round]
    mapping = attack.greedy_class_mapping(
        attack.build_frequency_matrix(snapshot, hijack_train,
                                      cfg.task.original_classes))
    return PipelineRun(train, test, hijack_train, hijack_test, partition,
                       init_params, result, snapshot, mapping)


def compute_attack(run: PipelineRun, acfg: AttackConfig, one_cloak=False):
    anchors = attack.compute_all_anchors(run.snapshot, run.mapping, acfg)
    cloaks, traces = attack.compute_cloaks(run.snapshot, run.hijack_train,
                                           run.mapping, anchors, acfg,
                                           one_cloak=one_cloak)
    return anchors, cloaks, traces


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricsRecord:
    scenario: str
    method: str
    seed: int
    round: str
    utility: float
    asr: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.utility <= 1.0 or not 0.0 <= self.asr <= 1.0:
            raise ValueError("utility and asr must lie in [0, 1]")


def records_csv(records: list) -> str:
    """Stable-schema CSV: base columns plus the union of extra keys."""
    extra_keys = sorted({k for r in records for k in r.extra})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "method", "seed", "round", "utility", "asr",
                     *extra_keys])
    for r in records:
        writer.writerow([r.scenario, r.method, r.seed, r.round,
                         f"{r.utility:.6f}", f"{r.asr:.6f}",
                         *[r.extra.get(k, "") for k in extra_keys]])
    return buf.getvalue()


# -- feature export -------------------------------------------------------------


def export_features(params: Parameters, groups: dict) -> list:
    """Project each group's feature vectors onto the top two principal
    components of the pooled features.

    Returns rows (group, x, y). The sign of each component is fixed so its
    largest-magnitude loading is positive, making the projection
    deterministic up to exact ties.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups to export")
    names, blocks = [], []
    for name, samples in groups.items():
        feats = models.forward_features(params, np.atleast_2d(samples))
        names.extend([name] * len(feats))
        blocks.append(feats)
    pooled = np.concatenate(blocks)
    if len(pooled) < 2:
        raise ValueError("need at least 2 samples total")
    centered = pooled - pooled.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    for i in range(2):
        if components[i][np.argmax(np.abs(components[i]))] < 0:
            components[i] = -components[i]
    projected = centered @ components.T
    return [(name, float(x), float(y))
            for name, (x, y) in zip(names, projected)]


def features_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "x", "y"])
    for name, x, y in rows:
        writer.writerow([name, f"{x:.6f}", f"{y:.6f}"])
    return buf.getvalue()


# -- scenarios -------------------------------------------------------------------


def _baseline_record(cfg, seed, run, kind, method) -> MetricsRecord:
    plan = baselines.PoisonPlan(dict(run.mapping.forward))
    fl = replace(cfg.fl, master_seed=seed)
    result = baselines.run_baseline_attack(
        kind, fl, run.partition, run.train, run.test, run.init_params,
        run.hijack_train, cfg.hijack_round, plan)
    asr = baselines.direct_asr(result.final_params, run.hijack_test, plan)
    return MetricsRecord(cfg.scenario, method, seed, "final",
                         result.logs[-1].utility, asr,
                         {"hijack_round": cfg.hijack_round}), result


def _scenario_clean(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        for log in run.result.logs:
            records.append(MetricsRecord(cfg.scenario, "clean", seed,
                                         str(log.round), log.utility, 0.0))
        records.append(MetricsRecord(cfg.scenario, "clean", seed, "final",
                                     run.result.logs[-1].utility, 0.0))
        models.save_checkpoint(run.result.final_params,
                               out / f"clean_seed{seed}.ckpt")
    return records


def _scenario_hijackfl(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        _, cloaks, _ = compute_attack(run, cfg.attack)
        cloaks.hijack_round = cfg.hijack_round
        asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                  cloaks, run.mapping)
        records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                     run.result.logs[-1].utility, asr,
                                     {"hijack_round": cfg.hijack_round,
                                      "alpha": cfg.attack.alpha}))
        models.save_checkpoint(run.result.final_params,
                               out / f"hijackfl_seed{seed}.ckpt")
        attack.save_cloakset(cloaks, run.mapping,
                             out / f"cloaks_seed{seed}.cloak")
        groups = {"original": run.test.flat()[:90],
                  "hijack": run.hijack_test.flat()[:90],
                  "cloaked": attack.apply_cloak(
                      run.hijack_test.flat()[:90],
                      cloaks.raw[run.mapping.hijack_classes[0]], cloaks.alpha)}
        (out / f"features_seed{seed}.csv").write_text(
            features_csv(export_features(run.result.final_params, groups)))
    return records


def _scenario_baseline(cfg, out, kind, method):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        record, result = _baseline_record(cfg, seed, run, kind, method)
        records.append(record)
        models.save_checkpoint(result.final_params,
                               out / f"{method}_seed{seed}.ckpt")
    return records


def _scenario_attack_comparison(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        clean_utility = run.result.logs[-1].utility
        records.append(MetricsRecord(cfg.scenario, "clean", seed, "final",
                                     clean_utility, 0.0, {"hijack_round": ""}))
        _, cloaks, _ = compute_attack(run, cfg.attack)
        asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                  cloaks, run.mapping)
        records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                     clean_utility, asr,
                                     {"hijack_round": cfg.hijack_round}))
        for kind, method in (("data_poison", "data_poison_naive"),
                             ("model_poison", "model_poison_naive")):
            record, _ = _baseline_record(cfg, seed, run, kind, method)
            records.append(record)
    return records


def _scenario_fluctuation(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        plan = baselines.PoisonPlan(dict(run.mapping.forward))
        fl = replace(cfg.fl, master_seed=seed)
        poisoned = baselines.run_baseline_attack(
            "model_poison", fl, run.partition, run.train, run.test,
            run.init_params, run.hijack_train, cfg.hijack_round, plan)
        for clean_log, poison_log in zip(run.result.logs, poisoned.logs):
            records.append(MetricsRecord(
                cfg.scenario, "clean", seed, str(clean_log.round),
                clean_log.utility, 0.0, {"hijack_round": cfg.hijack_round}))
            records.append(MetricsRecord(
                cfg.scenario, "model_poison_naive", seed, str(poison_log.round),
                poison_log.utility, 0.0, {"hijack_round": cfg.hijack_round}))
    return records


def _scenario_mapping_comparison(cfg, out):
    """Frequency-greedy mapping versus the naive identity assignment."""
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        direct = ClassMapping({h: h for h in range(cfg.task.hijack_classes)},
                              negative_class=cfg.task.original_classes - 1)
        for name, mapping in (("greedy", run.mapping), ("direct", direct)):
            anchors = attack.compute_all_anchors(run.snapshot, mapping, cfg.attack)
            cloaks, _ = attack.compute_cloaks(run.snapshot, run.hijack_train,
                                              mapping, anchors, cfg.attack)
            asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                      cloaks, mapping)
            records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                         run.result.logs[-1].utility, asr,
                                         {"mapping": name}))
    return records


def _scenario_hijack_round_sweep(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed,
                                 snapshot_rounds=cfg.hijack_round_grid)
        for rnd in cfg.hijack_round_grid:
            snapshot = run.result.snapshots[rnd]
            mapping = attack.greedy_class_mapping(attack.build_frequency_matrix(
                snapshot, run.hijack_train, cfg.task.original_classes))
            sub = PipelineRun(run.train, run.test, run.hijack_train,
                              run.hijack_test, run.partition, run.init_params,
                              run.result, snapshot, mapping)
            _, cloaks, _ = compute_attack(sub, cfg.attack)
            asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                      cloaks, mapping)
            records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                         run.result.logs[-1].utility, asr,
                                         {"hijack_round": rnd}))
    return records


def _scenario_alpha_sweep(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        for alpha in cfg.alpha_grid:
            acfg = replace(cfg.attack, alpha=alpha)
            _, cloaks, _ = compute_attack(run, acfg)
            asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                      cloaks, run.mapping)
            records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                         run.result.logs[-1].utility, asr,
                                         {"alpha": alpha}))
    return records


def _scenario_one_cloak(cfg, out):
    records = []
    for seed in cfg.seeds:
        run = run_clean_pipeline(cfg, seed)
        for name, one in (("multi", False), ("one", True)):
            _, cloaks, _ = compute_attack(run, cfg.attack, one_cloak=one)
            asr = attack.evaluate_asr(run.result.final_params, run.hijack_test,
                                      cloaks, run.mapping)
            records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                         run.result.logs[-1].utility, asr,
                                         {"cloaks": name}))
    return records


def _scenario_complexity_grid(cfg, out):
    records = []
    for seed in cfg.seeds:
        base_run = run_clean_pipeline(cfg, seed)
        for classes in cfg.class_count_grid:
            for spc in cfg.samples_per_class_grid:
                hijack_train, hijack_test = build_hijack(cfg.task, classes, spc)
                mapping = attack.greedy_class_mapping(attack.build_frequency_matrix(
                    base_run.snapshot, hijack_train, cfg.task.original_classes))
                run = PipelineRun(base_run.train, base_run.test, hijack_train,
                                  hijack_test, base_run.partition,
                                  base_run.init_params, base_run.result,
                                  base_run.snapshot, mapping)
                _, cloaks, _ = compute_attack(run, cfg.attack)
                asr = attack.evaluate_asr(base_run.result.final_params,
                                          hijack_test, cloaks, mapping)
                records.append(MetricsRecord(
                    cfg.scenario, "hijackfl", seed, "final",
                    base_run.result.logs[-1].utility, asr,
                    {"hijack_classes": classes, "samples_per_class": spc}))
    return records


def calibrate_defenses(cfg: ExperimentConfig, seed: int):
    """Fit both defenses on calibration splits: defender anchors on the
    deployed model, tau on held-out cloaked/benign batches, squeeze
    thresholds on benign and cloaked distances. Returns everything the
    defenses scenario needs."""
    run = run_clean_pipeline(cfg, seed)
    _, cloaks, _ = compute_attack(run, cfg.attack)
    final = run.result.final_params
    defender_seed = 1234
    dcfg = replace(cfg.attack, seed=defender_seed)
    anchors = {}
    for y in range(cfg.task.original_classes):
        anchors[y] = attack.compute_anchor_feature(
            final, y, dcfg, flrun.derive_rng(defender_seed, "defanchor", y))
    size = len(run.mapping.hijack_classes)
    sessions = defenses._query_batches(run.hijack_train.flat()[:120],
                                       cloaks, run.mapping)
    train_flat = run.train.flat()
    benign_batches = [train_flat[i * size:(i + 1) * size] for i in range(60)]
    tau = defenses.calibrate_anomaly_tau(final, anchors, sessions, benign_batches)
    bit_depth = 3
    low, high = defenses.calibrate_squeeze_thresholds(
        final, bit_depth, np.concatenate(sessions[:40]), train_flat[:400])
    return run, cloaks, defenses.AnomalyConfig(anchors, tau), bit_depth, low, high


def _scenario_defenses(cfg, out):
    records = []
    for seed in cfg.seeds:
        run, cloaks, anomaly, bit_depth, low, high = calibrate_defenses(cfg, seed)
        final = run.result.final_params
        undefended = attack.evaluate_asr(final, run.hijack_test, cloaks, run.mapping)
        records.append(MetricsRecord(cfg.scenario, "hijackfl", seed, "final",
                                     run.result.logs[-1].utility, undefended,
                                     {"defense": "none", "threshold": ""}))
        cases = [("feature_anomaly", anomaly, anomaly.tau),
                 ("squeeze_low", defenses.SqueezeConfig(bit_depth, low), low),
                 ("squeeze_high", defenses.SqueezeConfig(bit_depth, high), high)]
        for name, defense, threshold in cases:
            report = defenses.evaluate_under_defense(
                final, defense, run.hijack_test, run.test, cloaks, run.mapping)
            records.append(MetricsRecord(
                cfg.scenario, "hijackfl", seed, "final",
                report.utility, report.asr,
                {"defense": name, "threshold": f"{threshold:.6f}",
                 "detection_rate": f"{report.detection_rate:.6f}",
                 "fpr": f"{report.false_positive_rate:.6f}"}))
    return records


_SCENARIO_RUNNERS = {
    "clean": _scenario_clean,
    "hijackfl": _scenario_hijackfl,
    "data_poison": lambda cfg, out: _scenario_baseline(
        cfg, out, "data_poison", "data_poison_naive"),
    "model_poison": lambda cfg, out: _scenario_baseline(
        cfg, out, "model_poison", "model_poison_naive"),
    "attack_comparison": _scenario_attack_comparison,
    "fluctuation": _scenario_fluctuation,
    "mapping_comparison": _scenario_mapping_comparison,
    "hijack_round_sweep": _scenario_hijack_round_sweep,
    "alpha_sweep": _scenario_alpha_sweep,
    "one_cloak": _scenario_one_cloak,
    "complexity_grid": _scenario_complexity_grid,
    "defenses": _scenario_defenses,
}


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get("HIJACKLAB_OUTPUT_DIR", cfg.output_dir))


def run_scenario(cfg: ExperimentConfig) -> list:
    """Execute one scenario, write artifacts, return the metric records.

    Data files are byte-reproducible for a given config; wall-clock
    information is confined to the manifest.
    """
    out = output_dir(cfg) / cfg.scenario
    out.mkdir(parents=True, exist_ok=True)
    records = _SCENARIO_RUNNERS[cfg.scenario](cfg, out)
    (out / "metrics.csv").write_text(records_csv(records))
    (out / "config.json").write_text(serialize_config(cfg) + "\n")
    manifest = {"scenario": cfg.scenario,
                "completed_at": datetime.now(timezone.utc).isoformat(),
                "records": len(records)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    write_plot(records, out / "metrics.svg")
    return records


def write_plot(records: list, path) -> None:
    """One static SVG per scenario, built from the metric records."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    by_method = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    for method, rows in sorted(by_method.items()):
        rounds = [r.round for r in rows]
        if all(r.isdigit() for r in rounds) and len(rows) > 1:
            ax.plot([int(r.round) for r in rows], [r.utility for r in rows],
                    label=f"{method} utility")
        else:
            ax.scatter(range(len(rows)), [r.asr for r in rows],
                       label=f"{method} asr")
    ax.set_xlabel("round / grid point")
    ax.set_ylabel("metric")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
