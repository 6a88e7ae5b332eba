"""Experiment orchestration: federated and centralized runs over synthetic
fleets, per-round metric traces, and run-directory reports.

Federated runs exercise the real HTTP protocol on localhost; communication
numbers therefore come from the service's own byte counters, never from
estimates. With the sequential scheduler (the default) a rerun with the same
config and seeds reproduces the CSV outputs byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import model as m
from .client import ClientState, TrainingConfig, chronological_split, client_fl_round, replay
from .datagen import GenConfig, generate, generate_samples
from .errors import InputError
from .features import FeatureRegistry, default_registry
from .hashing import derive_seed
from .model import AdamState, EvalReport, evaluate, init_params, preset
from .privacy import DPConfig
from .server import FLServer, ModelService, RoundPolicy, should_stop
from .wire import expected_float_bytes

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    mode: str = "fl"  # fl | centralized
    n_users: int = 50
    preset: str = "desk"
    seeds: Tuple[int, ...] = (0, 1, 2)
    out_dir: str = "runs/experiment"
    local_rounds: int = 15
    batch_size: int = 32
    min_samples: int = 50
    lr: float = 1e-3
    max_rounds: int = 40
    patience: int = 7
    dp_epsilon: Optional[float] = None
    dp_delta: float = 1e-5
    dp_clip: float = 1.0
    label_noise: float = 0.1
    days: int = 10
    skew_exponent: float = 0.8
    eval_users: int = 16
    eval_min_samples: int = 200

    def validate(self) -> "ExperimentConfig":
        if self.mode not in ("fl", "centralized"):
            raise InputError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise InputError("at least one seed is required")
        return self


def _gen_config(cfg: ExperimentConfig, seed: int) -> GenConfig:
    return GenConfig(n_users=cfg.n_users, days=cfg.days, min_samples_per_user=cfg.min_samples,
                     skew_exponent=cfg.skew_exponent, label_noise=cfg.label_noise, seed=seed,
                     signal_seed=seed)


def build_fleet(logs: Dict[str, list], registry: FeatureRegistry) -> List[ClientState]:
    """Replay every user log into a fresh client store."""
    fleet = []
    for user_id in sorted(logs):
        state = ClientState(client_id=user_id)
        replay(logs[user_id], state, registry)
        fleet.append(state)
    return fleet


def _eval_sets(cfg: ExperimentConfig, seed: int,
               registry: FeatureRegistry) -> Tuple[list, list]:
    """Server-held validation and test samples, disjoint from client data."""
    gen = GenConfig(n_users=cfg.eval_users, days=cfg.days,
                    min_samples_per_user=cfg.eval_min_samples, skew_exponent=0.0,
                    label_noise=cfg.label_noise, seed=derive_seed(seed, "server-eval"),
                    signal_seed=seed)
    samples = generate_samples(gen, registry)
    half = len(samples) // 3
    return samples[:half], samples[half:]


_ROUND_FIELDS = ["round", "val_loss", "test_loss", "test_accuracy", "test_auc",
                 "down_payload_bytes", "up_payload_bytes", "down_wire_bytes", "up_wire_bytes"]


def _metrics_row(round_num: int, val_loss: float, report: EvalReport, comm: dict) -> dict:
    return {"round": round_num, "val_loss": f"{val_loss:.6f}",
            "test_loss": f"{report.loss:.6f}", "test_accuracy": f"{report.accuracy:.6f}",
            "test_auc": "" if report.auc is None else f"{report.auc:.6f}",
            "down_payload_bytes": comm.get("down_payload_bytes", 0),
            "up_payload_bytes": comm.get("up_payload_bytes", 0),
            "down_wire_bytes": comm.get("down_wire_bytes", 0),
            "up_wire_bytes": comm.get("up_wire_bytes", 0)}


def run_fl_seed(cfg: ExperimentConfig, seed: int) -> Tuple[List[dict], dict]:
    """One federated run; returns (per-round rows, final summary)."""
    model_cfg = preset(cfg.preset, seed=derive_seed(seed, "init"))
    registry = default_registry(model_cfg)
    logs, _manifest = generate(_gen_config(cfg, seed), registry)
    fleet = build_fleet(logs, registry)
    val_samples, test_samples = _eval_sets(cfg, seed, registry)

    policy = RoundPolicy(min_clients_per_round=len(fleet), round_timeout_s=300.0,
                         max_rounds=cfg.max_rounds, patience=cfg.patience)
    fl = FLServer(init_params(model_cfg), model_cfg, policy,
                  validation_data=val_samples, registry=registry)
    service = ModelService(fl).start()
    dp = None
    if cfg.dp_epsilon is not None:
        dp = DPConfig(epsilon=cfg.dp_epsilon, delta=cfg.dp_delta, clip_norm=cfg.dp_clip,
                      enabled=True, seed=derive_seed(seed, "dp"))
    training = TrainingConfig(local_rounds=cfg.local_rounds, batch_size=cfg.batch_size,
                              min_samples=cfg.min_samples, lr=cfg.lr,
                              seed=derive_seed(seed, "train"), dp=dp)
    rows: List[dict] = []
    try:
        while fl.state.status != "stopped":
            round_before = fl.state.round
            for client in fleet:
                client_fl_round(client, service.url, training)
            if fl.state.round == round_before:
                logger.warning("no round progress at round %d; stopping run", round_before)
                break
            report = evaluate(fl.state.params, test_samples)
            val_loss = fl.state.history[-1][2]
            rows.append(_metrics_row(fl.state.round, val_loss, report, fl.comm.to_dict()))
    finally:
        service.stop()
    final = evaluate(fl.state.params, test_samples)
    summary = {"seed": seed, "mode": "fl", "rounds": fl.state.round,
               "final_loss": final.loss, "final_accuracy": final.accuracy,
               "final_auc": final.auc, "param_count": fl.state.params.count,
               "expected_payload_per_trip": 2 * expected_float_bytes(model_cfg),
               **{k: v for k, v in fl.comm.to_dict().items()}}
    return rows, summary


def _train_centralized(params, train_samples, val_samples, test_samples, cfg: ExperimentConfig,
                       seed: int) -> Tuple[List[dict], "m.ModelParams", int]:
    """Single-model training over the merged dataset with early stopping."""
    xnum, xcat = m._stack_batch(params, train_samples)
    y = np.asarray([s.label_viewable for s in train_samples], dtype=np.float64)
    rng = np.random.default_rng(derive_seed(seed, "cl-train"))
    state = AdamState.for_params(params, lr=cfg.lr)
    history: List[Tuple[int, str, float]] = []
    rows: List[dict] = []
    n = len(train_samples)
    epoch = 0
    while True:
        epoch += 1
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            grads, _probs = m._backward_arrays(params, xnum[idx], xcat[idx], y[idx])
            params, state = m.adam_step(params, grads, state)
        val_loss = evaluate(params, val_samples).loss
        history.append((epoch, "", val_loss))
        report = evaluate(params, test_samples)
        rows.append(_metrics_row(epoch, val_loss, report,
                                 {"down_payload_bytes": 0, "up_payload_bytes": 0,
                                  "down_wire_bytes": 0, "up_wire_bytes": 0}))
        if should_stop(history, cfg.patience, cfg.max_rounds):
            break
    return rows, params, epoch


def run_centralized_seed(cfg: ExperimentConfig, seed: int) -> Tuple[List[dict], dict]:
    """Centralized baseline: the same users' training splits merged into one set."""
    model_cfg = preset(cfg.preset, seed=derive_seed(seed, "init"))
    registry = default_registry(model_cfg)
    logs, _manifest = generate(_gen_config(cfg, seed), registry)
    fleet = build_fleet(logs, registry)
    merged_train: List = []
    for client in fleet:
        train, _val, _test = chronological_split(client.store.samples())
        merged_train.extend(train)
    val_samples, test_samples = _eval_sets(cfg, seed, registry)
    params = init_params(model_cfg)
    rows, params, epochs = _train_centralized(params, merged_train, val_samples, test_samples,
                                              cfg, seed)
    final = evaluate(params, test_samples)
    summary = {"seed": seed, "mode": "centralized", "rounds": epochs,
               "final_loss": final.loss, "final_accuracy": final.accuracy,
               "final_auc": final.auc, "param_count": params.count,
               "expected_payload_per_trip": 0,
               "model_downloads": 0, "updates_accepted": 0, "updates_rejected": 0,
               "down_payload_bytes": 0, "up_payload_bytes": 0,
               "down_wire_bytes": 0, "up_wire_bytes": 0}
    return rows, summary


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run all seeds of the configured experiment; write CSVs under out_dir."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_seed: List[dict] = []
    for seed in cfg.seeds:
        logger.info("running %s experiment, seed %d", cfg.mode, seed)
        if cfg.mode == "fl":
            rows, summary = run_fl_seed(cfg, seed)
        else:
            rows, summary = run_centralized_seed(cfg, seed)
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        with open(seed_dir / "rounds.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=_ROUND_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
        per_seed.append(summary)

    aucs = [s["final_auc"] for s in per_seed if s["final_auc"] is not None]
    result = {"mode": cfg.mode, "n_users": cfg.n_users, "preset": cfg.preset,
              "dp_epsilon": cfg.dp_epsilon, "seeds": list(cfg.seeds), "per_seed": per_seed,
              "mean_auc": float(np.mean(aucs)) if aucs else None,
              "std_auc": float(np.std(aucs)) if aucs else None,
              "mean_rounds": float(np.mean([s["rounds"] for s in per_seed]))}
    with open(out / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        fields = ["mode", "seed", "rounds", "final_loss", "final_accuracy", "final_auc"]
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for s in per_seed:
            writer.writerow({k: s[k] if k != "mode" else s["mode"] for k in fields})
    return result


def _load_experiments(run_dir: Path) -> List[Tuple[Path, dict]]:
    found = []
    if (run_dir / "experiment.json").exists():
        found.append((run_dir, json.loads((run_dir / "experiment.json").read_text())))
    for child in sorted(run_dir.iterdir()):
        if child.is_dir() and (child / "experiment.json").exists():
            found.append((child, json.loads((child / "experiment.json").read_text())))
    return found


def report(run_dir) -> dict:
    """Aggregate a finished run directory into plot-ready CSV + accounting.

    Emits convergence.csv (per-seed round series), comm.json (payload vs the
    2 x 4 x parameter-count expectation), and, for DP sweeps, dp_summary.csv
    with one row per epsilon.
    """
    run_dir = Path(run_dir)
    if not run_dir.exists():
        raise InputError(f"run directory {run_dir} does not exist")
    experiments = _load_experiments(run_dir)
    if not experiments:
        raise InputError(f"{run_dir} holds no experiment.json artifacts")
    warnings: List[str] = []

    conv_rows = []
    for exp_dir, exp in experiments:
        for seed in exp["seeds"]:
            rounds_csv = exp_dir / f"seed{seed}" / "rounds.csv"
            if not rounds_csv.exists():
                warnings.append(f"missing {rounds_csv}")
                continue
            with open(rounds_csv, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    conv_rows.append({"experiment": exp_dir.name, "mode": exp["mode"],
                                      "dp_epsilon": exp.get("dp_epsilon"), "seed": seed, **row})
    with open(run_dir / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        fields = ["experiment", "mode", "dp_epsilon", "seed"] + _ROUND_FIELDS
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(conv_rows)

    comm: dict = {"experiments": [], "warnings": warnings}
    for exp_dir, exp in experiments:
        for s in exp["per_seed"]:
            downloads = max(1, s.get("model_downloads", 0) or 1)
            uploads = max(1, s.get("updates_accepted", 0) or 1)
            per_trip_payload = (s.get("down_payload_bytes", 0) / downloads
                                + s.get("up_payload_bytes", 0) / uploads)
            per_trip_wire = (s.get("down_wire_bytes", 0) / downloads
                             + s.get("up_wire_bytes", 0) / uploads)
            expected = s.get("expected_payload_per_trip", 0)
            comm["experiments"].append({
                "experiment": exp_dir.name, "mode": s["mode"], "seed": s["seed"],
                "param_count": s.get("param_count"),
                "bytes_per_round_trip_payload": per_trip_payload,
                "bytes_per_round_trip_wire": per_trip_wire,
                "expected_2x4xparams": expected,
                "payload_vs_expected_ratio": (per_trip_payload / expected) if expected else None,
                "total_payload_mb": (s.get("down_payload_bytes", 0)
                                     + s.get("up_payload_bytes", 0)) / 1e6,
                "total_wire_mb": (s.get("down_wire_bytes", 0) + s.get("up_wire_bytes", 0)) / 1e6,
            })
    with open(run_dir / "comm.json", "w", encoding="utf-8") as fh:
        json.dump(comm, fh, indent=1)

    dp_rows = []
    for exp_dir, exp in experiments:
        if exp.get("dp_epsilon") is None and exp["mode"] == "fl" and len(experiments) > 1:
            label = "none"
        elif exp.get("dp_epsilon") is not None:
            label = str(exp["dp_epsilon"])
        else:
            continue
        losses = [s["final_loss"] for s in exp["per_seed"]]
        total_mb = [(s.get("down_payload_bytes", 0) + s.get("up_payload_bytes", 0)) / 1e6
                    for s in exp["per_seed"]]
        dp_rows.append({"epsilon": label, "rounds": f"{exp['mean_rounds']:.1f}",
                        "loss": f"{float(np.mean(losses)):.4f}",
                        "auc": "" if exp["mean_auc"] is None else f"{exp['mean_auc']:.4f}",
                        "communication_mb": f"{float(np.mean(total_mb)):.3f}"})
    dp_rows.sort(key=lambda row: (row["epsilon"] == "none",
                                  float(row["epsilon"]) if row["epsilon"] != "none" else 0.0))
    if dp_rows:
        with open(run_dir / "dp_summary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epsilon", "rounds", "loss", "auc",
                                                    "communication_mb"])
            writer.writeheader()
            writer.writerows(dp_rows)
    return {"convergence_rows": len(conv_rows), "comm": comm, "dp_rows": dp_rows,
            "warnings": warnings}
