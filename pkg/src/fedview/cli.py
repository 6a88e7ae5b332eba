"""Command-line entry points: data generation, server, client fleets,
experiments, benchmarks, and reports.

Environment overrides: FEDVIEW_PORT (server port), FEDVIEW_DATA_DIR (base for
relative data/output paths).
"""

from __future__ import annotations

import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

import click

from .bench import format_benchmark, run_benchmark
from .client import ClientState, TrainingConfig, client_fl_round, replay
from .datagen import GenConfig, generate, partition_report, write_dataset
from .errors import CheckpointError, FedviewError
from .events import read_log
from .experiment import ExperimentConfig, report as build_report, run_experiment
from .features import default_registry, load_registry
from .golden import emit_golden
from .hashing import derive_seed
from .model import init_params, preset
from .privacy import DPConfig
from .server import FLServer, ModelService, RoundPolicy, load_checkpoint

logger = logging.getLogger(__name__)


def _resolve(path: str) -> Path:
    base = os.environ.get("FEDVIEW_DATA_DIR")
    p = Path(path)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command("generate-data")
@click.option("--users", default=50, show_default=True)
@click.option("--days", default=10, show_default=True)
@click.option("--min-samples", default=50, show_default=True)
@click.option("--skew", default=0.8, show_default=True)
@click.option("--label-noise", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="data", show_default=True)
def generate_data(users, days, min_samples, skew, label_noise, seed, out):
    """Generate per-user ad-event logs plus the ground-truth manifest."""
    config = GenConfig(n_users=users, days=days, min_samples_per_user=min_samples,
                       skew_exponent=skew, label_noise=label_noise, seed=seed)
    logs, manifest = generate(config)
    out_dir = _resolve(out)
    write_dataset(out_dir, logs, manifest)
    click.echo(json.dumps(partition_report(logs), indent=1))
    click.echo(f"wrote {len(logs)} user logs under {out_dir}")


@main.command("run-server")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=None, type=int, help="Default: FEDVIEW_PORT or 8780.")
@click.option("--preset", "preset_name", default="desk", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--min-clients", default=1, show_default=True)
@click.option("--round-timeout", default=30.0, show_default=True)
@click.option("--max-rounds", default=100, show_default=True)
@click.option("--patience", default=7, show_default=True)
@click.option("--val-users", default=8, show_default=True)
@click.option("--val-min-samples", default=100, show_default=True)
@click.option("--checkpoint", default=None, help="Checkpoint file to resume from / save to.")
@click.option("--bootstrap", is_flag=True, help="Ignore an existing checkpoint and start fresh.")
@click.option("--static-dir", default=None, help="Serve a browser demo from this directory.")
@click.option("--registry-file", default=None, help="Feature registry document (default: built-in).")
@click.option("--config-file", default=None, help="JSON file overriding these options.")
def run_server(host, port, preset_name, seed, min_clients, round_timeout, max_rounds,
               patience, val_users, val_min_samples, checkpoint, bootstrap, static_dir,
               registry_file, config_file):
    """Run the coordination server until interrupted."""
    if config_file:
        overrides = json.loads(Path(config_file).read_text())
        host = overrides.get("host", host)
        port = overrides.get("port", port)
        preset_name = overrides.get("preset", preset_name)
        seed = overrides.get("seed", seed)
        min_clients = overrides.get("min_clients", min_clients)
        round_timeout = overrides.get("round_timeout", round_timeout)
        max_rounds = overrides.get("max_rounds", max_rounds)
        patience = overrides.get("patience", patience)
    port = port if port is not None else int(os.environ.get("FEDVIEW_PORT", "8780"))

    model_cfg = preset(preset_name, seed=seed)
    registry = load_registry(_resolve(registry_file)) if registry_file else default_registry(model_cfg)
    registry.check_config(model_cfg)
    params = init_params(model_cfg)
    state = None
    if checkpoint and Path(_resolve(checkpoint)).exists() and not bootstrap:
        try:
            state, model_cfg = load_checkpoint(_resolve(checkpoint))
            params = state.params
            click.echo(f"resumed from {checkpoint} at round {state.round} (tag {state.tag})")
        except CheckpointError as exc:
            click.echo(f"error: {exc}\nPass --bootstrap to start fresh.", err=True)
            sys.exit(2)

    from .datagen import generate_samples  # local import: optional validation data
    val_cfg = GenConfig(n_users=val_users, min_samples_per_user=val_min_samples,
                        skew_exponent=0.0, seed=derive_seed(seed, "server-val"))
    validation = generate_samples(val_cfg, registry)
    policy = RoundPolicy(min_clients_per_round=min_clients, round_timeout_s=round_timeout,
                         max_rounds=max_rounds, patience=patience)
    fl = FLServer(params, model_cfg, policy, validation_data=validation, registry=registry)
    if state is not None:
        fl.state = state
    service = ModelService(fl, host=host, port=port,
                           static_dir=str(_resolve(static_dir)) if static_dir else None)
    service.start()
    click.echo(f"serving on {service.url} (preset={preset_name}, "
               f"params={params.count}, val={len(validation)})")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.is_set() and fl.state.status != "stopped":
            stop.wait(0.5)
    finally:
        service.stop(checkpoint_path=_resolve(checkpoint) if checkpoint else None)
        click.echo(f"stopped at round {fl.state.round} (status {fl.state.status})")


@main.command("run-clients")
@click.option("--server", "server_url", required=True)
@click.option("--logs", "logs_dir", required=True, help="Directory of per-user .jsonl logs.")
@click.option("--clients", default=0, help="Limit the number of clients (0 = all logs).")
@click.option("--rounds", default=10, show_default=True, help="FL rounds to participate in.")
@click.option("--local-rounds", default=15, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--min-samples", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--scheduler", type=click.Choice(["sequential", "concurrent"]),
              default="sequential", show_default=True)
@click.option("--dp-epsilon", default=None, type=float)
def run_clients(server_url, logs_dir, clients, rounds, local_rounds, batch_size,
                min_samples, seed, scheduler, dp_epsilon):
    """Replay logs into client stores, then run FL rounds against a server."""
    from .client import ServerClient
    from .features import parse_registry

    registry = parse_registry(ServerClient(server_url).get_registry_text())
    log_files = sorted(_resolve(logs_dir).glob("*.jsonl"))
    if clients:
        log_files = log_files[:clients]
    if not log_files:
        raise click.ClickException(f"no .jsonl logs under {logs_dir}")
    fleet = []
    for path in log_files:
        state = ClientState(client_id=path.stem)
        replay(read_log(path), state, registry)
        fleet.append(state)
    click.echo(f"replayed {len(fleet)} clients "
               f"({sum(len(c.store.samples()) for c in fleet)} samples)")
    dp = DPConfig(epsilon=dp_epsilon, seed=derive_seed(seed, "dp")) if dp_epsilon else None
    training = TrainingConfig(local_rounds=local_rounds, batch_size=batch_size,
                              min_samples=min_samples, seed=seed, dp=dp)

    def run_one(client):
        client_fl_round(client, server_url, training)

    for round_idx in range(rounds):
        if scheduler == "sequential":
            for client in fleet:
                run_one(client)
        else:
            threads = [threading.Thread(target=run_one, args=(c,)) for c in fleet]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        status = ServerClient(server_url).get_status()
        click.echo(f"fleet pass {round_idx + 1}: server round {status['round']} "
                   f"status {status['status']}")
        if status["status"] == "stopped":
            break


@main.command("run-experiment")
@click.option("--mode", type=click.Choice(["fl", "centralized"]), default="fl", show_default=True)
@click.option("--users", default=50, show_default=True)
@click.option("--preset", "preset_name", default="desk", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--out", default="runs/experiment", show_default=True)
@click.option("--local-rounds", default=15, show_default=True)
@click.option("--max-rounds", default=40, show_default=True)
@click.option("--patience", default=7, show_default=True)
@click.option("--label-noise", default=0.1, show_default=True)
@click.option("--days", default=10, show_default=True)
@click.option("--dp-epsilon", "dp_epsilons", multiple=True, type=float,
              help="Repeatable; each value runs a separate DP experiment.")
def run_experiment_cmd(mode, users, preset_name, seeds, out, local_rounds, max_rounds,
                       patience, label_noise, days, dp_epsilons):
    """Run the FL or centralized experiment matrix at desk scale."""
    seed_list = tuple(int(s) for s in seeds.split(","))
    base = ExperimentConfig(mode=mode, n_users=users, preset=preset_name, seeds=seed_list,
                            out_dir=str(_resolve(out)), local_rounds=local_rounds,
                            max_rounds=max_rounds, patience=patience,
                            label_noise=label_noise, days=days)
    if dp_epsilons:
        for eps in dp_epsilons:
            cfg = ExperimentConfig(**{**base.__dict__, "dp_epsilon": eps,
                                      "out_dir": str(_resolve(out) / f"eps_{eps}")})
            result = run_experiment(cfg)
            click.echo(f"eps={eps}: mean AUC {result['mean_auc']}")
        cfg = ExperimentConfig(**{**base.__dict__, "out_dir": str(_resolve(out) / "eps_none")})
        result = run_experiment(cfg)
        click.echo(f"no-DP: mean AUC {result['mean_auc']}")
    else:
        result = run_experiment(base)
        click.echo(json.dumps({k: result[k] for k in ("mode", "mean_auc", "std_auc",
                                                      "mean_rounds")}, indent=1))


@main.command("benchmark")
@click.option("--preset", "preset_name", default="full", show_default=True)
@click.option("--samples", default=374, show_default=True)
@click.option("--local-rounds", default=15, show_default=True)
@click.option("--repeats", default=10, show_default=True)
@click.option("--out", default=None, help="Optional JSON output path.")
def benchmark_cmd(preset_name, samples, local_rounds, repeats, out):
    """Measure preprocessing, inference, and local-training latency."""
    result = run_benchmark(preset_name, n_samples=samples, local_rounds=local_rounds,
                           repeats=repeats)
    click.echo(format_benchmark(result))
    if out:
        Path(_resolve(out)).write_text(json.dumps(result, indent=1))


@main.command("report")
@click.argument("run_dir", required=False)
@click.option("--golden", "golden_dir", default=None,
              help="Emit golden cross-implementation vectors to this directory.")
def report_cmd(run_dir, golden_dir):
    """Aggregate a run directory into plot CSVs and communication accounting."""
    if golden_dir:
        paths = emit_golden(_resolve(golden_dir))
        click.echo("golden vectors written:\n  " + "\n  ".join(paths))
    if run_dir:
        try:
            result = build_report(_resolve(run_dir))
        except FedviewError as exc:
            raise click.ClickException(str(exc))
        click.echo(f"convergence rows: {result['convergence_rows']}")
        for row in result["comm"]["experiments"]:
            ratio = row["payload_vs_expected_ratio"]
            click.echo(f"  {row['experiment']}/seed{row['seed']}: "
                       f"payload/trip {row['bytes_per_round_trip_payload']:.0f} B "
                       f"(expected {row['expected_2x4xparams']} B"
                       + (f", ratio {ratio:.3f})" if ratio else ")"))
        for row in result["dp_rows"]:
            click.echo(f"  dp eps={row['epsilon']}: rounds {row['rounds']} "
                       f"loss {row['loss']} auc {row['auc']} comm {row['communication_mb']} MB")
        if result["warnings"]:
            click.echo("warnings:\n  " + "\n  ".join(result["warnings"]), err=True)
    if not golden_dir and not run_dir:
        raise click.ClickException("provide RUN_DIR and/or --golden")


if __name__ == "__main__":
    main()
