"""Command-line experiment runner: ``ciota simulate|trace-gen|detect|eval|combine``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Sequence

from ciota.agent import ALERT_CSV_HEADER
from ciota.detection import LABELINGS, run_detection, train_model
from ciota.emm import FrequencyMatrix, ModelParams, combine, distance, distance_grid, state_of_address
from ciota.errors import CiotaError, InvalidInput, InvalidParameter
from ciota.metrics import EvalResult, compute_auc, compute_avprc, rates_at, roc_points
from ciota.simnet.sim import Scenario, SimConfig, run_simulation, summarize
from ciota.simnet.topology import make_topology
from ciota.traces import (
    AttackSpec,
    GroundTruthModel,
    gen_benign_trace,
    inject_attack,
    read_labels,
    read_trace,
    write_labels,
    write_trace,
)

logger = logging.getLogger("ciota")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MODEL_FORMAT = "ciota-model-v1"
TRIAL_HEADER = ["trial", "seed", "generator", "n", "L", "epochs", "messages", "deadlock"]

PAPER_PRESET: dict[str, Any] = {
    "interval": 60.0,
    "block_size": 20,
    "p_a": 0.25,
    "alpha": 0.05,
    "p_thr": 0.012,
    "window_k": 10_000,
    "region_size_bytes": 256,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        "generator": "complete",
        "n_agents": 100,
        "block_size": 80,
        "trials": 1,
        "neighbors": 5,
        "p": 0.1,
        "attachment": 1,
        "ws_method": "shortcut",
    },
    "trace-gen": {
        "n_states": 16,
        "out_degree": 4,
        "regular": True,
        "n_regions": 0,
        "region_size_bytes": 256,
        "train_length": 100_000,
        "length": 20_000,
        "attack": None,
        "hex": False,
    },
    "detect": {"train": None, "model": None, "trace": None, "labels": None, "labeling": "window"},
    "eval": {"scores": None, "threshold": None},
    "combine": {"models": [], "local": None, "p_a": 0.25, "alpha": 0.05},
}


class ConfigError(Exception):
    pass


# -- config handling ----------------------------------------------------------------


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a mapping")
    node[parts[-1]] = value


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    cfg: dict[str, Any] = dict(DEFAULTS[args.command])
    if args.preset == "paper":
        cfg.update(PAPER_PRESET)
    elif args.preset is not None:
        raise ConfigError(f"unknown preset {args.preset!r}")
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(loaded)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(cfg, key.strip(), _parse_value(value))
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    return cfg


def _pick(cfg: dict[str, Any], cls) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in cfg.items() if k in names}


def model_params(cfg: dict[str, Any]) -> ModelParams:
    return ModelParams(**_pick(cfg, ModelParams))


def _require_file(cfg: dict[str, Any], key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"missing required setting {key!r}")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"{key}: no such file {value}")
    return path


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- model files -----------------------------------------------------------------


def write_model_file(path: str | os.PathLike, model: FrequencyMatrix, app_id: str = "app", app_version: str = "1") -> None:
    data = {
        "format": MODEL_FORMAT,
        "app_id": app_id,
        "app_version": app_version,
        "counts": [[i, j, c] for (i, j), c in sorted(model.counts.items())],
    }
    Path(path).write_text(json.dumps(data) + "\n", encoding="utf-8")


def read_model_file(path: str | os.PathLike) -> tuple[FrequencyMatrix, str, str]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not a model file ({exc})") from None
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise InvalidInput(f"{path}: not a {MODEL_FORMAT} file")
    model = FrequencyMatrix()
    for i, j, c in data["counts"]:
        model.add_count(int(i), int(j), int(c))
    return model, str(data.get("app_id", "")), str(data.get("app_version", ""))


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    trials = int(cfg.get("trials", 1))
    if trials < 0:
        raise InvalidParameter("trials must be non-negative")
    sim_fields = _pick(cfg, SimConfig)
    if isinstance(sim_fields.get("scenario"), dict):
        sim_fields["scenario"] = Scenario(**sim_fields["scenario"])
    base_seed = int(cfg["seed"])
    sim_fields.pop("seed", None)
    # validate before running any trial
    SimConfig(seed=base_seed, **sim_fields)
    generator = cfg["generator"]
    rows = []
    epochs = []
    degree_means = []
    deadlocks = 0
    for t in range(trials):
        seed = base_seed + t
        topo = make_topology(
            generator,
            sim_fields["n_agents"],
            seed,
            neighbors=cfg["neighbors"],
            p=cfg["p"],
            attachment=cfg["attachment"],
            ws_method=cfg["ws_method"],
        )
        metrics = run_simulation(SimConfig(seed=seed, **sim_fields), topo)
        ep = sum(metrics.epochs_to_close) if metrics.completed else metrics.epochs_run
        rows.append([t, seed, generator, topo.n, sim_fields["block_size"], ep, metrics.messages_sent, int(metrics.deadlock_detected)])
        if metrics.completed:
            epochs.append(ep)
        deadlocks += metrics.deadlock_detected
        degree_means.append(metrics.degree_stats)
        logger.info("trial %d seed %d: epochs=%s deadlock=%s", t, seed, ep, metrics.deadlock_detected)
    with open(out / "trials.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        w.writerows(rows)
    degree = {}
    if degree_means:
        for key in degree_means[0]:
            degree[key] = summarize([d[key] for d in degree_means])["mean"]
    summary = {
        "config": cfg,
        "epochs": summarize(epochs),
        "degree": degree,
        "deadlocks": deadlocks,
        "trials": trials,
    }
    _write_json(out / "summary.json", summary)
    return summary


def _ground_truth(cfg: dict[str, Any]) -> GroundTruthModel:
    return GroundTruthModel.random(
        int(cfg["n_states"]),
        int(cfg["out_degree"]),
        int(cfg["seed"]),
        regular=bool(cfg["regular"]),
        region_size=int(cfg["region_size_bytes"]),
        n_regions=int(cfg["n_regions"]),
    )


def cmd_trace_gen(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    gt = _ground_truth(cfg)
    seed = int(cfg["seed"])
    hex_addresses = bool(cfg["hex"])
    if int(cfg["train_length"]) > 0:
        write_trace(out / "train.txt", gen_benign_trace(gt, int(cfg["train_length"]), seed), hex_addresses=hex_addresses)
    trace = gen_benign_trace(gt, int(cfg["length"]), seed + 1)
    mask = [False] * len(trace)
    if cfg.get("attack"):
        attack = dict(cfg["attack"])
        if "target_regions" in attack:
            attack["target_regions"] = tuple(attack["target_regions"])
        trace, mask = inject_attack(trace, AttackSpec(**attack), gt)
    write_trace(out / "trace.txt", trace, hex_addresses=hex_addresses)
    write_labels(out / "labels.txt", mask)
    probs = [[i, j, p] for (i, j), p in sorted(gt.chain.probs.items())]
    info = {"config": cfg, "ground_truth": probs, "min_prob": gt.min_prob(), "attack_records": sum(mask)}
    _write_json(out / "trace_info.json", info)
    return info


def cmd_detect(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    params = model_params(cfg)
    if cfg.get("labeling") not in LABELINGS:
        raise ConfigError(f"labeling must be one of {LABELINGS}")
    B = params.region_size_bytes
    if cfg.get("model"):
        model, _, _ = read_model_file(_require_file(cfg, "model"))
    else:
        train_path = _require_file(cfg, "train")
        model = train_model([state_of_address(r.address, B) for r in read_trace(train_path)])
    trace = read_trace(_require_file(cfg, "trace"))
    mask = read_labels(_require_file(cfg, "labels")) if cfg.get("labels") else None
    if mask is not None and len(mask) != len(trace):
        raise InvalidInput(f"{len(mask)} labels for a trace of {len(trace)} records")
    states = [state_of_address(r.address, B) for r in trace]
    run = run_detection(model, states, mask, params, labeling=cfg["labeling"])
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "score", "label", "alert"])
        for step, (score, label) in enumerate(zip(run.scores, run.labels)):
            w.writerow([step, repr(score), int(label), int(score < params.p_thr)])
    with open(out / "alerts.csv", "w", encoding="utf-8") as fh:
        fh.write(ALERT_CSV_HEADER + "\n")
        for alert in run.alerts:
            fh.write(alert.to_csv() + "\n")
    write_model_file(out / "model.json", run.model)
    result = {"config": cfg, "alerts": len(run.alerts), "result": run.result.to_dict()}
    _write_json(out / "result.json", result)
    return result


def cmd_eval(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    path = _require_file(cfg, "scores")
    scores, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                scores.append(float(row["score"]))
                labels.append(row["label"].strip() in ("1", "true", "True", "attack"))
            except (KeyError, ValueError, AttributeError) as exc:
                raise InvalidInput(f"{path}: bad scores row {row} ({exc})") from None
    threshold = cfg.get("threshold")
    if threshold is None:
        threshold = ModelParams().p_thr if "p_thr" not in cfg else cfg["p_thr"]
    tpr, fpr = rates_at(scores, labels, float(threshold))
    result = EvalResult(float(threshold), tpr, fpr)
    if tpr is not None and fpr is not None:
        result.auc = compute_auc(scores, labels)
        result.average_precision = compute_avprc(scores, labels)
        with open(out / "roc.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for thr, f, t in roc_points(scores, labels):
                w.writerow([repr(thr), repr(f), repr(t)])
    data = {"config": cfg, "result": result.to_dict(), "n": len(scores)}
    _write_json(out / "eval.json", data)
    return data


def cmd_combine(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    paths = cfg.get("models") or []
    if len(paths) < 2:
        raise ConfigError("combine needs at least two model files")
    loaded = []
    for k, p in enumerate(paths):
        if not Path(p).is_file():
            raise ConfigError(f"models[{k}]: no such file {p}")
        loaded.append(read_model_file(p))
    apps = {(app, ver) for _, app, ver in loaded}
    if len(apps) != 1:
        raise InvalidInput(f"models target different applications: {sorted(apps)}")
    models = [m for m, _, _ in loaded]
    p_a = float(cfg["p_a"])
    alpha = float(cfg["alpha"])
    combined = combine(models, p_a)
    app_id, app_version = next(iter(apps))
    write_model_file(out / "combined.json", combined, app_id, app_version)
    local = read_model_file(_require_file(cfg, "local"))[0] if cfg.get("local") else models[0]
    grid = distance_grid(local, combined)
    with open(out / "distance_grid.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "abs_diff"])
        for (i, j), v in grid.items():
            w.writerow([i, j, repr(v)])
    d = distance(local, combined)
    report = {"config": cfg, "distance": d, "alpha": alpha, "attests": d < alpha, "entries": len(combined)}
    _write_json(out / "combine.json", report)
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "trace-gen": cmd_trace_gen,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "combine": cmd_combine,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ciota", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--preset", choices=["paper"], help="load the published parameter set")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("CIOTA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, InvalidParameter, TypeError) as exc:
        print(f"ciota: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CiotaError, OSError, ValueError) as exc:
        print(f"ciota: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
