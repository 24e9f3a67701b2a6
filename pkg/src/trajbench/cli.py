"""Command line front end.

Every subcommand reads its settings from optional ``--config FILE`` JSON
plus command line flags (flags win), snapshots the resolved settings to
``<out>/config.json``, writes its artifacts into the output directory and
appends machine-readable events to ``<out>/log.jsonl``.

Exit codes: 0 on success, 2 for bad configuration or bad input files, 3
when a stage fails at runtime (a ``FAILED`` marker with the error text is
left in the output directory).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path

from .core import ValidationError
from .defenses import (
    mask_agents,
    mask_drop_past,
    mask_partial_past,
    offroad_rate,
    triage_report,
)
from .evaluator import (
    evaluate,
    format_float,
    predict_scene,
    ratio_sweep,
    write_attack_csv,
    write_csv,
    write_eval_csv,
    write_sweep_csv,
    attack_report,
)
from .plots import LineSeries, line_plot, render_scene
from .poisoner import (
    TAR_KINDS,
    TRIGGER_KINDS,
    TarSpec,
    TriggerSpec,
    parse_manifest,
    poison_dataset,
    write_manifest,
)
from .predictor import TrainConfig, load_params, save_params, train
from .server import BenchState, make_server
from .synthgen import (
    Dataset,
    GenParams,
    SceneFormatError,
    generate_dataset,
    read_dataset,
    write_dataset,
)

__all__ = ["main"]

MASK_CHOICES = ("drop_past", "partial_past", "agents")


class ConfigError(ValueError):
    """The command cannot start because its inputs make no sense."""


class RunLog:
    """Collects one JSON object per event; no timestamps so reruns match."""

    def __init__(self):
        self.events: list[dict] = []

    def add(self, event: str, **fields) -> None:
        self.events.append({"event": event, **fields})

    def write(self, path: Path) -> None:
        with open(path, "w") as fh:
            for obj in self.events:
                fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


# -- settings plumbing -----------------------------------------------------


def _load_config_file(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    return obj


def _resolve_settings(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; unknown config keys fail."""
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    settings = dict(defaults)
    if args.config:
        file_cfg = _load_config_file(args.config)
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(file_cfg)
    settings.update(cli)  # SUPPRESS keeps unset flags out of the namespace
    missing = sorted(k for k, v in settings.items() if v is REQUIRED)
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")
    return settings


class _Required:
    def __repr__(self):
        return "<required>"


REQUIRED = _Required()


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text) -> tuple[int, ...]:
    return tuple(int(v) for v in _floats(text))


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=str) + "\n")


def _read_dataset(path) -> Dataset:
    try:
        return read_dataset(path)
    except FileNotFoundError as e:
        raise ConfigError(f"dataset file not found: {path}") from e


def _trigger_from(s: dict) -> TriggerSpec:
    spec = dict(
        kind=s["trigger"],
        placement=s["placement"],
        offset=float(s["offset"]),
        offset_std=float(s["offset_std"]),
        brake_horizon=float(s["brake_horizon"]),
    )
    if s.get("dad_profile") is not None:
        spec["dad_profile"] = tuple(float(v) for v in s["dad_profile"])
    return TriggerSpec(**spec)


def _tar_from(s: dict) -> TarSpec:
    return TarSpec(
        kind=s["tar"],
        brake_stop=float(s["brake_stop"]),
        curve_accel=float(s["curve_accel"]),
    )


def _train_config(s: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(s["epochs"]),
        batch_size=int(s["batch_size"]),
        learning_rate=float(s["learning_rate"]),
        decay_epochs=int(s["decay_epochs"]),
        decay_factor=float(s["decay_factor"]),
        seed=int(s["seed"]),
        modes=int(s["modes"]),
        mode_weight=float(s["mode_weight"]),
        masking=s["masking"],
    )


# -- command runners --------------------------------------------------------


def cmd_generate(s: dict, out: Path, log: RunLog) -> None:
    extra = {"maneuver_mix": dict(s["maneuver_mix"])} if s["maneuver_mix"] else {}
    params = GenParams(
        n_scenes=int(s["scenes"]),
        seed=int(s["seed"]),
        n_agents_range=tuple(_ints(s["agents"])),
        speed_range=tuple(_floats(s["speeds"])),
        map_style=s["map_style"],
        **extra,
    )
    dataset = generate_dataset(params)
    write_dataset(dataset, out / "dataset.jsonl")
    log.add("generated", n_scenes=len(dataset), n_warnings=dataset.gen_warnings)
    print(f"generated {len(dataset)} scenes -> {out / 'dataset.jsonl'}")


def cmd_poison(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    poisoned, manifest = poison_dataset(
        dataset, _trigger_from(s), _tar_from(s), ratio=float(s["ratio"]), seed=int(s["seed"])
    )
    write_dataset(poisoned, out / "dataset.jsonl")
    (out / "manifest.jsonl").write_text(write_manifest(manifest))
    log.add("poisoned", n_scenes=len(poisoned), n_poisoned=len(manifest))
    print(f"poisoned {len(manifest)}/{len(poisoned)} scenes -> {out / 'dataset.jsonl'}")


def _history_rows(history) -> list[tuple]:
    rows = []
    for rec in history:
        val = "" if rec["val_loss"] is None else format_float(float(rec["val_loss"]))
        rows.append((rec["epoch"], float(rec["train_loss"]), val, float(rec["lr"])))
    return rows


def cmd_train(s: dict, out: Path, log: RunLog) -> None:
    train_ds = _read_dataset(s["dataset"])
    val_ds = _read_dataset(s["val"]) if s["val"] else None
    config = _train_config(s)
    result = train(train_ds, config, val_ds)
    save_params(result.params, out / "checkpoint.bin")
    write_csv(
        out / "history.csv",
        ("epoch", "train_loss", "val_loss", "lr"),
        _history_rows(result.history),
    )
    series = [
        LineSeries(
            "train",
            tuple(r["epoch"] for r in result.history),
            tuple(r["train_loss"] for r in result.history),
        )
    ]
    if val_ds is not None:
        series.append(
            LineSeries(
                "val",
                tuple(r["epoch"] for r in result.history),
                tuple(r["val_loss"] for r in result.history),
            )
        )
    line_plot(tuple(series), title="training loss", xlabel="epoch", ylabel="loss",
              path=out / "loss.svg")
    log.add(
        "trained",
        epochs=len(result.history),
        best_epoch=result.best_epoch,
        diverged=result.diverged,
        final_train_loss=result.history[-1]["train_loss"],
    )
    print(
        f"trained {len(result.history)} epochs"
        f" (best epoch {result.best_epoch}) -> {out / 'checkpoint.bin'}"
    )


def cmd_evaluate(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    params = load_params(s["checkpoint"])
    ks = tuple(_ints(s["ks"])) if s["ks"] else None
    report = evaluate(params, dataset, ks=ks)
    write_eval_csv(out / "metrics.csv", report)
    log.add("evaluated", n_scenes=report["n_scenes"],
            min_ade={str(k): v for k, v in report["min_ade"].items()})
    ade = ", ".join(f"minADE_{k}={v:.3f}" for k, v in sorted(report["min_ade"].items()))
    print(f"evaluated {report['n_scenes']} scenes: {ade}")


def cmd_attack(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    params = load_params(s["checkpoint"])
    report = attack_report(params, dataset, _trigger_from(s), _tar_from(s), seed=int(s["seed"]))
    write_attack_csv(out / "attack.csv", report)
    write_csv(
        out / "attack_summary.csv",
        ("metric", "value"),
        (
            ("clean_error", report.clean_error),
            ("triggered_error", report.triggered_error),
            ("deviation_under_trigger", report.deviation_under_trigger),
            ("n_scenes", str(report.n_scenes)),
            ("n_failures", str(report.n_failures)),
        ),
    )
    log.add("attacked", n_scenes=report.n_scenes, n_failures=report.n_failures,
            triggered_error=report.triggered_error)
    print(
        f"attack on {report.n_scenes} scenes: clean={report.clean_error:.3f}"
        f" triggered={report.triggered_error:.3f}"
        f" deviation={report.deviation_under_trigger:.3f}"
    )


def cmd_sweep(s: dict, out: Path, log: RunLog) -> None:
    train_ds = _read_dataset(s["train"])
    val_ds = _read_dataset(s["val"]) if s["val"] else None
    eval_ds = _read_dataset(s["eval"])
    ratios = _floats(s["ratios"])
    rows = ratio_sweep(
        train_ds, val_ds, eval_ds, _trigger_from(s), _tar_from(s), ratios, _train_config(s)
    )
    write_sweep_csv(out / "sweep.csv", rows)
    xs = tuple(r.ratio for r in rows)
    line_plot(
        (
            LineSeries("clean", xs, tuple(r.clean_error for r in rows)),
            LineSeries("triggered", xs, tuple(r.triggered_error for r in rows)),
            LineSeries("deviation", xs, tuple(r.deviation_under_trigger for r in rows)),
        ),
        title="poison ratio sweep",
        xlabel="poison ratio",
        ylabel="minADE_1 (m)",
        path=out / "sweep.svg",
    )
    log.add("swept", ratios=list(xs))
    for r in rows:
        print(
            f"ratio={r.ratio:.2f} clean={r.clean_error:.3f}"
            f" triggered={r.triggered_error:.3f} deviation={r.deviation_under_trigger:.3f}"
        )


def cmd_defend_offroad(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    rate = offroad_rate(dataset)
    write_csv(
        out / "offroad.csv",
        ("metric", "value"),
        (("offroad_rate", rate), ("n_scenes", str(len(dataset)))),
    )
    log.add("offroad", rate=rate, n_scenes=len(dataset))
    print(f"off-road event rate {rate:.4f} over {len(dataset)} scenes")


def cmd_defend_mask(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    kind = s["masking"]
    if kind == "drop_past":
        masked = mask_drop_past(dataset)
    elif kind == "partial_past":
        masked = mask_partial_past(dataset, seed=int(s["seed"]))
    elif kind == "agents":
        masked = mask_agents(dataset, seed=int(s["seed"]))
    else:
        raise ConfigError(f"unknown masking kind {kind!r}")
    write_dataset(masked, out / "dataset.jsonl")
    log.add("masked", kind=kind, n_scenes=len(masked))
    print(f"masked ({kind}) {len(masked)} scenes -> {out / 'dataset.jsonl'}")


def _load_manifest(path):
    try:
        return parse_manifest(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"manifest file not found: {path}") from e


def cmd_triage(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    manifest = _load_manifest(s["manifest"])
    report = triage_report(
        dataset, manifest, k=int(s["k"]), seed=int(s["seed"]), alpha=float(s["alpha"])
    )
    rows = [
        (c.label, str(c.size), c.tar_fraction, "" if c.budget is None else str(c.budget))
        for c in report.clusters
    ]
    total = "" if report.total_budget is None else str(report.total_budget)
    rows.append(("total", str(len(dataset)), len(manifest) / len(dataset), total))
    write_csv(out / "triage.csv", ("cluster", "size", "tar_fraction", "budget"), rows)
    log.add(
        "triaged",
        k=report.k,
        total_budget=report.total_budget,
        all_unbounded=report.all_unbounded,
    )
    budget = "unbounded" if report.total_budget is None else str(report.total_budget)
    print(f"triage over k={report.k} clusters: total inspection budget {budget}")


def _serve_forever(server) -> None:
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def cmd_serve(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    manifest = _load_manifest(s["manifest"])
    report = triage_report(
        dataset, manifest, k=int(s["k"]), seed=int(s["seed"]), alpha=float(s["alpha"])
    )
    state = BenchState(
        dataset,
        report,
        sessions_path=out / "sessions.json",
        static_dir=s["static"] or None,
        manifest=manifest,
    )
    server = make_server(state, host=s["host"], port=int(s["port"]))
    host, port = server.server_address
    log.add("serving", host=host, port=port)
    log.write(out / "log.jsonl")
    print(f"inspection bench on http://{host}:{port} ({len(dataset)} scenes)")
    _serve_forever(server)


def cmd_render_scene(s: dict, out: Path, log: RunLog) -> None:
    dataset = _read_dataset(s["dataset"])
    by_id = {scene.id: scene for scene in dataset.scenes}
    scene = by_id.get(s["scene_id"])
    if scene is None:
        raise ConfigError(f"scene {s['scene_id']!r} is not in the dataset")
    prediction = None
    if s["checkpoint"]:
        prediction = predict_scene(load_params(s["checkpoint"]), scene)
    render_scene(scene, prediction=prediction, path=out / "scene.svg")
    log.add("rendered", scene_id=scene.id, with_prediction=prediction is not None)
    print(f"rendered {scene.id} -> {out / 'scene.svg'}")


# -- argument wiring ---------------------------------------------------------

_TRAIN_DEFAULTS = {
    "epochs": 80,
    "batch_size": 64,
    "learning_rate": 5e-3,
    "decay_epochs": 40,
    "decay_factor": 0.3,
    "modes": 5,
    "mode_weight": 0.1,
    "masking": None,
}

_ATTACK_DEFAULTS = {
    "trigger": "composite",
    "tar": "brake",
    "placement": "insert_agent",
    "offset": 25.0,
    "offset_std": 0.5,
    "brake_horizon": 2.0,
    "dad_profile": None,
    "brake_stop": 4.0,
    "curve_accel": 2.0,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--decay-epochs", dest="decay_epochs", type=int)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--modes", type=int)
    p.add_argument("--mode-weight", dest="mode_weight", type=float)
    p.add_argument("--masking", choices=MASK_CHOICES)


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trigger", choices=TRIGGER_KINDS)
    p.add_argument("--tar", choices=TAR_KINDS)
    p.add_argument("--placement", choices=("insert_agent", "modify_existing"))
    p.add_argument("--offset", type=float)
    p.add_argument("--offset-std", dest="offset_std", type=float)


COMMANDS: dict[str, tuple] = {}


def _command(name, runner, defaults, flags):
    COMMANDS[name] = (runner, defaults, flags)


_command(
    "generate",
    cmd_generate,
    {
        "out": REQUIRED,
        "scenes": 1000,
        "seed": 0,
        "agents": "2,7",
        "speeds": "3,15",
        "maneuver_mix": None,
        "map_style": "straight_road",
    },
    lambda p: (
        p.add_argument("--scenes", type=int),
        p.add_argument("--seed", type=int),
        p.add_argument("--agents", help="min,max agents per scene"),
        p.add_argument("--speeds", help="min,max target speed (m/s)"),
        p.add_argument("--map-style", dest="map_style"),
    ),
)
_command(
    "poison",
    cmd_poison,
    {"out": REQUIRED, "dataset": REQUIRED, "ratio": 0.1, "seed": 0, **_ATTACK_DEFAULTS},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--ratio", type=float),
        p.add_argument("--seed", type=int),
        _add_attack_flags(p),
    ),
)
_command(
    "train",
    cmd_train,
    {"out": REQUIRED, "dataset": REQUIRED, "val": None, "seed": 0, **_TRAIN_DEFAULTS},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--val"),
        p.add_argument("--seed", type=int),
        _add_train_flags(p),
    ),
)
_command(
    "evaluate",
    cmd_evaluate,
    {"out": REQUIRED, "dataset": REQUIRED, "checkpoint": REQUIRED, "ks": None},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--checkpoint"),
        p.add_argument("--ks", help="comma-separated k values"),
    ),
)
_command(
    "attack",
    cmd_attack,
    {"out": REQUIRED, "dataset": REQUIRED, "checkpoint": REQUIRED, "seed": 0, **_ATTACK_DEFAULTS},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--checkpoint"),
        p.add_argument("--seed", type=int),
        _add_attack_flags(p),
    ),
)
_command(
    "sweep",
    cmd_sweep,
    {
        "out": REQUIRED,
        "train": REQUIRED,
        "val": None,
        "eval": REQUIRED,
        "ratios": "0,0.05,0.1,0.3",
        "seed": 0,
        **_ATTACK_DEFAULTS,
        **_TRAIN_DEFAULTS,
    },
    lambda p: (
        p.add_argument("--train"),
        p.add_argument("--val"),
        p.add_argument("--eval"),
        p.add_argument("--ratios", help="comma-separated poison ratios"),
        p.add_argument("--seed", type=int),
        _add_attack_flags(p),
        _add_train_flags(p),
    ),
)
_command(
    "defend-offroad",
    cmd_defend_offroad,
    {"out": REQUIRED, "dataset": REQUIRED},
    lambda p: p.add_argument("--dataset"),
)
_command(
    "defend-mask",
    cmd_defend_mask,
    {"out": REQUIRED, "dataset": REQUIRED, "masking": REQUIRED, "seed": 0},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--masking", choices=MASK_CHOICES),
        p.add_argument("--seed", type=int),
    ),
)
_command(
    "triage",
    cmd_triage,
    {"out": REQUIRED, "dataset": REQUIRED, "manifest": REQUIRED, "k": 8, "seed": 0,
     "alpha": 0.01},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--manifest"),
        p.add_argument("--k", type=int),
        p.add_argument("--seed", type=int),
        p.add_argument("--alpha", type=float),
    ),
)
_command(
    "serve",
    cmd_serve,
    {
        "out": REQUIRED,
        "dataset": REQUIRED,
        "manifest": REQUIRED,
        "k": 8,
        "seed": 0,
        "alpha": 0.01,
        "host": "127.0.0.1",
        "port": 8000,
        "static": None,
    },
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--manifest"),
        p.add_argument("--k", type=int),
        p.add_argument("--seed", type=int),
        p.add_argument("--alpha", type=float),
        p.add_argument("--host"),
        p.add_argument("--port", type=int),
        p.add_argument("--static", help="directory with the built UI"),
    ),
)
_command(
    "render-scene",
    cmd_render_scene,
    {"out": REQUIRED, "dataset": REQUIRED, "scene_id": REQUIRED, "checkpoint": None},
    lambda p: (
        p.add_argument("--dataset"),
        p.add_argument("--scene-id", dest="scene_id"),
        p.add_argument("--checkpoint"),
    ),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajbench",
        description="Backdoor attacks on trajectory prediction: data, models,"
        " defenses and an inspection bench.",
    )
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")
    for name, (_, _, flags) in COMMANDS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", default=None, help="JSON file with settings")
        p.add_argument("--out", help="output directory")
        flags(p)
    return parser


def _jsonable(settings: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in settings.items()}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    runner, defaults, _ = COMMANDS[args.command]
    try:
        settings = _resolve_settings(defaults, args)
        out = Path(settings["out"])
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ValidationError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    log = RunLog()
    log.add("start", command=args.command, settings=_jsonable(settings))
    _write_json(out / "config.json", {"command": args.command, **_jsonable(settings)})
    try:
        runner(settings, out, log)
    except (ConfigError, ValidationError, SceneFormatError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        log.add("failed", error=f"{type(e).__name__}: {e}")
        with contextlib.suppress(OSError):
            log.write(out / "log.jsonl")
            (out / "FAILED").write_text(f"{type(e).__name__}: {e}\n")
        print(f"stage failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    log.add("done")
    log.write(out / "log.jsonl")
    return 0
