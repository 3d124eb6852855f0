"""``ccr-mpc`` command line.

Subcommands: gen-data, train-forecaster, train-forward, eval, mpc-run,
report. Options may come from ``--config FILE`` (a flat JSON object, or a
manifest written by an earlier run); explicit flags win over the file.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import dataio, serialize
from .ccr import FORWARD_KINDS
from .mpc import (
    BENCHMARK,
    CONTROL_NAMES,
    STATE_NAMES,
    Drift,
    MpcTrajectory,
    build_forward_dataset,
    benchmark_config,
    benchmark_forward,
    make_scenario,
    metric_r2,
    run_batch,
    run_sequential,
    train_forecaster,
)
from .report import emit_report

log = logging.getLogger("ccr_mpc")

OUTPUT_ENV = "CCRMPC_OUTPUT_DIR"
DEFAULT_OUTPUT = "ccr_mpc_output"
TS_FORMAT = dataio.DEFAULT_TIMESTAMP_FORMAT


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    choices: tuple | None = None


SCENARIO_OPTS = [
    Opt("steps", int, 2000, "history steps (15 min each)"),
    Opt("test_steps", int, 500, "control-period steps"),
    Opt("start", str, "2010-01-01 00:00:00", "first timestamp (ISO)"),
    Opt("drift_offset", float, 0.0, "ambient offset applied over the control period (degC)"),
    Opt("drift_ramp", float, 0.0, "ambient ramp over the control period (degC/day)"),
]

COMMANDS = {
    "gen-data": SCENARIO_OPTS,
    "train-forecaster": [
        Opt("weather", str, None, "weather CSV (default: <output-dir>/weather.csv)"),
        Opt("kind", str, "gbt-calendar", "forecaster type", ("gbt-calendar", "lstm")),
        Opt("rounds", int, 100, "boosting rounds per state"),
        Opt("lookback", int, 7, "recurrent lookback"),
        Opt("hidden", int, 8, "recurrent hidden size"),
        Opt("epochs", int, 500, "recurrent training epochs"),
        Opt("out", str, "forecaster.json", "output file name"),
    ],
    "train-forward": [
        Opt("data", str, None, "training CSV (default: <output-dir>/forward.csv)"),
        Opt("target", str, "T_room", "target column"),
        Opt("kind", str, "ccr", "forward model type", FORWARD_KINDS),
        Opt("degree", int, BENCHMARK["degree"], "polynomial degree (ccr experts / polynomial)"),
        Opt("clusters", int, 2, "number of CCR clusters"),
        Opt("classifier", str, "gbt", "CCR gate", ("gbt", "random-forest", "mlp")),
        Opt("regressor", str, "polynomial", "CCR experts", ("polynomial", "mlp")),
        Opt("k", int, BENCHMARK["knn_k"], "neighbours for knn"),
        Opt("n_estimators", int, BENCHMARK["rf_trees"], "trees for random-forest"),
        Opt("out", str, None, "output file name (default: <kind>.json)"),
    ],
    "eval": [
        Opt("model", str, None, "model JSON"),
        Opt("data", str, None, "CSV with the model's input columns and the target"),
        Opt("target", str, "T_room", "target column"),
    ],
    "mpc-run": SCENARIO_OPTS + [
        Opt("mode", str, "batch", "open or closed loop", ("batch", "sequential")),
        Opt("optimizer", str, "nelder-mead", "per-step optimizer", ("nelder-mead", "ies")),
        Opt("forward", str, "ccr", "forward model type trained when --model is absent", FORWARD_KINDS),
        Opt("model", str, None, "pre-trained forward model JSON"),
        Opt("forecaster", str, None, "pre-trained forecaster JSON"),
        Opt("forecaster_kind", str, "gbt-calendar", "forecaster trained when --forecaster is absent",
            ("gbt-calendar", "lstm")),
        Opt("horizon", int, None, "steps to control (default: test-steps)"),
        Opt("relearn_period", int, BENCHMARK["relearn_period"], "sequential relearn period R"),
        Opt("relearn_window", int, BENCHMARK["relearn_window"], "sequential relearn window W"),
        Opt("no_plant", bool, False, "batch only: skip plant simulation"),
    ],
    "report": [
        Opt("trajectory", str, None, "trajectory CSV (default: <output-dir>/trajectory.csv)"),
        Opt("stem", str, "report", "output file stem"),
    ],
}

GLOBAL_KEYS = {"seed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ccr-mpc", description="Data-driven MPC with cluster-classify-regress surrogates.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=f"{name} subcommand")
        sp.add_argument("--config", default=None, help="JSON config or manifest; flags override it")
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (default 0)")
        sp.add_argument("--output-dir", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--log-level", default="WARNING")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            if o.type is bool:
                sp.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=o.help)
            else:
                sp.add_argument(flag, type=o.type, choices=o.choices, default=argparse.SUPPRESS,
                                help=f"{o.help} (default {o.default})")
    return p


def _coerce(o: Opt, value):
    if value is None:
        return None
    if o.type is bool:
        if not isinstance(value, bool):
            raise UsageError(f"config key {o.name!r} must be true or false")
        return value
    try:
        v = o.type(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key {o.name!r}: {exc}") from None
    if o.choices and v not in o.choices:
        raise UsageError(f"config key {o.name!r} must be one of {o.choices}")
    return v


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = {o.name: o for o in COMMANDS[command]}
    cfg = {o.name: o.default for o in opts.values()}
    cfg["seed"] = 0
    if ns.config:
        try:
            doc = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if isinstance(doc, dict) and "command" in doc and "config" in doc:
            if doc["command"] != command:
                raise UsageError(f"manifest is for {doc['command']!r}, not {command!r}")
            doc = doc["config"]
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(doc) - set(opts) - GLOBAL_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        for k, v in doc.items():
            cfg[k] = int(v) if k == "seed" else _coerce(opts[k], v)
    for k, v in vars(ns).items():
        if k in opts or k in GLOBAL_KEYS:
            cfg[k] = v
    return cfg


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"ccr_mpc": pkg, "numpy": np.__version__, "pandas": pd.__version__, "python": platform.python_version()}


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list[str]) -> None:
    doc = {"command": command, "config": cfg, "seed": cfg["seed"], "versions": _versions(), "outputs": outputs}
    (out / f"manifest-{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _drift(cfg) -> Drift | None:
    if cfg["drift_offset"] == 0 and cfg["drift_ramp"] == 0:
        return None
    return Drift(0, cfg["drift_offset"], cfg["drift_ramp"])


def _scenario(cfg):
    return make_scenario(cfg["seed"], cfg["steps"], cfg["test_steps"], _drift(cfg), start=cfg["start"])


def _weather_frame(w) -> pd.DataFrame:
    df = pd.DataFrame(w.states, columns=list(w.names))
    df.insert(0, "timestamp", pd.DatetimeIndex(w.timestamps).strftime(TS_FORMAT))
    return df


def _write_frame(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format="%.17g")


def _read_weather(path):
    from .mpc import WeatherHistory

    ds = dataio.load_csv(path, target_column=STATE_NAMES[0], timestamp_column="timestamp",
                         feature_columns=list(STATE_NAMES[1:]))
    return WeatherHistory(ds.timestamps, np.column_stack([ds.targets, ds.features]))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg, out: Path) -> list[str]:
    sc = _scenario(cfg)
    _write_frame(_weather_frame(sc.history), out / "weather.csv")
    _write_frame(_weather_frame(sc.test_weather), out / "weather_test.csv")
    for name, ds in (("forward.csv", sc.forward_data),
                     ("forward_test.csv", build_forward_dataset(sc.test_weather, sc.plant, sc.bounds, cfg["seed"] + 3))):
        df = pd.DataFrame(ds.features, columns=list(ds.feature_names))
        df.insert(0, "timestamp", pd.DatetimeIndex(ds.timestamps).strftime(TS_FORMAT))
        df[ds.target_name] = ds.targets
        _write_frame(df, out / name)
    scen = {"plant": sc.plant.to_dict(), "bounds": sc.bounds.to_dict(), "seed": sc.seed,
            "state_names": list(STATE_NAMES), "control_names": list(CONTROL_NAMES)}
    (out / "scenario.json").write_text(json.dumps(scen, indent=2, sort_keys=True))
    print(f"wrote {len(sc.history)} history and {len(sc.test_weather)} control-period rows to {out}")
    return ["weather.csv", "weather_test.csv", "forward.csv", "forward_test.csv", "scenario.json"]


def cmd_train_forecaster(cfg, out: Path) -> list[str]:
    hist = _read_weather(cfg["weather"] or out / "weather.csv")
    if cfg["kind"] == "gbt-calendar":
        fc = train_forecaster(hist, "gbt-calendar", rounds=cfg["rounds"])
    else:
        fc = train_forecaster(hist, "lstm", lookback=cfg["lookback"], hidden=cfg["hidden"],
                              epochs=cfg["epochs"], seed=cfg["seed"])
    serialize.dump(fc, out / cfg["out"])
    print(f"wrote {out / cfg['out']}")
    return [cfg["out"]]


def _load_table(path, target):
    return dataio.load_csv(path, target_column=target, timestamp_column="timestamp")


def cmd_train_forward(cfg, out: Path) -> list[str]:
    from .ccr import fit_forward_model

    ds = _load_table(cfg["data"] or out / "forward.csv", cfg["target"])
    kind = cfg["kind"]
    if kind == "ccr":
        params = {"n_clusters": cfg["clusters"], "classifier_kind": cfg["classifier"],
                  "regressor_kind": cfg["regressor"], "degree": cfg["degree"], "seed": cfg["seed"]}
    elif kind == "polynomial":
        params = {"degree": cfg["degree"]}
    elif kind == "knn":
        params = {"k": cfg["k"]}
    elif kind == "random-forest":
        params = {"n_estimators": cfg["n_estimators"], "seed": cfg["seed"]}
    elif kind == "mlp":
        params = {"seed": cfg["seed"]}
    else:
        params = {}
    model = fit_forward_model(ds, kind, **params)
    name = cfg["out"] or f"{kind}.json"
    serialize.dump(model, out / name)
    print(f"wrote {out / name}")
    return [name]


def cmd_eval(cfg, out: Path) -> list[str]:
    if not cfg["model"] or not cfg["data"]:
        raise UsageError("eval needs --model and --data")
    model = serialize.load(cfg["model"])
    ds = _load_table(cfg["data"], cfg["target"])
    pred = model.predict(ds.features)
    r2 = metric_r2(ds.targets, pred)
    rmse = float(np.sqrt(np.mean((ds.targets - pred) ** 2)))
    (out / "eval.json").write_text(json.dumps({"r2": r2, "rmse": rmse, "n": ds.n}, indent=2))
    print(f"R2 {r2!r}")
    print(f"RMSE {rmse!r}")
    return ["eval.json"]


def cmd_mpc_run(cfg, out: Path) -> list[str]:
    sc = _scenario(cfg)
    forward = serialize.load(cfg["model"]) if cfg["model"] else benchmark_forward(sc, cfg["forward"])
    if cfg["forecaster"]:
        fc = serialize.load(cfg["forecaster"])
    else:
        fc = train_forecaster(sc.history, cfg["forecaster_kind"])
    steps = cfg["horizon"] or cfg["test_steps"]
    mcfg = benchmark_config(sc, forward, fc, cfg["optimizer"], steps, relearn_period=cfg["relearn_period"],
                            relearn_window=cfg["relearn_window"])
    if cfg["mode"] == "batch":
        traj = run_batch(mcfg, sc.history, None if cfg["no_plant"] else sc.env())
    else:
        traj = run_sequential(mcfg, sc.history, sc.env())
    traj.config.update({"seed": cfg["seed"], "mode": cfg["mode"]})
    traj.write_csv(out / "trajectory.csv")
    s = traj.write_summary(out / "summary.json")
    print(f"discomfort {s['discomfort']!r} (root {s['discomfort_root']!r})")
    return ["trajectory.csv", "summary.json"]


def cmd_report(cfg, out: Path) -> list[str]:
    path = cfg["trajectory"] or out / "trajectory.csv"
    traj = MpcTrajectory.read_csv(path)
    s = emit_report(traj, out, cfg["stem"])
    print(f"discomfort {s['discomfort']!r}")
    return [f"{cfg['stem']}.svg", f"{cfg['stem']}_summary.json"]


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-forecaster": cmd_train_forecaster,
    "train-forward": cmd_train_forward,
    "eval": cmd_eval,
    "mpc-run": cmd_mpc_run,
    "report": cmd_report,
}


def execute(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = resolve(ns.command, ns)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=getattr(logging, str(ns.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(ns.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[ns.command](cfg, out)
        _write_manifest(out, ns.command, cfg, outputs)
    except UsageError as exc:
        print(f"ccr-mpc {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"ccr-mpc {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
