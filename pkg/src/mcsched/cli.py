"""Command line front end: training runs, baselines, bounds and V sweeps.

Every command writes CSV files plus a ``manifest.json`` into ``--out``.
Failures print one JSON error line on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    NotApplicable, RoundRobin, UnconstrainedPolicy, extract_switch_curve, rvi_solve,
    solve_optimal_stopping, switch_curve_csv,
)
from .bound import allocate_rates, build_curves, min_energy_table
from .env import ConfigError, MulticastEnv
from .presets import PRESET_NAMES, ScenarioPreset, UnknownPreset, load_preset
from .trainer import DePolicy, evaluate_policy, train, write_checkpoints

log = logging.getLogger("mcsched")

EXIT_FAILURE = 2


# --------------------------------------------------------------------------
# manifests


def config_hash(doc: dict) -> str:
    """Git-style blob hash of the canonical JSON encoding."""
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    preset: str
    seed: int
    config: dict
    outputs: list = field(default_factory=list)
    started: str = field(default_factory=_now)
    finished: str | None = None

    def write_csv(self, out_dir: Path, name: str, text: str) -> Path:
        path = out_dir / name
        path.write_text(text)
        self.outputs.append(name)
        return path

    def save(self, out_dir: Path) -> Path:
        self.finished = _now()
        doc = {
            "command": self.command,
            "preset": self.preset,
            "seed": self.seed,
            "config_hash": config_hash(self.config),
            "config": self.config,
            "outputs": self.outputs,
            "started": self.started,
            "finished": self.finished,
            "version": __version__,
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


# --------------------------------------------------------------------------
# applicability


def stopping_applies(preset: ScenarioPreset) -> bool:
    env = preset.env
    return (env.n_messages == 1 and env.n_channels == 1
            and np.all(env.duration_table == 1) and np.all(env.penalty_fn == 1))


def rvi_applies(preset: ScenarioPreset) -> bool:
    env = preset.env
    return (env.n_messages == 2 and env.n_channels == 1 and np.all(env.duration_table == 1)
            and np.all(env.penalty_fn == 1) and env.tradeoff_v == 0)


def require(which: str, preset: ScenarioPreset) -> None:
    checks = {"stopping": stopping_applies, "rvi": rvi_applies}
    if which in checks and not checks[which](preset):
        family = {"stopping": "S1", "rvi": "S2/S3 at V=0"}[which]
        raise NotApplicable(f"baseline {which!r} does not apply to preset {preset.name} "
                            f"(only the {family} family)")


# --------------------------------------------------------------------------
# commands


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                              for x in row))
    return "\n".join(lines) + "\n"


def cmd_train(preset: ScenarioPreset, seed: int, out: Path, args) -> RunManifest:
    manifest = RunManifest("train", preset.name, seed, preset.to_dict())
    cfg = preset.train_config()
    agents, trace = train(cfg, seed=seed)
    write_checkpoints(agents, out / "checkpoints")
    manifest.outputs.append("checkpoints/")
    manifest.write_csv(out, "trace.csv", trace.to_csv())
    return manifest


def _stopping_policy(preset: ScenarioPreset, seed: int, horizon: int):
    env = preset.env
    return solve_optimal_stopping(
        float(env.arrival_rates[0]), env.tradeoff_v, float(env.energy_const[0, 0]),
        int(env.duration_table[0, 0]), env.gain_support, 1.0, n_slots=horizon, seed=seed,
    )


def _rvi_policy(preset: ScenarioPreset):
    rates = preset.env.arrival_rates
    return rvi_solve(float(rates[0]), float(rates[1]), preset.rvi_cap or 10)


def cmd_baseline(preset: ScenarioPreset, seed: int, out: Path, args) -> RunManifest:
    which = args.which
    manifest = RunManifest(f"baseline {which}", preset.name, seed, preset.to_dict())
    require(which, preset)
    horizon = args.horizon
    if which == "stopping":
        pol = _stopping_policy(preset, seed, horizon)
        rows = sorted(pol.sweep.items())
        manifest.write_csv(out, "stopping_sweep.csv", _csv(["threshold", "avg_reward"], rows))
        manifest.write_csv(out, "stopping.csv",
                           _csv(["threshold", "avg_reward"], [(pol.threshold, pol.value)]))
    elif which == "rvi":
        pol = _rvi_policy(preset)
        manifest.write_csv(out, "rvi_policy.csv", pol.to_csv())
        manifest.write_csv(out, "rvi_switch_curve.csv", switch_curve_csv(extract_switch_curve(pol)))
        manifest.write_csv(out, "rvi_gain.csv",
                           _csv(["cap", "n_states", "avg_reward", "iterations"],
                                [(pol.cap, pol.n_states, pol.gain, pol.iterations)]))
    elif which == "round_robin":
        m = evaluate_policy(RoundRobin(), MulticastEnv(preset.env, seed=seed), horizon)
        manifest.write_csv(out, "round_robin.csv", _metrics_csv([("round_robin", preset.env.tradeoff_v, m)]))
    else:
        raise NotApplicable(f"unknown baseline {which!r}")
    return manifest


def _bound_rows(preset: ScenarioPreset, v_list, grid_step: float):
    env = preset.env
    method = "exact" if np.all(env.penalty_fn == 1) else "dqn"
    curves = build_curves(env, grid_step, method)
    e = min_energy_table(env.duration_table, env.energy_const, env.max_gain)
    rows = []
    for v in v_list:
        res = allocate_rates(curves, e, env.duration_table, v)
        rows.append((v, res.value, res.energy, res.latency))
    return curves, rows


def cmd_bound(preset: ScenarioPreset, seed: int, out: Path, args) -> RunManifest:
    v_list = args.v_list if args.v_list is not None else [preset.env.tradeoff_v]
    manifest = RunManifest("bound", preset.name, seed, {**preset.to_dict(), "v_list": v_list})
    curves, rows = _bound_rows(preset, v_list, args.grid_step)
    for n, curve in enumerate(curves):
        manifest.write_csv(out, f"latency_rate_{n + 1}.csv", curve.to_csv())
    manifest.write_csv(out, "bound.csv", _csv(["V", "bound", "energy", "latency"], rows))
    return manifest


def _metrics_csv(entries) -> str:
    rows = [(name, v, m.avg_reward, m.avg_latency, m.avg_energy, m.reward_se)
            for name, v, m in entries]
    return _csv(["algorithm", "V", "avg_reward", "avg_latency", "avg_energy", "reward_se"], rows)


def cmd_tradeoff(preset: ScenarioPreset, seed: int, out: Path, args) -> RunManifest:
    v_list = args.v_list if args.v_list is not None else [preset.env.tradeoff_v]
    manifest = RunManifest("tradeoff", preset.name, seed, {**preset.to_dict(), "v_list": v_list})
    horizon = args.horizon
    entries = []
    for v in v_list:
        p = preset.with_overrides({"env": {"tradeoff_v": v}})
        agents, _ = train(p.train_config(), seed=seed)
        entries.append(("de_mappo", v, evaluate_policy(
            DePolicy(agents), MulticastEnv(p.env, seed=seed + 1), horizon)))
        entries.append(("round_robin", v, evaluate_policy(
            RoundRobin(), MulticastEnv(p.env, seed=seed + 1), horizon)))
        if "unconstrained" in p.baselines:
            entries.append(("unconstrained", v, evaluate_policy(
                UnconstrainedPolicy(agents), MulticastEnv(p.env, seed=seed + 1), horizon,
                allow_duplicates=True)))
        if stopping_applies(p):
            pol = _stopping_policy(p, seed, max(horizon, 100_000))
            entries.append(("stopping", v, evaluate_policy(
                pol, MulticastEnv(p.env, seed=seed + 1), horizon)))
        if rvi_applies(p):
            entries.append(("rvi", v, evaluate_policy(
                _rvi_policy(p), MulticastEnv(p.env, seed=seed + 1), horizon)))
    _, bound_rows = _bound_rows(preset, v_list, args.grid_step)
    text = _metrics_csv(entries)
    text += "".join(f"bound,{v!r},{b!r},{lat!r},{en!r},0.0\n" for v, b, en, lat in bound_rows)
    manifest.write_csv(out, "tradeoff.csv", text)
    return manifest


def cmd_verify(args) -> int:
    tests = Path(args.tests)
    if not tests.exists():
        raise FileNotFoundError(f"test directory {tests} not found")
    cmd = [sys.executable, "-m", "pytest", str(tests), "-q", "-m", "not slow"]
    return subprocess.call(cmd)


COMMANDS = {"train": cmd_train, "baseline": cmd_baseline, "bound": cmd_bound,
            "tradeoff": cmd_tradeoff}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcsched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_v=False):
        p.add_argument("--preset", required=True, help=f"one of {', '.join(PRESET_NAMES)}")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--config", type=Path, help="JSON file with preset overrides")
        p.add_argument("--horizon", type=int, default=100_000,
                       help="evaluation slots per policy")
        if with_v:
            p.add_argument("--v-list", type=_floats, help="comma-separated tradeoff weights")
            p.add_argument("--grid-step", type=float, default=0.02,
                           help="rate grid step for latency-rate curves")

    common(sub.add_parser("train", help="train DE-MAPPO and write the reward trace"))
    b = sub.add_parser("baseline", help="solve or evaluate one baseline")
    common(b)
    b.add_argument("--which", required=True, choices=["round_robin", "stopping", "rvi"])
    common(sub.add_parser("bound", help="latency-rate curves and the upper bound"), with_v=True)
    common(sub.add_parser("tradeoff", help="sweep V over all applicable algorithms"), with_v=True)
    v = sub.add_parser("verify", help="run the fast test suites")
    v.add_argument("--tests", default="tests")
    return parser


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _resolve_preset(args) -> ScenarioPreset:
    preset = load_preset(args.preset)
    if args.config:
        preset = preset.with_overrides(json.loads(Path(args.config).read_text()))
    return preset


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args)
        preset = _resolve_preset(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = COMMANDS[args.command](preset, args.seed, out, args)
        path = manifest.save(out)
        log.info("wrote %s", path)
        return 0
    except (UnknownPreset, NotApplicable, ConfigError, OSError, ValueError,
            RuntimeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc).strip("'\""),
               "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
