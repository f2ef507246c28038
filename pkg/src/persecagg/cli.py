"""Command-line front end: single rounds, sweeps, the threshold feasibility sweep and transcript replay."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import harness, workload
from .adversary import AdversaryConfig, AdversaryConfigError
from .ledger import COUNTERS
from .params import ParamError, derive_params, sweep_parameter_space

OUT_ENV = "PERSECAGG_OUT"
SWEEP_AXES = ("clients", "mask_rate", "dropout_rate", "t")
METRICS_HEADER = ["round", "role", "phase", "counter", "value"]
ATTACK_HEADER = ["round", "index", "server_view", "true_sum", "honest_count", "removable", "disclosed", "leaked"]
FEASIBILITY_HEADER = ["n_decryptors", "delta_d", "eta_d", "ell", "delta_max", "recovery_feasible", "security_holds"]

DEFAULTS = {
    "params": {
        "n_decryptors": 12, "t": 3, "eta_c": 0.0, "eta_d": 0.0, "delta_d": 0.0,
        "n_neighbors": None, "width": 32, "frac_bits": 16, "kappa": 128, "variant": "floor",
    },
    "workload": {"n_clients": 64, "dim": 65536, "mask_rate": 0.1, "sparsity": 0.95, "overlap": "uniform"},
    "adversary": {"behavior": "honest"},
    "seeds": {"master": 0, "setup": None, "schedule": None},
    "rounds": 1,
    "sweep": {"axis": None, "values": []},
}

# where a params-level validation error lives in the config file
_FIELD_PATHS = {"n_clients": "workload.n_clients", "dim": "workload.dim", "scope_size": "workload.mask_rate"}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    """``a.b.c=value`` with the value parsed as YAML."""
    path, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(assignment, "override must look like section.key=value")
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(path: str | None, overrides=()) -> dict:
    raw = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


@dataclass
class Experiment:
    config: dict
    params: object
    adversary: AdversaryConfig

    @property
    def workload(self) -> dict:
        return self.config["workload"]


def resolve(cfg: dict) -> Experiment:
    """Validate the whole config; every failure names its field path."""
    for section in ("params", "workload", "adversary", "seeds"):
        if not isinstance(cfg.get(section), dict):
            raise ConfigError(section, "section must be a mapping")
    unknown = set(cfg) - set(DEFAULTS) - {"output"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    w, p = cfg["workload"], cfg["params"]
    for key in set(w) - set(DEFAULTS["workload"]):
        raise ConfigError(f"workload.{key}", "unknown field")
    for key in set(p) - set(DEFAULTS["params"]):
        raise ConfigError(f"params.{key}", "unknown field")
    if not 0 < w["mask_rate"] <= 1:
        raise ConfigError("workload.mask_rate", "must be in (0, 1]")
    if not 0 <= w["sparsity"] < 1:
        raise ConfigError("workload.sparsity", "must be in [0, 1)")
    if w["overlap"] not in workload.OVERLAP_MODELS:
        raise ConfigError("workload.overlap", f"must be one of {workload.OVERLAP_MODELS}")
    if not isinstance(cfg["rounds"], int) or cfg["rounds"] < 1:
        raise ConfigError("rounds", "must be a positive integer")
    try:
        params = derive_params(
            w["n_clients"], p["n_decryptors"], p["t"], p["eta_c"], p["eta_d"], p["delta_d"],
            n_neighbors=p["n_neighbors"], dim=w["dim"], scope_size=max(1, math.floor(w["mask_rate"] * w["dim"])),
            width=p["width"], frac_bits=p["frac_bits"], kappa=p["kappa"], variant=p["variant"],
        )
    except ParamError as exc:
        path = _FIELD_PATHS.get(exc.field, f"params.{exc.field}")
        raise ConfigError(path, str(exc).split(": ", 1)[-1]) from None
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None
    try:
        adv = AdversaryConfig.from_dict(cfg["adversary"]).validate(params)
    except (AdversaryConfigError, TypeError) as exc:
        raise ConfigError("adversary", str(exc)) from None
    return Experiment(cfg, params, adv)


def make_round_updates(exp: Experiment, master: int, tau: int):
    w = exp.workload
    rng = np.random.default_rng(harness.derive_seed(master, "updates", tau) % 2**63)
    return workload.make_updates(w["n_clients"], w["dim"], w["sparsity"], rng, model=w["overlap"],
                                 frac_bits=exp.params.frac_bits, width=exp.params.width)


def play(exp: Experiment, tau: int) -> harness.RoundResult:
    seeds = exp.config["seeds"]
    return harness.run_round(
        exp.params, make_round_updates(exp, seeds["master"], tau), exp.adversary, seeds["master"],
        tau=tau, schedule_seed=seeds.get("schedule"), setup_seed=seeds.get("setup"),
    )


def summarize(exp: Experiment, result: harness.RoundResult, tau: int, wall: float) -> dict:
    out = result.output
    scope_revealed = None
    if out is not None:
        scope_revealed = float(np.mean(out.revealed[harness.default_scope(exp.params).indices]))
    summary = {
        "round": tau,
        "status": "completed" if out is not None else ("aborted" if result.abort else "adversarial"),
        "abort": None if result.abort is None else {"phase": result.abort.phase, "cause": result.abort.cause},
        "matches_oracle": result.matches_oracle() if out is not None else None,
        "scope_revealed_fraction": scope_revealed,
        "transcript_sha256": result.transcript.digest(),
        "decryptors": result.info["decryptors"],
        "d1": result.info["d1"],
        "d2": result.info["d2"],
        "ledger": result.ledger.flat(),
        "wall_clock_seconds_informational": round(wall, 4),
    }
    if result.outcome is not None:
        summary["attack"] = {
            "leaks": len(result.outcome.leaks()),
            "recovered_decryptors": sorted(result.outcome.recovered_decryptors),
            "honest_decryptors": sorted(result.outcome.honest_decryptors),
        }
    return summary


def output_dir(arg: str | None, cfg: dict) -> Path:
    path = Path(arg or cfg.get("output", {}).get("dir") or os.environ.get(OUT_ENV) or "persecagg-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def transcript_header(exp: Experiment, tau: int) -> dict:
    return {"config": exp.config, "tau": tau}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    exp = resolve(cfg)
    out = output_dir(args.out, cfg)
    metrics, attack, rounds = [], [], []
    status = 0
    for tau in range(1, cfg["rounds"] + 1):
        start = time.perf_counter()
        result = play(exp, tau)
        rounds.append(summarize(exp, result, tau, time.perf_counter() - start))
        metrics += [(tau, r, p, c, v) for r, p, c, v in result.ledger.rows()]
        if result.outcome is not None:
            attack += [(tau, r.index, "" if r.server_view is None else r.server_view, r.true_sum,
                        r.honest_count, r.removable, r.disclosed, r.leaked) for r in result.outcome.rows]
        if args.transcript:
            result.transcript.header = transcript_header(exp, tau)
            (out / f"transcript_r{tau}.bin").write_bytes(result.transcript.to_bytes())
        if result.abort is not None:
            print(f"round {tau} aborted in {result.abort.phase}: {result.abort.cause}", file=sys.stderr)
            status = 2
    _write_csv(out / "metrics.csv", METRICS_HEADER, metrics)
    if attack:
        _write_csv(out / "attack.csv", ATTACK_HEADER, attack)
    summary = {"config": cfg, "params": exp.params.to_dict(), "rounds": rounds}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str), encoding="utf-8")
    print(f"wrote {out / 'summary.json'}")
    return status


def _sweep_point(cfg: dict, axis: str, value) -> dict:
    cfg = copy.deepcopy(cfg)
    if axis == "clients":
        cfg["workload"]["n_clients"] = int(value)
    elif axis == "mask_rate":
        cfg["workload"]["mask_rate"] = float(value)
    elif axis == "t":
        cfg["params"]["t"] = int(value)
    elif axis == "dropout_rate":
        cfg["params"]["delta_d"] = float(value)
        n = math.floor(Fraction(value).limit_denominator(10**6) * cfg["params"]["n_decryptors"])
        cfg["adversary"] = dict(cfg["adversary"], dropouts={p: "unmask" for p in range(n)})
    return cfg


def sweep_rows(cfg: dict, axis: str, values) -> list[dict]:
    rows = []
    for value in values:
        row = {"axis": axis, "value": value}
        try:
            exp = resolve(_sweep_point(cfg, axis, value))
            result = play(exp, 1)
            s = summarize(exp, result, 1, 0.0)
            row.update(status=s["status"], abort_cause="" if s["abort"] is None else s["abort"]["cause"],
                       revealed_fraction=s["scope_revealed_fraction"], matches_oracle=s["matches_oracle"])
            row.update(result.ledger.flat())
        except (ConfigError, ValueError) as exc:
            row.update(status="invalid", abort_cause=str(exc))
        rows.append(row)
    return rows


def sweep_header() -> list[str]:
    cells = [f"{r}.{p}.{c}" for r in ("client", "decryptor", "server") for p in ("report", "unmask", "droprcv")
             for c in COUNTERS]
    return ["axis", "value", "status", "abort_cause", "revealed_fraction", "matches_oracle", *cells]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set)
    axis = args.axis or cfg["sweep"]["axis"]
    values = args.values or cfg["sweep"]["values"]
    if axis not in SWEEP_AXES:
        raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}")
    resolve(cfg)
    out = output_dir(args.out, cfg)
    header = sweep_header()
    rows = sweep_rows(cfg, axis, [yaml.safe_load(str(v)) for v in values])
    _write_csv(out / "sweep.csv", header, [[row.get(h, "") for h in header] for row in rows])
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} points)")
    return 0


def cmd_theorem_sweep(args) -> int:
    rows, bad = sweep_parameter_space(range(args.d_min, args.d_max + 1), Fraction(args.step).limit_denominator(10**6),
                                      args.variant)
    table = [(r.n_decryptors, float(r.delta_d), float(r.eta_d), r.ell, r.delta_max,
              r.recovery_feasible, r.security_holds) for r in rows]
    target = Path(args.out) if args.out else output_dir(None, {}) / "theorem_sweep.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(target, FEASIBILITY_HEADER, table)
    print(f"wrote {target}: {len(rows)} rows, {len(bad)} infeasible")
    return 0


def cmd_replay(args) -> int:
    recorded = harness.Transcript.from_bytes(Path(args.transcript).read_bytes())
    try:
        cfg, tau = recorded.header["config"], recorded.header["tau"]
    except KeyError:
        raise ConfigError("transcript", "header carries no config; re-run with --transcript") from None
    exp = resolve(cfg)
    diffs = harness.replay(recorded, lambda: play(exp, tau))
    for line in diffs:
        print(line)
    print("identical" if not diffs else f"{len(diffs)} differences")
    return 0 if not diffs else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="persecagg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="play one or more rounds from a config")
    run.add_argument("config", nargs="?")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--out")
    run.add_argument("--transcript", action="store_true", help="write replayable transcript files")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="one round per value of a sweep axis")
    sweep.add_argument("config", nargs="?")
    sweep.add_argument("--axis", choices=SWEEP_AXES)
    sweep.add_argument("--values", nargs="+")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    thm = sub.add_parser("theorem-sweep", help="check the share-counting inequalities over a grid")
    thm.add_argument("--d-min", type=int, default=3)
    thm.add_argument("--d-max", type=int, default=200)
    thm.add_argument("--step", default="0.02")
    thm.add_argument("--variant", choices=("floor", "ceil"), default="floor")
    thm.add_argument("--out")
    thm.set_defaults(func=cmd_theorem_sweep)

    rep = sub.add_parser("replay", help="re-execute a transcript and diff")
    rep.add_argument("transcript")
    rep.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
