"""Command-line front end.

Exit codes: 0 success, 1 failed oracle-check, 2 config or usage error,
3 law contract violation (including a failed validate-law), 4 resource guard.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from .analysis import limit_stats, oracle_check, theorem1_compare
from .config import Scenario, load_scenario
from .engine import initial_upsilon, run_ensemble, run_trajectory
from .errors import (ConfigError, ExtinctStateError, LawContractError, NotEnumerableError,
                     ResourceGuardError)
from .meanfield import default_guesses, find_fixed_points, integrate_ode, write_solution_csv
from .offspring import validate_a1
from .state import PopulationState

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_CONTRACT, EXIT_GUARD = 0, 1, 2, 3, 4

DEFAULT_SCHEDULE = [math.ceil(100 * 2 ** m) for m in range(7)]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}") if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round12(obj.item())
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_round12(payload), indent=2, sort_keys=True) + "\n")


def _tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _schedule(text: str | None) -> list[int]:
    if text is None:
        return DEFAULT_SCHEDULE
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--schedule must be comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError("--schedule needs positive epochs")
    return values


def _probe_states(scn: Scenario) -> list[PopulationState]:
    init = scn.config.initial
    probes = [init, PopulationState(1, 1, 1, 1), PopulationState(10, 1, 12, 3),
              PopulationState(1, 10, 3, 12)]
    return list(dict.fromkeys(probes))


def _cmd_simulate(args, scn, stem):
    traj = run_trajectory(scn.config, 0)
    out = stem.with_suffix(".csv")
    with open(out, "w", newline="") as fh:
        traj.write_csv(fh)
    return [out], EXIT_OK


def _cmd_ensemble(args, scn, stem):
    summary = run_ensemble(scn.config, parallelism=args.parallelism)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        summary.write_csv(fh)
    payload = summary.to_dict()
    law = scn.config.law_object
    fps = None
    if law.autonomous:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fps = [fp for fp in find_fixed_points(law, default_guesses(law))
                   if fp.classification == "Stable"]
    payload["limit"] = limit_stats(summary, fps).to_dict()
    _write_json(json_path, payload)
    return [csv_path, json_path], EXIT_OK


def _cmd_ode(args, scn, stem):
    init = initial_upsilon(scn.config.initial)
    sol = integrate_ode(init, 1.0, args.T if args.T is not None else 10.0,
                        args.step or 1e-3, scn.config.law_object)
    out = stem.with_suffix(".csv")
    with open(out, "w", newline="") as fh:
        write_solution_csv(sol, fh)
    return [out], EXIT_OK


def _cmd_fixed_points(args, scn, stem):
    law = scn.config.law_object
    if not law.autonomous:
        raise ConfigError("fixed-points needs a proportion-dependent (autonomous) law")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fps = find_fixed_points(law, default_guesses(law))
    json_path, csv_path = stem.with_suffix(".json"), stem.with_suffix(".csv")
    _write_json(json_path, {"fixed_points": [fp.to_dict() for fp in fps],
                            "skipped_guesses": [str(w.message) for w in caught]})
    with open(csv_path, "w", newline="") as fh:
        fh.write("psi_c,theta_c,psi_a,theta_a,beta_c,residual,classification\n")
        for fp in fps:
            beta = float("nan") if fp.beta_c is None else fp.beta_c
            fh.write(",".join(f"{v:.12g}" for v in (*fp.state, beta, fp.residual)))
            fh.write(f",{fp.classification}\n")
    return [json_path, csv_path], EXIT_OK


def _cmd_compare(args, scn, stem):
    traj = run_trajectory(scn.config, 0)
    report = theorem1_compare(traj, scn.config.law_object, _schedule(args.schedule),
                              args.T if args.T is not None else 2.0, args.step or 1e-3)
    json_path, csv_path = stem.with_suffix(".json"), stem.with_suffix(".csv")
    _write_json(json_path, report.to_dict())
    with open(csv_path, "w", newline="") as fh:
        report.write_csv(fh)
    return [json_path, csv_path], EXIT_OK


def _cmd_oracle_check(args, scn, stem):
    draws = args.draws if args.draws is not None else 100_000
    rng = np.random.default_rng(scn.config.base_seed)
    report = oracle_check(scn.config.initial, scn.config.law_object, scn.config.lam, draws, rng)
    out = stem.with_suffix(".json")
    _write_json(out, report.to_dict())
    return [out], EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _cmd_validate_law(args, scn, stem):
    draws = args.draws if args.draws is not None else 10_000
    rng = np.random.default_rng(scn.config.base_seed)
    report = validate_a1(scn.config.law_object, _probe_states(scn), draws, rng)
    out = stem.with_suffix(".json")
    _write_json(out, report.to_dict())
    return [out], EXIT_CONTRACT if report.status == "fail" else EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "ensemble": _cmd_ensemble,
    "ode": _cmd_ode,
    "fixed-points": _cmd_fixed_points,
    "compare": _cmd_compare,
    "oracle-check": _cmd_oracle_check,
    "validate-law": _cmd_validate_law,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpsa", description="Two-type branching processes and their "
                                              "stochastic-approximation limits.")
    parser.add_argument("--version", action="version", version=_tool_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="overrides [run] base_seed")
        p.add_argument("--reps", type=int, help="overrides [run] replications")
        p.add_argument("--horizon", type=int, help="overrides [run] horizon_epochs")
        p.add_argument("--schedule", help="comma-separated window anchors (compare)")
        p.add_argument("--T", type=float, help="window or integration length")
        p.add_argument("--step", type=float, help="RK4 step")
        p.add_argument("--draws", type=int, help="draws for oracle-check / validate-law")
        p.add_argument("--parallelism", type=int, default=1, help="ensemble workers")
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    started = time.perf_counter()
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exit_:
            return EXIT_OK if exit_.code in (0, None) else EXIT_CONFIG
        if args.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        scn = load_scenario(args.config).with_overrides(
            seed=args.seed, replications=args.reps, horizon=args.horizon)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = scn.config.base_seed
        stem = out_dir / f"{args.command}-{scn.hash8}-{seed}"
        outputs, code = COMMANDS[args.command](args, scn, stem)
    except (ConfigError, NotEnumerableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LawContractError, ExtinctStateError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = stem.parent / f"{stem.name}.manifest.json"
    _write_json(manifest, {
        "config_hash": scn.hash8,
        "subcommand": args.command,
        "seed": seed,
        "tool_version": _tool_version(),
        "outputs": [p.name for p in outputs],
        "exit_code": code,
        "wall_seconds": time.perf_counter() - started,
    })
    return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
