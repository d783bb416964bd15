#!/usr/bin/env python3
"""
Process-matrix tomography for the two-party quantum SWITCH.

Usage:
    python src/switch_tomography.py ideal --preset switch-y- --out w.json
    python src/switch_tomography.py settings --family restricted --out settings.csv
    python src/switch_tomography.py simulate --process switch-y- --family full --shots 1600 --seed 7 > counts.csv
    python src/switch_tomography.py reconstruct --counts counts.csv --impose-future-x
    python src/switch_tomography.py witness --process switch-y- --family full --noise white --definition convex
    python src/switch_tomography.py robustness --process switch-y- --noise generalized --definition extended
    python src/switch_tomography.py worst-case --counts counts.csv --witness g.json --eps-grid 0.005:0.015:0.0005
    python src/switch_tomography.py game --visibility-sq 0.97
    python src/switch_tomography.py report --counts counts.csv --witness g.json --trials 20 --seed 1

Count tables can be piped: ``simulate ... | reconstruct`` (``-`` is stdin/stdout).
Every run writes manifest.json into the output directory (--output-dir, or
$SWITCH_TOMOGRAPHY_OUTPUT_DIR, or ./data/runs).

Exit codes:
    0: Success
    1: Invalid input, configuration or file
    2: Solver failure
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import jsonschema
import numpy as np
import pandas as pd
import yaml

from core.causal import certificate_residuals, evaluate_witness, load_witness, optimal_witness, robustness, save_witness
from core.metrics import MonteCarloConfig, fidelity, game_success, monte_carlo_errorbars, pauli_game
from core.models import LayoutError, NotHermitianError, SolverError, TomographyError, ValidationError
from core.procmat import PRESETS, ProcessMatrix, preset, switch_simplified, validity_projector
from core.qsys import SWITCH_LAYOUT, load_matrix, save_matrix
from core.recon import (
    crossing_epsilon, default_eps_grid, parse_eps_grid, probability_comparison, reconstruct, sweep_worst_case,
)
from core.runconfig import RunConfig, output_lock, write_manifest
from core.simlab import DEFAULT_JITTER_DEG, CountTable, ProbabilityTable, exact_probabilities, normalize, read_table, simulate_counts, stat_error, write_table
from core.tomoset import settings_frame

logger = logging.getLogger("switch_tomography")

STDIO = "-"
INPUT_ERRORS = (
    ValidationError, LayoutError, NotHermitianError, jsonschema.ValidationError, FileNotFoundError,
    yaml.YAMLError, json.JSONDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError,
)


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors as validation failures (exit code 1)."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (flags override it)")
    common.add_argument("--output-dir", dest="output_dir", help="Directory for outputs and manifest.json")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--max-iter", dest="max_iter", type=int, help="Solver iteration limit")
    common.add_argument("--eps", type=float, help="Solver absolute and relative tolerance")

    def family(p):
        p.add_argument("--family", choices=["full", "restricted"], help="Setting family")

    def process(p, flag="--process"):
        p.add_argument(flag, dest="process", help=f"Preset ({', '.join(PRESETS)}) or matrix file")

    def causal(p):
        p.add_argument("--noise", dest="noise_type", choices=["white", "generalized"], help="Noise normalization")
        p.add_argument("--definition", choices=["convex", "extended"], help="Causal separability definition")

    parser = _ArgumentParser(description="Process-matrix tomography for the quantum SWITCH")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ideal", parents=[common], help="Write an ideal process matrix")
    process(p, "--preset")
    p.add_argument("--out", help="Matrix file (default <output-dir>/ideal.json)")

    p = sub.add_parser("settings", parents=[common], help="List the setting operators of a family")
    family(p)
    p.add_argument("--no-hash", action="store_true", help="Skip operator hashes")
    p.add_argument("--out", default=STDIO, help="CSV file or - for stdout")

    p = sub.add_parser("simulate", parents=[common], help="Simulate a count table")
    family(p)
    process(p)
    p.add_argument("--shots", type=int, help="Events per configuration (omit for exact probabilities)")
    p.add_argument("--jitter-deg", dest="jitter_deg", type=float, help="Waveplate angle jitter in degrees (default 1 when sampling)")
    p.add_argument("--seed", type=int, help="Random seed")
    p.add_argument("--out", default=STDIO, help="CSV file or - for stdout")

    p = sub.add_parser("reconstruct", parents=[common], help="Reconstruct a process matrix from a table")
    family(p)
    p.add_argument("--counts", default=STDIO, help="Count or probability CSV, - for stdin")
    p.add_argument("--impose-future-x", dest="impose_future_x", action="store_true", default=None,
                   help="Add Tr(W X_F) = 0")
    p.add_argument("--reference", help="Preset or matrix file to report the fidelity against")
    p.add_argument("--out", help="Matrix file (default <output-dir>/reconstructed.json)")

    p = sub.add_parser("witness", parents=[common], help="Optimal causal witness of a process")
    family(p)
    process(p)
    causal(p)
    p.add_argument("--out", help="Witness JSON (matrix stored next to it)")

    p = sub.add_parser("robustness", parents=[common], help="Robustness of causal non-separability")
    family(p)
    process(p)
    causal(p)
    p.add_argument("--out", help="Robustness report JSON")

    p = sub.add_parser("worst-case", parents=[common], help="Worst-case witness sweep over epsilon")
    p.add_argument("--counts", default=STDIO, help="Count or probability CSV, - for stdin")
    p.add_argument("--witness", action="append", required=True, help="Witness JSON (repeatable)")
    p.add_argument("--eps-grid", dest="eps_grid", help="start:end:step (default: residual to 0.015)")
    p.add_argument("--out", default=STDIO, help="CSV file or - for stdout")

    p = sub.add_parser("game", parents=[common], help="Commutation game success probability")
    p.add_argument("--visibility-sq", dest="visibility_sq", type=float, help="Control visibility v^2 (default 0.97)")
    p.add_argument("--out", help="Game report JSON")

    p = sub.add_parser("report", parents=[common], help="Reconstruction, residual and worst-case report tables")
    p.add_argument("--counts", default=STDIO, help="Count or probability CSV, - for stdin")
    process(p, "--reference")
    p.add_argument("--witness", action="append", default=[], help="Witness JSON (repeatable)")
    p.add_argument("--impose-future-x", dest="impose_future_x", action="store_true", default=None,
                   help="Add Tr(W X_F) = 0")
    p.add_argument("--eps-grid", dest="eps_grid", help="start:end:step (default: residual to 0.015)")
    p.add_argument("--trials", type=int, help="Monte Carlo trials for error bars (omit to skip)")
    p.add_argument("--shots", type=int, help="Events per configuration in Monte Carlo trials (default 1600)")
    p.add_argument("--jitter-deg", dest="jitter_deg", type=float, help="Waveplate jitter in Monte Carlo trials (default 1)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed")
    return parser


def _overrides(args) -> dict:
    noise = {key: getattr(args, key, None) for key in ("shots", "jitter_deg", "visibility_sq")}
    solver = {"max_iter": args.max_iter}
    if args.eps is not None:
        solver.update(eps_abs=args.eps, eps_rel=args.eps)
    return {
        "family": getattr(args, "family", None),
        "process": getattr(args, "process", None),
        "noise": noise,
        "noise_type": getattr(args, "noise_type", None),
        "definition": getattr(args, "definition", None),
        "impose_future_x": getattr(args, "impose_future_x", None),
        "eps_grid": getattr(args, "eps_grid", None),
        "seed": getattr(args, "seed", None),
        "trials": getattr(args, "trials", None),
        "solver": solver,
        "output_dir": args.output_dir,
    }


def load_process(config: RunConfig, default: str = "switch-y-") -> ProcessMatrix:
    """The configured process: custom control amplitudes, a preset, or a matrix file."""
    control = config.get("control")
    if control is not None:
        return switch_simplified([complex(re, im) for re, im in control])
    return _process_from(config.get("process", default))


def _process_from(name: str) -> ProcessMatrix:
    if name in PRESETS:
        return preset(name)
    if not os.path.exists(name):
        raise ValidationError(f"'{name}' is neither a preset ({', '.join(PRESETS)}) nor a matrix file")
    matrix, layout = load_matrix(name)
    if layout != SWITCH_LAYOUT:
        raise LayoutError(f"Matrix file {name} has layout {layout}, expected {SWITCH_LAYOUT}")
    return ProcessMatrix(matrix, layout, os.path.basename(name))


def _read_probabilities(path, family=None):
    """Probability table (and the count table it came from, if any) from a file or stdin."""
    table = read_table(sys.stdin if path == STDIO else path, family)
    if isinstance(table, CountTable):
        return normalize(table), table
    return table, None


def _output_path(config: RunConfig, path: Optional[str], default_name: str) -> str:
    return path or os.path.join(config.output_dir, default_name)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _write_json(config: RunConfig, path: str, payload: dict) -> str:
    with output_lock(config.output_dir):
        with open(path, mode="w", encoding="utf-8") as file:
            json.dump(payload, file, indent=2, sort_keys=True)
    return path


def cmd_ideal(config: RunConfig, args) -> List[str]:
    w = load_process(config)
    report = w.check(validity_projector())
    if not report.valid:
        raise ValidationError(f"Process '{w.name}' is not valid: {report}")
    path = _output_path(config, args.out, "ideal.json")
    with output_lock(config.output_dir):
        save_matrix(path, w.matrix, w.layout)
    _emit({"process": w.name, "path": path, "trace": w.trace, "min_eigenvalue": report.min_eigenvalue,
           "subspace_residual": report.subspace_residual})
    return [path]


def cmd_settings(config: RunConfig, args) -> List[str]:
    frame = settings_frame(config.family, with_hash=not args.no_hash)
    if args.out == STDIO:
        frame.to_csv(sys.stdout, index=False)
        return []
    with output_lock(config.output_dir):
        frame.to_csv(args.out, index=False)
    return [args.out]


def cmd_simulate(config: RunConfig, args) -> List[str]:
    w = load_process(config)
    counts = simulate_counts(w, config.family, config.noise_model(), seed=config.seed)
    table = counts if counts.shots is not None else ProbabilityTable(counts.family, counts.counts)
    if args.out == STDIO:
        write_table(sys.stdout, table)
        return []
    with output_lock(config.output_dir):
        write_table(args.out, table)
    return [args.out]


def cmd_reconstruct(config: RunConfig, args) -> List[str]:
    family = config.get("family")
    p, counts = _read_probabilities(args.counts, family)
    result = reconstruct(p, impose_future_x=bool(config.get("impose_future_x", False)),
                         options=config.solver_options())
    path = _output_path(config, args.out, "reconstructed.json")
    with output_lock(config.output_dir):
        save_matrix(path, result.process.matrix, SWITCH_LAYOUT)
    payload = result.to_dict()
    payload["matrix"] = path
    if counts is not None:
        payload["stat_error"] = stat_error(p, counts)
    if args.reference:
        payload["fidelity"] = fidelity(result.process, _process_from(args.reference))
    report_path = _write_json(config, os.path.join(config.output_dir, "reconstruction.json"), payload)
    _emit(payload)
    return [path, report_path]


def cmd_witness(config: RunConfig, args) -> List[str]:
    w = load_process(config)
    g = optimal_witness(w, config.family, config.noise_type, config.definition, config.solver_options())
    payload = {"process": w.name, "family": g.family.value, "noise": g.noise.value,
               "definition": g.definition.value, "value": g.value}
    outputs = []
    if args.out:
        with output_lock(config.output_dir):
            save_witness(args.out, g)
        payload["path"] = args.out
        outputs.append(args.out)
    _emit(payload)
    return outputs


def cmd_robustness(config: RunConfig, args) -> List[str]:
    w = load_process(config)
    result = robustness(w, config.noise_type, config.definition, config.family, config.solver_options())
    payload = {"process": w.name, "family": result.family.value, "noise": result.noise.value,
               "definition": result.definition.value, "r": result.r,
               "certificate_residuals": certificate_residuals(result, w), "diagnostics": result.diagnostics}
    outputs = []
    if args.out:
        outputs.append(_write_json(config, args.out, payload))
    _emit(payload)
    return outputs


def _eps_grid(config: RunConfig, r: float) -> np.ndarray:
    text = config.get("eps_grid")
    return parse_eps_grid(text) if text else default_eps_grid(r)


def cmd_worst_case(config: RunConfig, args) -> List[str]:
    witnesses = [load_witness(path) for path in args.witness]
    p, _ = _read_probabilities(args.counts, witnesses[0].family)
    options = config.solver_options()
    r = reconstruct(p, options=options).residual
    sweep = sweep_worst_case(p, {os.path.basename(path): g for path, g in zip(args.witness, witnesses)},
                             _eps_grid(config, r), options, min_residual=r)
    if args.out == STDIO:
        sweep.to_csv(sys.stdout, index=False)
        return []
    with output_lock(config.output_dir):
        sweep.to_csv(args.out, index=False)
    return [args.out]


def cmd_game(config: RunConfig, args) -> List[str]:
    visibility_sq = config.get("noise", {}).get("visibility_sq", 0.97)
    result = game_success(pauli_game(visibility_sq))
    payload = {"visibility_sq": visibility_sq, **result.to_dict()}
    outputs = []
    if args.out:
        outputs.append(_write_json(config, args.out, payload))
    _emit(payload)
    return outputs


def cmd_report(config: RunConfig, args) -> List[str]:
    witnesses = [load_witness(path) for path in args.witness]
    p, counts = _read_probabilities(args.counts, witnesses[0].family if witnesses else None)
    reference = load_process(config)
    options = config.solver_options()
    result = reconstruct(p, impose_future_x=bool(config.get("impose_future_x", False)), options=options)

    comparison = probability_comparison(result.process, p)
    comparison["p_ideal"] = exact_probabilities(reference, p.family).probabilities
    outputs = [os.path.join(config.output_dir, name) for name in ("probabilities.csv", "report.json")]
    payload = {
        "family": p.family.value,
        "reference": reference.name,
        "fidelity": fidelity(result.process, reference),
        "residual": result.residual,
        "witness_values": {os.path.basename(path): evaluate_witness(g, result.process)
                           for path, g in zip(args.witness, witnesses)},
    }
    if counts is not None:
        payload["stat_error"] = stat_error(p, counts)
    sweep = None
    if witnesses:
        labels = {os.path.basename(path): g for path, g in zip(args.witness, witnesses)}
        sweep = sweep_worst_case(p, labels, _eps_grid(config, result.residual), options, min_residual=result.residual)
        payload["crossing_epsilon"] = {label: crossing_epsilon(sweep, label) for label in labels}
        outputs.append(os.path.join(config.output_dir, "worst_case.csv"))
    trials = None
    if config.get("trials"):
        noise = config.get("noise", {})
        mc_config = MonteCarloConfig(
            process=reference, family=p.family, shots=noise.get("shots", 1600),
            jitter_deg=noise.get("jitter_deg", DEFAULT_JITTER_DEG), trials=config.get("trials"), seed=config.seed or 0,
            impose_future_x=bool(config.get("impose_future_x", False)),
            witnesses=[(g.noise, g.definition) for g in witnesses])
        trials, payload["monte_carlo"] = monte_carlo_errorbars(mc_config, options)
        outputs.append(os.path.join(config.output_dir, "monte_carlo.csv"))
    with output_lock(config.output_dir):
        comparison.to_csv(outputs[0], index=False)
        with open(outputs[1], mode="w", encoding="utf-8") as file:
            json.dump(payload, file, indent=2, sort_keys=True)
        if sweep is not None:
            sweep.to_csv(outputs[2], index=False)
        if trials is not None:
            trials.to_csv(outputs[-1], index=False)
    _emit(payload)
    return outputs


COMMANDS = {
    "ideal": cmd_ideal,
    "settings": cmd_settings,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "witness": cmd_witness,
    "robustness": cmd_robustness,
    "worst-case": cmd_worst_case,
    "game": cmd_game,
    "report": cmd_report,
}


def _fail(error: Exception, exit_code: int) -> int:
    payload = {"error": type(error).__name__, "message": str(getattr(error, "message", error)), "exit_code": exit_code}
    print(json.dumps(payload), file=sys.stderr)
    return exit_code


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        config = RunConfig.from_sources(args.command, args.config, _overrides(args))
        logger.info(f"Running {config}")
        outputs = COMMANDS[args.command](config, args)
        write_manifest(config, outputs)
        return 0
    except SolverError as e:
        return _fail(e, 2)
    except INPUT_ERRORS as e:
        return _fail(e, 1)
    except TomographyError as e:
        return _fail(e, 1)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
