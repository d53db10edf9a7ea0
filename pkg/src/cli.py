#!/usr/bin/env python3
# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Command line for the FNS elasticity solvers.

Subcommands: gen-mesh, gen-data, train, solve, bench, lfa, spectrum, plot. Any flag may also be
given in a configuration file passed with --config; flags on the command line win.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Set

from fns.v0.config import (
    DEFAULTS,
    ConfigError,
    Error,
    load_config_file,
    parse_modes,
    resolve_options,
)
from fns.v0.datasets import DatasetSpec, export_dataset, load_dataset, read_manifest
from fns.v0.lfa import LfaConfig, shear_damping, shear_factor, smoothing_factor_sweep
from fns.v0.mesh import (
    build_structured_box,
    build_structured_square,
    build_unstructured_2d,
    save_mesh,
)
from fns.v0.smoother import JacobiConfig
from fns.v0.solver import HybridConfig
from fns.v0.trainer import TrainConfig, build_contexts, create_model, train

from workbench import BenchSpec, Workbench, spectrum_norms

logger = logging.getLogger(__name__)

Options = Dict[str, Any]
Handler = Callable[[Options, Set[str], Workbench], int]

# Flags of every subcommand, in the order they are listed in --help.
COMMANDS = {
    "gen-mesh": ["shape", "mesh", "resolution", "seed", "out"],
    "gen-data": [
        "family",
        "samples",
        "mesh",
        "resolution",
        "seed",
        "test-fraction",
        "systems",
        "out",
    ],
    "train": [
        "dataset",
        "variant",
        "scale",
        "modes",
        "sweeps",
        "omega",
        "width",
        "k",
        "batch",
        "epochs",
        "lr",
        "seed",
        "out",
        "log",
        "resume",
    ],
    "solve": [
        "dataset",
        "sample",
        "weights",
        "variant",
        "tol",
        "max-iters",
        "precond",
        "reference",
        "report",
    ],
    "bench": ["dataset", "weights", "methods", "tol", "max-iters", "seed", "out"],
    "lfa": ["nu", "omega", "grid", "out", "svg"],
    "spectrum": ["dataset", "sample", "weights", "iterations", "coordinates", "out"],
    "plot": ["residuals", "sample", "out"],
}

HELP = {
    "gen-mesh": "Write a structured or unstructured mesh.",
    "gen-data": "Generate and export a dataset family.",
    "train": "Train a correction model on the training split of a dataset.",
    "solve": "Solve one dataset sample and report the iteration.",
    "bench": "Compare iteration counts of every method on the held-out samples.",
    "lfa": "Local Fourier analysis of the weighted block Jacobi smoother.",
    "spectrum": "Dump error spectra during the hybrid iteration.",
    "plot": "Render a residual history as SVG.",
}


def require(options: Options, *names: str):
    """Fail unless every named option has a value."""
    missing = [f"--{name}" for name in names if options.get(name) is None]
    if missing:
        raise ConfigError(f"missing required options {', '.join(missing)}")


def parse_list(value: str) -> List[str]:
    """Split a comma separated list."""
    return [item.strip() for item in str(value).split(",") if item.strip()]


def gen_mesh(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Build a mesh and save it in the ASCII mesh format."""
    require(options, "out")
    n = options["resolution"]
    if options["shape"] == "box":
        mesh = build_structured_box(2 * n, n, n)
    elif options["shape"] != "square":
        raise ConfigError(f"unknown shape '{options['shape']}', expected square or box")
    elif options["mesh"] == "unstructured":
        mesh = build_unstructured_2d(n, options["seed"])
    else:
        mesh = build_structured_square(n)
    save_mesh(mesh, options["out"])
    logger.info("wrote %r to %s", mesh, options["out"])
    return 0


def gen_data(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Generate a dataset and export it."""
    require(options, "out")
    spec = DatasetSpec(
        family=options["family"],
        samples=options["samples"],
        resolution=options["resolution"],
        mesh=options["mesh"],
        seed=options["seed"],
        test_fraction=options["test-fraction"],
    )
    export_dataset(spec, options["out"], systems=options["systems"])
    return 0


def hybrid_settings(family: str, options: Options, given: Set[str]) -> HybridConfig:
    """Family preset, overridden by the flags that were given."""
    variant = options["variant"] if "variant" in given else None
    hybrid = HybridConfig.preset(family, options["scale"], variant)
    if "modes" in given:
        hybrid = replace(hybrid, modes=tuple(parse_modes(options["modes"])))
    if "sweeps" in given or "omega" in given:
        smoother = JacobiConfig(options["omega"], options["sweeps"])
        hybrid = replace(hybrid, smoother=smoother)
    return hybrid


def train_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Train on the training split and keep the best checkpoint."""
    require(options, "dataset", "out")
    spec = read_manifest(options["dataset"])
    train_indices, _ = spec.split()
    _, samples = load_dataset(options["dataset"], indices=train_indices)
    hybrid = hybrid_settings(spec.family, options, given)
    config = TrainConfig(
        k=options["k"],
        batch=options["batch"],
        epochs=options["epochs"],
        lr=options["lr"],
        seed=options["seed"],
        width=options["width"],
    )
    contexts = build_contexts(samples)
    model = create_model(hybrid, contexts[0], config)
    logger.info("hybrid settings:\n%s", hybrid)
    result = train(
        contexts,
        model,
        hybrid,
        config,
        checkpoint=options["out"],
        log=options["log"],
        extra={"dataset": spec.to_dict()},
        header=workbench.provenance,
        resume=options["resume"],
    )
    logger.info("best loss %.6e in epoch %d", result.best_loss, result.best_epoch)
    return 0


def solve_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Solve one sample; hybrid methods when weights are given, Jacobi baselines otherwise."""
    require(options, "dataset", "sample")
    if options["precond"] not in ("none", "fgmres"):
        raise ConfigError(f"unknown --precond '{options['precond']}', expected none or fgmres")
    prefix = "hybrid" if options["weights"] else "jacobi"
    method = f"{prefix}-solver" if options["precond"] == "none" else f"{prefix}-precond-fgmres"
    _, report = workbench.solve(
        options["dataset"],
        options["sample"],
        method,
        weights=options["weights"],
        tol=options["tol"],
        max_iters=options["max-iters"],
        reference=options["reference"],
        variant=options["variant"] if "variant" in given else None,
    )
    if options["report"]:
        workbench.write_json(report.to_json(), options["report"])
    return 0


def bench_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Benchmark every method on the held-out samples."""
    require(options, "dataset")
    max_iters = options["max-iters"]
    if "max-iters" not in given:
        max_iters = HybridConfig.preset(read_manifest(options["dataset"]).family).max_iters
    spec = BenchSpec(
        dataset=options["dataset"],
        weights=options["weights"],
        methods=tuple(parse_list(options["methods"])),
        tol=options["tol"],
        max_iters=max_iters,
        output=options["out"] or "bench",
    )
    result = workbench.bench(spec)
    for row in result.table.itertuples():
        logger.info("%-26s %s", row.method, row.iterations)
    return 0


def lfa_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Smoothing factor sweep, with optional CSV and SVG outputs."""
    config = LfaConfig(nu=options["nu"], omega=options["omega"], resolution=options["grid"])
    result = smoothing_factor_sweep(config)
    logger.info(
        "shear factor %.6f, shear damping %.6f",
        shear_factor(config.nu, config.omega),
        shear_damping(config),
    )
    if options["out"]:
        workbench.write_csv(result.to_frame(), options["out"])
    if options["svg"]:
        workbench.plot_lfa(result, options["svg"])
    return 0


def spectrum_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Write the error spectra and their norms per stage."""
    require(options, "dataset", "sample", "weights", "out")
    iterations = parse_modes(options["iterations"])
    frame = workbench.spectrum(
        options["dataset"],
        options["sample"],
        options["weights"],
        iterations,
        coordinates=options["coordinates"],
    )
    out = Path(options["out"])
    workbench.write_csv(frame, out)
    norms = spectrum_norms(frame)
    workbench.write_csv(norms, out.with_name(out.stem + "-norms.csv"))
    for row in norms.itertuples():
        logger.info("iteration %d %-10s spectrum norm %.6e", row.iteration, row.stage, row.norm)
    return 0


def plot_command(options: Options, given: Set[str], workbench: Workbench) -> int:
    """Render a residual history CSV."""
    require(options, "residuals", "out")
    workbench.plot_residuals(options["residuals"], options["out"], options["sample"])
    return 0


HANDLERS: Dict[str, Handler] = {
    "gen-mesh": gen_mesh,
    "gen-data": gen_data,
    "train": train_command,
    "solve": solve_command,
    "bench": bench_command,
    "lfa": lfa_command,
    "spectrum": spectrum_command,
    "plot": plot_command,
}


def _add_flag(parser: argparse.ArgumentParser, name: str):
    option = DEFAULTS[name]
    help_text = f"{option['description']} (default: {option['default']})"
    if option["type"] is bool:
        parser.add_argument(f"--{name}", action="store_true", default=None, help=help_text)
    else:
        parser.add_argument(f"--{name}", type=option["type"], default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per workflow; flags default to None so unset ones are known."""
    parser = argparse.ArgumentParser(prog="fns", description=__doc__)
    parser.add_argument("--config", help="YAML or 'key = value' file with default flag values")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging level (default: INFO)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, flags in COMMANDS.items():
        subparser = subparsers.add_parser(command, help=HELP[command])
        for name in flags:
            _add_flag(subparser, name)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    explicit = {
        key.replace("_", "-"): value
        for key, value in vars(args).items()
        if key not in ("command", "config", "log_level")
    }
    try:
        file_options = load_config_file(args.config) if args.config else {}
        options = resolve_options(args.command, file_options, explicit)
        given = {key for key in file_options if key in options}
        given |= {key for key, value in explicit.items() if value is not None}
        workbench = Workbench(argv, options.get("seed"))
        return HANDLERS[args.command](options, given, workbench)
    except Error as e:
        logger.error("%s", e.message)
        logger.debug(e, exc_info=True)
        return 1


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
