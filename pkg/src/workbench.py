# Copyright 2026 FNS Elasticity Developers
# See LICENSE file for licensing details.

"""Run the solver workflows on disk. Provides a Workbench class.

The workbench turns datasets and checkpoints into the artefacts of the command line: iteration
count tables, residual histories, error spectra, loss logs and SVG figures. Every file it writes
starts with a provenance header (command line, seed, version); CSV headers are `#` comment lines.
"""

import logging
import shlex
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib
import numpy as np
import pandas as pd
import yaml
from fns.v0.config import ConfigError, Error
from fns.v0.datasets import Sample, feature_dim, load_dataset, read_manifest
from fns.v0.lfa import LfaResult
from fns.v0.model import CorrectionModel, SystemContext, load_model
from fns.v0.smoother import smooth
from fns.v0.solver import (
    Corrector,
    HybridConfig,
    SolveReport,
    direct_solve,
    fgmres,
    hybrid_cycle,
    hybrid_preconditioner,
    jacobi_preconditioner,
    jacobi_solve,
    solve,
)
from fns.v0.spectral import FourierBasis, FrequencyLattice, forward_nudft
from fns.v0.trainer import build_contexts
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)

VERSION = "0.1.0"

METHODS = (
    "hybrid-solver",
    "hybrid-precond-fgmres",
    "jacobi-solver",
    "jacobi-precond-fgmres",
    "unpreconditioned-fgmres",
)
HYBRID_METHODS = ("hybrid-solver", "hybrid-precond-fgmres")
SPECTRUM_STAGES = ("initial", "smoothed", "correction", "corrected")


class BenchError(Error):
    """Raised when a workflow cannot run with the given inputs."""


@dataclass(frozen=True)
class BenchSpec:
    """Inputs of a benchmark run."""

    dataset: str
    weights: Optional[str] = None
    methods: Tuple[str, ...] = METHODS
    tol: float = 1e-6
    max_iters: int = 200
    output: str = "bench"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}, expected some of {METHODS}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")

    @property
    def needs_weights(self) -> bool:
        """Whether a trained model is required."""
        return any(m in HYBRID_METHODS for m in self.methods)

    def to_dict(self) -> dict:
        """Return the spec as a Python dictionary."""
        data = asdict(self)
        data["methods"] = list(self.methods)
        return data

    def __str__(self) -> str:
        """Return the spec as a YAML string."""
        return yaml.safe_dump(self.to_dict())


@dataclass
class BenchResult:
    """Per-sample runs, the summary table and the residual histories."""

    runs: pd.DataFrame
    table: pd.DataFrame
    residuals: pd.DataFrame
    deviations: List[int] = field(default_factory=list)


def format_cell(iterations: Sequence[int], converged: Sequence[bool]) -> str:
    """'mean ± std' of the iteration counts, or '-' if any run exceeded the cap."""
    if not len(iterations) or not all(converged):
        return "-"
    values = np.asarray(iterations, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return f"{values.mean():.1f} ± {std:.1f}"


def summarise(runs: pd.DataFrame, methods: Sequence[str]) -> pd.DataFrame:
    """One row per method: samples, converged count, mean, std and the table cell."""
    rows = []
    for method in methods:
        subset = runs[runs["method"] == method]
        iterations = subset["iterations"].to_numpy()
        converged = subset["converged"].to_numpy(dtype=bool)
        std = float(np.std(iterations, ddof=1)) if len(iterations) > 1 else 0.0
        rows.append(
            {
                "method": method,
                "samples": len(subset),
                "converged": int(converged.sum()),
                "mean": float(np.mean(iterations)) if len(iterations) else float("nan"),
                "std": std,
                "iterations": format_cell(iterations, converged),
            }
        )
    columns = ["method", "samples", "converged", "mean", "std", "iterations"]
    return pd.DataFrame(rows, columns=columns)


def ordering_deviations(runs: pd.DataFrame) -> List[int]:
    """Samples where hybrid-preconditioned FGMRES needed more iterations than the hybrid solver.

    Only samples where both converged are compared.
    """
    solver = runs[(runs["method"] == "hybrid-solver") & runs["converged"]]
    precond = runs[(runs["method"] == "hybrid-precond-fgmres") & runs["converged"]]
    both = solver.merge(precond, on="sample", suffixes=("_solver", "_precond"))
    late = both[both["iterations_precond"] > both["iterations_solver"]]
    return sorted(int(s) for s in late["sample"])


def run_method(
    method: str,
    context: SystemContext,
    correctors: Optional[Sequence[Corrector]],
    hybrid: HybridConfig,
    reference: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Solve one system with one of the benchmark methods.

    The stopping rule (tol, max_iters) is taken from `hybrid`; Jacobi baselines use its smoother.
    """
    operator, f = context.operator, context.rhs
    tol, cap = hybrid.tol, hybrid.max_iters
    if method in HYBRID_METHODS and correctors is None:
        raise BenchError(f"method {method} needs trained weights")
    if method == "hybrid-solver":
        assert correctors is not None
        return solve(operator, f, correctors, hybrid, reference, method)
    if method == "hybrid-precond-fgmres":
        assert correctors is not None
        preconditioner = hybrid_preconditioner(operator, correctors, hybrid)
        return fgmres(operator, f, preconditioner, tol, cap, method)
    if method == "jacobi-solver":
        return jacobi_solve(operator, f, hybrid.smoother, tol, cap, reference)
    if method == "jacobi-precond-fgmres":
        preconditioner = jacobi_preconditioner(operator, hybrid.smoother)
        return fgmres(operator, f, preconditioner, tol, cap, method)
    if method == "unpreconditioned-fgmres":
        return fgmres(operator, f, None, tol, cap, method)
    raise BenchError(f"unknown method '{method}'")


def check_model(model: CorrectionModel, family: str, d: int):
    """Refuse a model trained for inputs of a different shape."""
    expected = feature_dim(family)
    if model.config.in_dim != expected or model.config.d != d:
        raise BenchError(
            f"model expects {model.config.d}D inputs of width {model.config.in_dim}, "
            f"{family} provides {d}D inputs of width {expected}"
        )


class Workbench:
    """Class representing one command line invocation and the artefacts it writes."""

    def __init__(self, command: Optional[Sequence[str]] = None, seed: Optional[int] = None):
        self.command = list(command or [])
        self.seed = seed

    @property
    def provenance(self) -> Dict[str, str]:
        """Command line, seed and version recorded with every artefact."""
        return {
            "command": shlex.join(["fns"] + self.command),
            "seed": "none" if self.seed is None else str(self.seed),
            "version": VERSION,
        }

    def write_csv(self, frame: pd.DataFrame, path: Union[str, Path]):
        """Write a data frame as CSV below the provenance header."""
        with open(path, "w", newline="") as f:
            for key, value in self.provenance.items():
                f.write(f"# {key}: {value}\n")
            frame.to_csv(f, index=False, float_format="%.10e")
        logger.info("wrote %s", path)

    def write_json(self, text: str, path: Union[str, Path]):
        """Write a JSON report."""
        Path(path).write_text(text + "\n")
        logger.info("wrote %s", path)

    def save_svg(self, figure: Figure, path: Union[str, Path]):
        """Write a figure as SVG with the provenance in its description.

        The date is omitted and element ids are salted with a constant, so equal figures give
        equal files.
        """
        description = "; ".join(f"{key}: {value}" for key, value in self.provenance.items())
        with matplotlib.rc_context({"svg.hashsalt": "fns", "svg.fonttype": "none"}):
            figure.savefig(path, format="svg", metadata={"Date": None, "Description": description})
        logger.info("wrote %s", path)

    def load_model_for(
        self, weights: Union[str, Path], family: str, d: int
    ) -> Tuple[CorrectionModel, HybridConfig]:
        """Load a checkpoint and check it fits a dataset family."""
        model, hybrid, _ = load_model(weights)
        check_model(model, family, d)
        return model, hybrid

    def load_samples(
        self, dataset: Union[str, Path], indices: Optional[List[int]] = None
    ) -> Tuple[List[Sample], str, List[int]]:
        """Held-out samples of a dataset (or the given indices)."""
        spec = read_manifest(dataset)
        if indices is None:
            _, indices = spec.split()
        if not indices:
            raise BenchError(f"dataset at {dataset} has no held-out samples")
        _, samples = load_dataset(dataset, indices=indices)
        return samples, spec.family, indices

    def bench(self, spec: BenchSpec) -> BenchResult:
        """Iteration counts of every method on the held-out samples of a dataset.

        Writes `<output>.csv` (summary table), `<output>-runs.csv` (per sample) and
        `<output>-residuals.csv` (relative residual histories).
        """
        samples, family, _ = self.load_samples(spec.dataset)
        d = samples[0].mesh.dim
        model: Optional[CorrectionModel] = None
        if spec.needs_weights:
            if not spec.weights:
                raise BenchError("hybrid methods need --weights")
            model, hybrid = self.load_model_for(spec.weights, family, d)
        else:
            hybrid = HybridConfig.preset(family)
        hybrid = replace(hybrid, tol=spec.tol, max_iters=spec.max_iters)

        runs, residuals = [], []
        for sample, context in zip(samples, build_contexts(samples)):
            correctors = model.realise(context, detach=True) if model is not None else None
            for method in spec.methods:
                _, report = run_method(method, context, correctors, hybrid)
                runs.append(
                    {
                        "sample": sample.index,
                        "method": method,
                        "iterations": report.iterations,
                        "converged": report.converged,
                        "final_residual": report.final_residual,
                    }
                )
                residuals += [
                    {"method": method, "sample": sample.index, "iteration": i, "residual": value}
                    for i, value in enumerate(report.history)
                ]

        runs_frame = pd.DataFrame(runs)
        result = BenchResult(
            runs=runs_frame,
            table=summarise(runs_frame, spec.methods),
            residuals=pd.DataFrame(residuals),
            deviations=ordering_deviations(runs_frame),
        )
        for index in result.deviations:
            logger.warning(
                "sample %d: hybrid-precond-fgmres needed more iterations than hybrid-solver", index
            )

        output = Path(spec.output)
        self.write_csv(result.table, output.with_name(output.name + ".csv"))
        self.write_csv(result.runs, output.with_name(output.name + "-runs.csv"))
        self.write_csv(result.residuals, output.with_name(output.name + "-residuals.csv"))
        return result

    def solve(
        self,
        dataset: Union[str, Path],
        index: int,
        method: str,
        weights: Optional[Union[str, Path]] = None,
        tol: float = 1e-6,
        max_iters: int = 200,
        reference: bool = False,
        variant: Optional[str] = None,
    ) -> Tuple[np.ndarray, SolveReport]:
        """Solve one dataset sample with one method."""
        samples, family, _ = self.load_samples(dataset, [index])
        sample = samples[0]
        context = build_contexts(samples)[0]
        correctors = None
        if method in HYBRID_METHODS:
            if weights is None:
                raise BenchError(f"method {method} needs --weights")
            model, hybrid = self.load_model_for(weights, family, sample.mesh.dim)
            if variant is not None and variant != hybrid.variant:
                raise BenchError(f"checkpoint holds a {hybrid.variant} model, not {variant}")
            correctors = model.realise(context, detach=True)
        else:
            hybrid = HybridConfig.preset(family)
        hybrid = replace(hybrid, tol=tol, max_iters=max_iters)
        u_ref = direct_solve(context.operator, context.rhs) if reference else None
        return run_method(method, context, correctors, hybrid, u_ref)

    def spectrum(
        self,
        dataset: Union[str, Path],
        index: int,
        weights: Union[str, Path],
        iterations: Sequence[int],
        coordinates: str = "learned",
    ) -> pd.DataFrame:
        """Error spectra of one sample during the hybrid iteration.

        For every requested iteration t, four spectra are recorded on the first correction
        level's lattice: the error before the cycle, after smoothing, the correction added by
        the levels, and the error after the correction.

        Args:
            dataset: dataset directory.
            index: sample index.
            weights: trained checkpoint.
            iterations: 1-based iteration numbers to record.
            coordinates: "learned" evaluates the transform on the learned coordinates,
                "identity" on the mesh coordinates.
        """
        if coordinates not in ("learned", "identity"):
            raise ConfigError(f"unknown coordinates '{coordinates}', expected learned or identity")
        if not iterations or min(iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {list(iterations)}")
        samples, family, _ = self.load_samples(dataset, [index])
        context = build_contexts(samples)[0]
        model, hybrid = self.load_model_for(weights, family, samples[0].mesh.dim)
        correctors = model.realise(context, detach=True)
        lattice = model.lattices[0]
        if coordinates == "learned":
            xi = model.coordinates(context).detach()
        else:
            xi = context.coordinates
        u_ref = direct_solve(context.operator, context.rhs)
        return error_spectra(context, correctors, hybrid, u_ref, lattice, xi, iterations)

    def plot_residuals(
        self, csv_in: Union[str, Path], svg_out: Union[str, Path], sample: Optional[int] = None
    ):
        """Relative residual against iteration on a log scale, one line per method.

        Args:
            csv_in: residual history written by `bench`.
            svg_out: SVG file to write.
            sample: sample to draw; the lowest index in the file by default.
        """
        frame = read_csv(csv_in)
        if frame.empty:
            raise BenchError(f"{csv_in} holds no residual history")
        if sample is None:
            sample = int(frame["sample"].min())
        frame = frame[frame["sample"] == sample]
        if frame.empty:
            raise BenchError(f"{csv_in} holds no residual history for sample {sample}")

        figure = Figure(figsize=(6.4, 4.8))
        axis = figure.subplots()
        for method, group in frame.groupby("method", sort=False):
            group = group.sort_values("iteration")
            axis.semilogy(group["iteration"], group["residual"], marker=".", label=method)
        axis.set_xlabel("iteration")
        axis.set_ylabel("relative residual")
        axis.set_title(f"sample {sample}")
        axis.legend()
        self.save_svg(figure, svg_out)

    def plot_lfa(self, result: LfaResult, svg_out: Union[str, Path]):
        """Heat map of the smoother's spectral radius over the frequency grid."""
        figure = Figure(figsize=(5.6, 4.8))
        axis = figure.subplots()
        image = axis.pcolormesh(
            result.theta1, result.theta2, result.rho, shading="nearest", vmin=0.0, vmax=1.0
        )
        figure.colorbar(image, ax=axis, label="spectral radius")
        axis.set_xlabel("theta1")
        axis.set_ylabel("theta2")
        axis.set_title(
            f"nu={result.config.nu:g}, omega={result.config.omega:.4g}: "
            f"smoothing factor {result.smoothing_factor:.4f}"
        )
        self.save_svg(figure, svg_out)


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written by the workbench, skipping the provenance header."""
    try:
        return pd.read_csv(path, comment="#")
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except OSError as e:
        raise BenchError(f"cannot read {path}: {e}") from e


def spectrum_frame(
    magnitude: np.ndarray, lattice: FrequencyLattice, iteration: int, stage: str
) -> pd.DataFrame:
    """Long table of one spectrum: one row per frequency and component."""
    size, d = magnitude.shape
    frequencies = np.repeat(lattice.frequencies, d, axis=0)
    frame = pd.DataFrame({f"k{axis}": frequencies[:, axis] for axis in range(d)})
    frame.insert(0, "stage", stage)
    frame.insert(0, "iteration", iteration)
    frame["component"] = np.tile(np.arange(d), size)
    frame["magnitude"] = magnitude.ravel()
    return frame


def error_spectra(
    context: SystemContext,
    correctors: Sequence[Corrector],
    hybrid: HybridConfig,
    u_ref: np.ndarray,
    lattice: FrequencyLattice,
    xi,
    iterations: Sequence[int],
) -> pd.DataFrame:
    """Magnitudes |F e|(k) per stage, frequency and component at the requested iterations."""
    operator, f = context.operator, context.rhs
    basis = FourierBasis(xi, lattice, padding=context.padding)
    wanted = set(int(t) for t in iterations)
    frames = []
    u = np.zeros_like(f)
    for t in range(1, max(wanted) + 1):
        half = np.asarray(smooth(operator, None, f, u, hybrid.smoother))
        after = np.asarray(hybrid_cycle(operator, None, f, u, correctors, hybrid))
        if t in wanted:
            fields = {
                "initial": u_ref - u,
                "smoothed": u_ref - half,
                "correction": after - half,
                "corrected": u_ref - after,
            }
            for stage in SPECTRUM_STAGES:
                magnitude = forward_nudft(fields[stage], basis, lattice).magnitude()
                frames.append(spectrum_frame(magnitude, lattice, t, stage))
        u = after
    return pd.concat(frames, ignore_index=True)


def spectrum_norms(frame: pd.DataFrame) -> pd.DataFrame:
    """l2 norm of every stage's spectrum per iteration."""
    squared = frame.assign(squared=frame["magnitude"] ** 2)
    norms = squared.groupby(["iteration", "stage"], sort=True)["squared"].sum() ** 0.5
    return norms.rename("norm").reset_index()
