"""Build a problem from a config, run it and write the CSV outputs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..dnewton import FloorError
from ..netgraph import (SpectralError as NetSpectralError, Topology, TopologyError, build_ring, build_symmetric_ring,
                        complete_average, load_topology, power_estimate_lambda2, spectral_params)
from ..objectives import (INIT_STREAM, ConvergenceError, LocalizationInstance, ObjectiveError, ObjectiveSet,
                          centralized_newton, instance_streams, load_quadratics, make_localization_instance)
from ..runner import RunResult, run
from ..spectral import (GammaModel, SpectralError, deflated_radius, gamma_model, refine_alpha_opt, rmatrix,
                        scan_alpha_opt, theorem2_roots)
from ..stepsize import StepSizeError, offline_alpha, s_estimate
from .config import ExperimentConfig
from .summary import TraceSummary, summarize_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_NUMERICAL = 4

# Failures that mean "the numbers broke", as opposed to a bad config.
NUMERICAL_ERRORS = (ConvergenceError, SpectralError, NetSpectralError, StepSizeError, FloorError,
                    np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (TopologyError, ObjectiveError)

SUMMARY_FIELDS = ("run", "variant", "stepsize", "alpha", "status", "rounds", "final_max_err",
                  "final_consensus_residual", "fitted_ratio", "consensus_floor", "consensus_above_floor",
                  "divergence_round", "first_round_below_1e6", "theoretical_rate")
SCAN_HEADER = ("alpha", "deflated_radius", "predicted_root_up", "predicted_root_down")


@dataclass
class Problem:
    topology: Topology
    objectives: ObjectiveSet
    x_star: np.ndarray
    x_init: np.ndarray
    instance: Optional[LocalizationInstance] = None
    _model: Optional[GammaModel] = field(default=None, repr=False)

    def curvature_at_optimum(self):
        """Local Hessians at ``x_star`` and their mean."""
        hess = self.objectives.hessians(self.objectives.at_common(self.x_star))
        return hess, hess.mean(axis=0)

    @property
    def model(self) -> GammaModel:
        if self._model is None:
            hess, H_star = self.curvature_at_optimum()
            self._model = gamma_model(self.topology, hess, H_star)
        return self._model

    def r_scale(self) -> float:
        """Scalar ``s`` of the curvature-mismatch matrix at the optimum."""
        params = spectral_params(self.topology)
        hess, H_star = self.curvature_at_optimum()
        R = rmatrix(hess, H_star, params.u, params.v)
        return float(s_estimate(R))


def build_topology(cfg: ExperimentConfig) -> Topology:
    if cfg.topology == "ring":
        return build_ring(cfg.nodes, cfg.self_weight, cfg.prev_weight, cfg.skip_weight)
    if cfg.topology == "symmetric_ring":
        return build_symmetric_ring(cfg.nodes)
    if cfg.topology == "complete":
        return complete_average(cfg.nodes)
    return load_topology(cfg.topology_path)


def build_problem(cfg: ExperimentConfig) -> Problem:
    top = build_topology(cfg)
    I = top.node_count
    if cfg.objective == "localization":
        inst = make_localization_instance(I, cfg.x_true, cfg.noise_var, cfg.seed)
        objs = inst.objective_set()
        x_star = centralized_newton(objs, inst.anchors.mean(axis=0))
        return Problem(top, objs, x_star, inst.initial_points(cfg.init_scale), inst)
    objs = load_quadratics(cfg.quadratic_path)
    if len(objs) != I:
        raise ObjectiveError(f"quadratic file has {len(objs)} nodes but the topology has {I}")
    x_star = centralized_newton(objs, np.zeros(objs.dimension))
    rng = instance_streams(cfg.seed)[INIT_STREAM]
    x_init = x_star + cfg.init_scale * rng.standard_normal((I, objs.dimension))
    return Problem(top, objs, x_star, x_init)


@dataclass(frozen=True)
class ScanResult:
    alpha_opt: float
    curve: np.ndarray
    lambda2: complex
    s: float

    def roots(self):
        """Moduli of both predicted local roots along the scan grid."""
        up, down = theorem2_roots(self.lambda2, self.s, self.curve[:, 0])
        return np.abs(up), np.abs(down)

    def to_csv(self, path) -> None:
        up, down = self.roots()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCAN_HEADER)
            for (a, r), ru, rd in zip(self.curve, up, down):
                w.writerow((repr(float(a)), repr(float(r)), repr(float(ru)), repr(float(rd))))


def scan(cfg: ExperimentConfig, problem: Problem) -> ScanResult:
    """Grid scan of the deflated radius, then a bounded refinement around the best grid point."""
    grid = np.linspace(cfg.scan_lo, cfg.scan_hi, cfg.scan_points)
    model = problem.model
    a_grid, curve = scan_alpha_opt(model, grid)
    j = int(np.argmin(curve[:, 1]))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    a_opt = refine_alpha_opt(model, lo, hi) if hi > lo else a_grid
    if deflated_radius(model, a_opt) > curve[j, 1]:
        a_opt = a_grid
    params = spectral_params(problem.topology)
    return ScanResult(float(a_opt), curve, params.lambda2, problem.r_scale())


def theoretical_rate(problem: Problem, result: RunResult, mode_kind: str, alpha) -> float:
    """Deflated radius at the step the run used (final mean step for adaptive runs)."""
    if mode_kind == "global" or problem.topology.node_count < 2:
        return float("nan")
    if mode_kind == "adaptive":
        al = result.trace.alpha
        alpha = float(np.mean(al[-1]))
    if alpha is None or not 0 < alpha < 1:
        return float("nan")
    return deflated_radius(problem.model, float(alpha))


@dataclass
class RunRecord:
    name: str
    variant: str
    result: RunResult
    summary: TraceSummary
    mode: str
    alpha: Optional[float]
    rate: float

    def row(self) -> dict:
        row = {"run": self.name, "variant": self.variant, "stepsize": self.mode, "alpha": self.alpha,
               "status": self.result.trace.status, "theoretical_rate": self.rate}
        row.update((k, v) for k, v in self.summary.as_row().items() if k in SUMMARY_FIELDS)
        return {k: _fmt(row[k]) for k in SUMMARY_FIELDS}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def execute(cfg: ExperimentConfig, problem: Problem, name: str, alpha_scan: Optional[float] = None) -> RunRecord:
    """One run of ``cfg.variant`` on ``problem``; no files written."""
    mode = cfg.mode(alpha_scan)
    params = spectral_params(problem.topology) if mode.kind in ("offline", "adaptive") else None
    result = run(cfg.variant_enum, problem.topology, problem.objectives, mode, cfg.rounds, cfg.beta,
                 problem.x_init, problem.x_star, threshold=cfg.threshold, params=params, r_start=cfg.r_start,
                 gamma=cfg.gamma, delta=cfg.delta)
    alpha = mode.value if mode.kind == "fixed" else (offline_alpha(params.lambda2) if mode.kind == "offline" else None)
    summ = summarize_trace(result.trace, cfg.consensus_floor)
    rate = theoretical_rate(problem, result, mode.kind, alpha)
    return RunRecord(name, cfg.variant_enum.value, result, summ, str(mode), alpha, rate)


def write_summary(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(rec.row())


def write_run(out: Path, rec: RunRecord, prefix: str = "") -> list:
    """Trace CSV (plus the certificate log for certified runs); returns the written paths."""
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{prefix}trace.csv"]
    rec.result.trace.to_csv(paths[0])
    if rec.result.certificate is not None:
        paths.append(out / f"{prefix}certificate.csv")
        rec.result.certificate.to_csv(paths[-1])
    return paths


@dataclass
class Outcome:
    exit_code: int
    files: list
    records: list
    scan: Optional[ScanResult] = None


def run_experiment(cfg: ExperimentConfig, out: Optional[Path] = None) -> Outcome:
    """Generate the instance, run the configured variant and write ``trace.csv`` and ``summary.csv``.

    Divergence is reported through the exit code (3) and the summary's
    ``status`` column; it is not an exception.
    """
    out = Path(out if out is not None else cfg.out)
    problem = build_problem(cfg)
    sc = scan(cfg, problem) if cfg.uses_scan else None
    rec = execute(cfg, problem, cfg.variant_enum.value, sc.alpha_opt if sc else None)
    files = write_run(out, rec)
    if sc is not None:
        files.append(out / "scan.csv")
        sc.to_csv(files[-1])
    files.append(out / "summary.csv")
    write_summary(files[-1], [rec])
    code = EXIT_DIVERGED if rec.result.diverged else EXIT_OK
    return Outcome(code, files, [rec], sc)


def run_scan(cfg: ExperimentConfig, out: Optional[Path] = None) -> Outcome:
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sc = scan(cfg, build_problem(cfg))
    path = out / "scan.csv"
    sc.to_csv(path)
    return Outcome(EXIT_OK, [path], [], sc)


@dataclass(frozen=True)
class SpectrumReport:
    lambda2: complex
    offline_alpha: float
    power_estimate: Optional[float]
    power_series: Optional[np.ndarray]


def estimate_spectrum(cfg: ExperimentConfig, out: Optional[Path] = None) -> tuple:
    """Direct second eigenvalue, the offline step and (undirected networks only) the power estimate."""
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    top = build_topology(cfg)
    params = spectral_params(top)
    series = None
    est = None
    if top.is_symmetric and top.node_count > 1:
        series = np.array([power_estimate_lambda2(top, cfg.seed, r)[0][0] for r in range(2, cfg.power_rounds + 1)])
        est = float(series[-1])
    report = SpectrumReport(params.lambda2, offline_alpha(params.lambda2), est, series)
    files = [out / "spectrum.csv"]
    lam = complex(params.lambda2)
    with open(files[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("quantity", "value"))
        w.writerow(("lambda2_real", repr(lam.real)))
        w.writerow(("lambda2_imag", repr(lam.imag)))
        w.writerow(("lambda2_modulus", repr(abs(lam))))
        w.writerow(("offline_alpha", repr(report.offline_alpha)))
        if est is not None:
            w.writerow(("power_estimate", repr(est)))
    if series is not None:
        files.append(out / "power_estimate.csv")
        with open(files[-1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("round", "estimate"))
            for r, v in enumerate(series, start=2):
                w.writerow((r, repr(float(v))))
    return Outcome(EXIT_OK, files, []), report
