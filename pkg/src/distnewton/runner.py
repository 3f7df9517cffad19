"""Experiment driver: run a variant for a number of rounds under a step-size mode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dnewton import (DIVERGENCE_THRESHOLD, DivergenceError, NodeStates, Trace, Variant,
                      init_states, step)
from .netgraph import SpectralParams, Topology, spectral_params
from .objectives import ObjectiveSet
from .stepsize import (StabilityConstants, adaptive_alpha, certified_pair, compute_constants, init_rtracker,
                       offline_alpha, r_step, s_estimate, schedule_alpha, F_map)


class ModeError(ValueError):
    pass


@dataclass(frozen=True)
class StepSizeMode:
    kind: str
    value: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "StepSizeMode":
        text = text.strip().lower()
        if text.startswith("fixed"):
            _, _, val = text.partition(":")
            try:
                v = float(val)
            except ValueError as exc:
                raise ModeError(f"fixed step size needs a value, e.g. 'fixed:0.006', got {text!r}") from exc
            if not 0 <= v <= 1:
                raise ModeError(f"fixed step size must lie in [0, 1], got {v}")
            return cls("fixed", v)
        if text in ("offline", "adaptive", "global"):
            return cls(text)
        raise ModeError(f"unknown step-size mode {text!r}; use fixed:<value>, offline, adaptive or global")

    def __str__(self):
        return f"fixed:{self.value}" if self.kind == "fixed" else self.kind


@dataclass
class CertificateLog:
    """Per-round scheduler bound ``chi``, measured pair ``zeta`` and chosen step."""

    chi: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def arrays(self):
        return np.array(self.chi), np.array(self.zeta), np.array(self.alpha)

    def to_csv(self, path):
        chi, zeta, al = self.arrays()
        with open(path, "w") as fh:
            fh.write("k,chi_grad,chi_mismatch,zeta_grad,zeta_mismatch,alpha\n")
            for k in range(len(al)):
                fh.write(f"{k + 1},{chi[k, 0]!r},{chi[k, 1]!r},{zeta[k, 0]!r},{zeta[k, 1]!r},{al[k]!r}\n")


@dataclass
class RunResult:
    trace: Trace
    final: NodeStates
    certificate: Optional[CertificateLog] = None
    params: Optional[SpectralParams] = None

    @property
    def diverged(self) -> bool:
        return self.trace.status == "diverged"


def run(variant, W: Topology, objs: ObjectiveSet, stepsize_mode, rounds: int, beta: float, x_init, x_star,
        threshold: float = DIVERGENCE_THRESHOLD, params: Optional[SpectralParams] = None,
        r_start: str = "input", constants: Optional[StabilityConstants] = None,
        gamma: Optional[float] = None, delta: Optional[float] = None) -> RunResult:
    """Execute ``rounds`` synchronous rounds and record one trace row per round and node.

    A diverging run stops at the offending round and returns the partial
    trace with ``status == "diverged"``.
    """
    variant = Variant(variant) if not isinstance(variant, Variant) else variant
    mode = StepSizeMode.parse(stepsize_mode) if isinstance(stepsize_mode, str) else stepsize_mode
    if rounds < 1:
        raise ModeError("rounds must be positive")
    if mode.kind == "global":
        if variant is not Variant.PROPOSED:
            raise ModeError("the certified global schedule is defined for the proposed variant only")
        if constants is None:
            if gamma is None or delta is None:
                raise ModeError("global mode needs gamma and delta (and beta)")
            constants = compute_constants(W, beta, gamma, delta)
        return global_run(W, objs, beta, constants, x_init, rounds, x_star, threshold)
    if mode.kind in ("offline", "adaptive") and params is None:
        params = spectral_params(W)

    states = init_states(objs, x_init, 0.0, track_ell=variant.tracks_ell)
    trace = Trace(states.node_count)
    tracker = None
    if mode.kind == "fixed":
        alpha_fn = lambda: mode.value
    elif mode.kind == "offline":
        a_off = offline_alpha(params.lambda2)
        alpha_fn = lambda: a_off
    else:
        tracker = init_rtracker(params, states, beta, r_start)
        alpha_fn = lambda: adaptive_alpha(params.lambda2, s_estimate(tracker.R))

    for r in range(rounds):
        states = states.with_alpha(alpha_fn())
        if r == rounds - 1:
            trace.record(states, x_star)
            break
        try:
            nxt = step(variant, W, objs, states, beta, threshold)
        except DivergenceError as exc:
            trace.record(states, x_star, floored=exc.states.floored)
            bad = _diverged_snapshot(exc.states, states)
            trace.record(bad, x_star, diverged=True)
            return RunResult(trace, states, None, params)
        trace.record(states, x_star, floored=nxt.floored)
        if tracker is not None:
            tracker = r_step(W, tracker, nxt, beta)
        states = nxt
    return RunResult(trace, states, None, params)


def _diverged_snapshot(failed: NodeStates, prev: NodeStates) -> NodeStates:
    # Objectives are never evaluated at a divergent point; the reported iterate is a marker only.
    return NodeStates(x=np.full_like(prev.x, np.inf), g=prev.g, H=prev.H, alpha=prev.alpha, grad=prev.grad,
                      hess=prev.hess, k=prev.k + 1, floored=failed.floored)


def global_run(W: Topology, objs: ObjectiveSet, beta: float, constants: StabilityConstants, x_init, rounds: int,
               x_star, threshold: float = DIVERGENCE_THRESHOLD, chi1=None, slack: float = 1e-8,
               atol: float = 1e-12) -> RunResult:
    """Proposed iteration with the certified common step.

    ``chi`` starts at the measured pair (or ``chi1`` if given, which must
    dominate it) and evolves through the F map.  Each round the measured
    pair ``zeta_k`` is compared with ``chi_k``; violations beyond ``slack``
    (relative) plus ``atol`` times the initial bound (absolute, for
    rounding noise once a component reaches zero) are logged, since they
    would falsify the constants.
    """
    states = init_states(objs, x_init, 0.0)
    trace = Trace(states.node_count)
    log = CertificateLog()
    zeta, _ = certified_pair(constants, objs, states)
    chi = zeta.copy() if chi1 is None else np.asarray(chi1, dtype=float)
    if np.any(chi < zeta):
        raise ModeError(f"initial bound {chi} does not dominate the measured pair {zeta}")
    floor = atol * max(1.0, float(chi.max()))
    for r in range(rounds):
        zeta, _ = certified_pair(constants, objs, states)
        if np.any(zeta > chi * (1 + slack) + floor):
            log.violations.append(states.k)
        a = schedule_alpha(constants, chi)
        log.chi.append(chi.copy())
        log.zeta.append(zeta)
        log.alpha.append(a)
        states = states.with_alpha(a)
        if r == rounds - 1:
            trace.record(states, x_star)
            break
        try:
            nxt = step(Variant.PROPOSED, W, objs, states, beta, threshold)
        except DivergenceError as exc:
            trace.record(states, x_star, floored=exc.states.floored)
            trace.record(_diverged_snapshot(exc.states, states), x_star, diverged=True)
            return RunResult(trace, states, log)
        trace.record(states, x_star, floored=nxt.floored)
        chi = F_map(constants, chi, a)
        states = nxt
    return RunResult(trace, states, log)
