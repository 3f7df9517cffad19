"""Distributed Newton iterations and the synchronous round engine state.

Four update rules share the same consensus trackers for the gradient and
Hessian averages:

* ``PROPOSED``: mix the iterates, then take a Newton step with the tracked
  gradient and the floored tracked Hessian.
* ``ALG_A``: Newton step without mixing the iterates.
* ``ALG_B``: mix the iterates and blend with the Newton target built from a
  tracked ``H x - grad`` signal.
* ``VZCPS``: the ``ALG_B`` blend without mixing the iterates.

Each step takes the round-``k`` snapshot and returns a fresh round-``k+1``
snapshot; nothing is modified in place.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .consensus import dynamic_step_estimate, static_step
from .objectives import ObjectiveSet

DIVERGENCE_THRESHOLD = 1e12
CONSENSUS_FLOOR = 1e-3
SYMMETRY_TOL = 1e-8


class Variant(str, enum.Enum):
    PROPOSED = "proposed"
    ALG_A = "alga"
    ALG_B = "algb"
    VZCPS = "vzcps"

    @property
    def tracks_ell(self) -> bool:
        return self in (Variant.ALG_B, Variant.VZCPS)

    @property
    def mixes_x(self) -> bool:
        return self in (Variant.PROPOSED, Variant.ALG_B)

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("_", "").replace("-", "")
        aliases = {"a": "alga", "b": "algb", "algorithma": "alga", "algorithmb": "algb"}
        key = aliases.get(key, key)
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown algorithm variant {name!r}; expected one of {[v.value for v in cls]}")


class DivergenceError(RuntimeError):
    """An iterate left the ball of radius ``threshold`` or became non-finite."""

    def __init__(self, message: str, states: "NodeStates"):
        super().__init__(message)
        self.states = states


class FloorError(ValueError):
    pass


def _floored_spectrum(H: np.ndarray, beta: float):
    if beta <= 0:
        raise FloorError(f"beta must be positive, got {beta}")
    H = np.asarray(H, dtype=float)
    asym = np.abs(H - np.swapaxes(H, -1, -2)).max() if H.size else 0.0
    scale = max(1.0, np.abs(H).max()) if H.size else 1.0
    if asym > SYMMETRY_TOL * scale:
        raise FloorError(f"matrix is not symmetric (asymmetry {asym:.3e})")
    lam, U = np.linalg.eigh(0.5 * (H + np.swapaxes(H, -1, -2)))
    floor = 1.0 / beta
    return U, np.maximum(lam, floor), (lam < floor).any(axis=-1)


def floor_hessian(H, beta: float) -> np.ndarray:
    """Raise every eigenvalue of the symmetric ``H`` to at least ``1/beta``.

    Works on a single ``(N, N)`` matrix or a stack ``(..., N, N)``.  A matrix
    whose spectrum already clears the floor is returned unchanged.
    """
    H = np.asarray(H, dtype=float)
    U, lam, floored = _floored_spectrum(H, beta)
    out = (U * lam[..., None, :]) @ np.swapaxes(U, -1, -2)
    if H.ndim == 2:
        return H.copy() if not floored else 0.5 * (out + out.T)
    keep = ~floored
    out[keep] = H[keep]
    return out


def floored_solve(H, rhs, beta: float):
    """Solve ``B(H) y = rhs`` through the floored eigenfactors.

    ``H`` is ``(I, N, N)`` and ``rhs`` is ``(I, N)`` or ``(I, N, M)``.
    Returns the solution and a per-node flag telling whether flooring
    changed the spectrum.
    """
    U, lam, floored = _floored_spectrum(H, beta)
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == H.ndim - 1
    R = rhs[..., None] if vec else rhs
    y = U @ ((np.swapaxes(U, -1, -2) @ R) / lam[..., :, None])
    return (y[..., 0] if vec else y), floored


@dataclass(frozen=True)
class NodeStates:
    """Round-``k`` snapshot of every node.

    ``grad``, ``hess`` and ``ell`` cache the local evaluations at ``x`` so
    each round evaluates the objectives once.
    """

    x: np.ndarray
    g: np.ndarray
    H: np.ndarray
    alpha: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    l: Optional[np.ndarray] = None
    ell: Optional[np.ndarray] = None
    k: int = 1
    floored: np.ndarray = field(default=None)

    @property
    def node_count(self) -> int:
        return self.x.shape[0]

    def with_alpha(self, alpha) -> "NodeStates":
        a = np.broadcast_to(np.asarray(alpha, dtype=float), (self.node_count,)).copy()
        if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
            raise ValueError(f"step sizes must lie in [0, 1], got range [{a.min()}, {a.max()}]")
        return replace(self, alpha=a)


def init_states(objs: ObjectiveSet, x_init, alpha=0.0, track_ell: bool = False) -> NodeStates:
    """Start every tracker at its own local evaluation."""
    X = np.array(x_init, dtype=float)
    if X.ndim == 1:
        X = objs.at_common(X)
    grad = objs.gradients(X)
    hess = objs.hessians(X)
    ell = np.einsum("ijk,ik->ij", hess, X) - grad if track_ell else None
    I = X.shape[0]
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (I,)).copy()
    return NodeStates(x=X, g=grad.copy(), H=hess.copy(), alpha=a, grad=grad, hess=hess,
                      l=None if ell is None else ell.copy(), ell=ell, k=1,
                      floored=np.zeros(I, dtype=bool))


def _guard(x_new: np.ndarray, threshold: float, states: NodeStates) -> None:
    norms = np.linalg.norm(x_new, axis=1)
    if not np.all(np.isfinite(norms)) or norms.max() > threshold:
        bad = int(np.nanargmax(np.where(np.isfinite(norms), norms, np.inf)))
        raise DivergenceError(f"round {states.k + 1}: node {bad} iterate norm {norms[bad]:.3e} "
                              f"exceeds {threshold:.1e}", states)


def _advance(W, objs: ObjectiveSet, s: NodeStates, x_new: np.ndarray, floored, threshold: float) -> NodeStates:
    new = replace(s, floored=floored)
    _guard(x_new, threshold, new)
    grad = objs.gradients(x_new)
    hess = objs.hessians(x_new)
    g = dynamic_step_estimate(W, s.g, grad, s.grad)
    H = dynamic_step_estimate(W, s.H, hess, s.hess)
    # Averaging symmetric blocks keeps H symmetric up to rounding; re-symmetrize to stop drift.
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    l = ell = None
    if s.l is not None:
        ell = np.einsum("ijk,ik->ij", hess, x_new) - grad
        l = dynamic_step_estimate(W, s.l, ell, s.ell)
    return NodeStates(x=x_new, g=g, H=H, alpha=s.alpha, grad=grad, hess=hess, l=l, ell=ell,
                      k=s.k + 1, floored=floored)


def step_proposed(W, objs, states: NodeStates, beta: float, threshold: float = DIVERGENCE_THRESHOLD) -> NodeStates:
    d, floored = floored_solve(states.H, states.g, beta)
    x_new = static_step(W, states.x) - states.alpha[:, None] * d
    return _advance(W, objs, states, x_new, floored, threshold)


def step_algA(W, objs, states: NodeStates, beta: float, threshold: float = DIVERGENCE_THRESHOLD) -> NodeStates:
    d, floored = floored_solve(states.H, states.g, beta)
    x_new = states.x - states.alpha[:, None] * d
    return _advance(W, objs, states, x_new, floored, threshold)


def _need_ell(states):
    if states.l is None:
        raise ValueError("this variant needs the ell tracker; build the states with track_ell=True")


def step_algB(W, objs, states: NodeStates, beta: float, threshold: float = DIVERGENCE_THRESHOLD) -> NodeStates:
    _need_ell(states)
    t, floored = floored_solve(states.H, states.l, beta)
    a = states.alpha[:, None]
    x_new = (1.0 - a) * static_step(W, states.x) + a * t
    return _advance(W, objs, states, x_new, floored, threshold)


def step_vzcps(W, objs, states: NodeStates, beta: float, threshold: float = DIVERGENCE_THRESHOLD) -> NodeStates:
    _need_ell(states)
    t, floored = floored_solve(states.H, states.l, beta)
    a = states.alpha[:, None]
    x_new = (1.0 - a) * states.x + a * t
    return _advance(W, objs, states, x_new, floored, threshold)


STEPS = {
    Variant.PROPOSED: step_proposed,
    Variant.ALG_A: step_algA,
    Variant.ALG_B: step_algB,
    Variant.VZCPS: step_vzcps,
}


def step(variant: Variant, W, objs, states, beta, threshold=DIVERGENCE_THRESHOLD) -> NodeStates:
    return STEPS[Variant(variant)](W, objs, states, beta, threshold)


TRACE_HEADER = ("k", "i", "err", "consensus_residual", "grad_residual", "alpha", "floored", "diverged")


class Trace:
    """Per-round, per-node record of a run.

    Row ``k`` describes the iterate ``x_k`` together with the step size and
    flooring flag used to leave it.  A diverged run ends with the offending
    iterate flagged in its last row.
    """

    def __init__(self, node_count: int):
        self.node_count = node_count
        self._rows = {name: [] for name in ("err", "consensus_residual", "grad_residual", "alpha", "floored", "diverged")}
        self.ks: list[int] = []
        self.status = "ok"
        self.divergence_round: Optional[int] = None

    def record(self, states: NodeStates, x_star, alpha=None, floored=None, diverged=False):
        x = states.x
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.linalg.norm(x - np.asarray(x_star), axis=1)
            cres = np.linalg.norm(x - x.mean(axis=0), axis=1)
            gres = np.linalg.norm(states.g, axis=1)
        self.ks.append(states.k)
        self._rows["err"].append(err)
        self._rows["consensus_residual"].append(cres)
        self._rows["grad_residual"].append(gres)
        self._rows["alpha"].append(np.array(states.alpha if alpha is None else alpha, dtype=float))
        self._rows["floored"].append(np.zeros(self.node_count, bool) if floored is None else np.asarray(floored, bool))
        self._rows["diverged"].append(np.full(self.node_count, bool(diverged)))
        if diverged:
            self.status = "diverged"
            self.divergence_round = states.k

    def _arr(self, name):
        return np.array(self._rows[name]).reshape(len(self.ks), self.node_count)

    @property
    def rounds(self) -> int:
        return len(self.ks)

    @property
    def err(self):
        return self._arr("err")

    @property
    def consensus_residual(self):
        return self._arr("consensus_residual")

    @property
    def grad_residual(self):
        return self._arr("grad_residual")

    @property
    def alpha(self):
        return self._arr("alpha")

    @property
    def floored(self):
        return self._arr("floored")

    @property
    def diverged(self):
        return self._arr("diverged")

    @property
    def max_err(self) -> np.ndarray:
        return self.err.max(axis=1)

    def first_round_below(self, tol: float) -> Optional[int]:
        hit = np.flatnonzero(self.max_err < tol)
        return int(self.ks[hit[0]]) if hit.size else None

    def rows(self):
        err, cr, gr = self.err, self.consensus_residual, self.grad_residual
        al, fl, dv = self.alpha, self.floored, self.diverged
        for r, k in enumerate(self.ks):
            for i in range(self.node_count):
                yield (k, i, err[r, i], cr[r, i], gr[r, i], al[r, i], int(fl[r, i]), int(dv[r, i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for k, i, e, c, g, a, f, d in self.rows():
                w.writerow((k, i, repr(float(e)), repr(float(c)), repr(float(g)), repr(float(a)), f, d))
