"""Step-size selection: spectral criterion, distributed adaptive tuning, certified schedule.

``offline_alpha`` and ``adaptive_alpha`` pick the step at which the
optimization mode ``1 - alpha`` meets the consensus eigenvalue pushed up
from ``lambda2``.  The adaptive version learns the curvature spread ``s``
online through an :class:`RTracker`.

The certified scheduler keeps a two-component bound ``chi_k`` on
(stacked gradient norm at the network mean, weighted disagreement norm),
propagates it through :func:`F_map`, and picks the step that shrinks the
bound most while never letting either component grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .dnewton import NodeStates, floored_solve
from .netgraph import SpectralParams, Topology
from .objectives import ObjectiveSet


class StepSizeError(ValueError):
    pass


def _lam(lambda2) -> complex:
    lam = complex(lambda2)
    if not abs(lam) < 1:
        raise StepSizeError(f"|lambda2| must be < 1, got {abs(lam)}")
    return lam


def criterion_residual(alpha, lambda2, s=1.0):
    """``|upper root(alpha)| - (1 - alpha)``; negative for small ``alpha``, nonnegative at 1."""
    al = np.asarray(alpha, dtype=float)
    t = al * s
    p = lambda2 * (2.0 - t)
    sq = np.sqrt(p * p - 4.0 * lambda2 * (lambda2 - t) + 0j)
    return 0.5 * np.maximum(np.abs(p + sq), np.abs(p - sq)) - (1.0 - al)


def _bisect(lam: complex, s: np.ndarray) -> np.ndarray:
    """Bracketed root of the criterion on ``[0, 1]``: Illinois regula falsi, then bisection cleanup."""
    lo = np.zeros_like(s)
    hi = np.ones_like(s)
    flo = criterion_residual(lo, lam, s)
    fhi = criterion_residual(hi, lam, s)
    side = np.zeros(s.shape, dtype=int)
    for _ in range(60):
        x = (lo * fhi - hi * flo) / (fhi - flo)
        x = np.where(np.isfinite(x) & (x > lo) & (x < hi), x, 0.5 * (lo + hi))
        fx = criterion_residual(x, lam, s)
        neg = fx < 0
        # Illinois: halve the stale endpoint's value when the same side moves twice.
        fhi = np.where(neg & (side == -1), 0.5 * fhi, fhi)
        flo = np.where(~neg & (side == 1), 0.5 * flo, flo)
        lo, flo = np.where(neg, x, lo), np.where(neg, fx, flo)
        hi, fhi = np.where(neg, hi, x), np.where(neg, fhi, fx)
        side = np.where(neg, -1, 1)
        if np.all((hi - lo) <= 4 * np.finfo(float).eps * np.maximum(hi, 1e-300)) or np.all(np.abs(fx) <= 1e-15):
            break
    for _ in range(64):
        if np.all((hi - lo) <= 2 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            break
        mid = 0.5 * (lo + hi)
        neg = criterion_residual(mid, lam, s) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    # The residual may be flat to rounding near the root; return whichever end is closer to zero.
    rl = np.abs(criterion_residual(lo, lam, s))
    rh = np.abs(criterion_residual(hi, lam, s))
    return np.where(rl < rh, lo, hi)


def offline_alpha(lambda2) -> float:
    """Step size from the spectral criterion with unit curvature spread.

    Real nonnegative ``lambda2`` has the closed form ``1 - sqrt(lambda2)``,
    evaluated as ``(1 - lambda2) / (1 + sqrt(lambda2))`` to avoid
    cancellation near 1; otherwise the criterion is solved by bisection with
    complex arithmetic.  ``lambda2 == 0`` returns 1.
    """
    lam = _lam(lambda2)
    if lam == 0:
        return 1.0
    if lam.imag == 0 and lam.real > 0:
        return float((1.0 - lam.real) / (1.0 + np.sqrt(lam.real)))
    return float(_bisect(lam, np.ones(1))[0])


def adaptive_alpha(lambda2, s):
    """Solve the criterion with curvature spread ``s`` (scalar or array, all positive)."""
    lam = _lam(lambda2)
    s_arr = np.asarray(s, dtype=float)
    if np.any(~(s_arr > 0)):
        raise StepSizeError("curvature spread s must be positive")
    if lam == 0:
        out = np.ones_like(s_arr)
    else:
        out = _bisect(lam, np.atleast_1d(s_arr).astype(float)).reshape(s_arr.shape)
    return float(out) if out.ndim == 0 else out


def s_estimate(R) -> np.ndarray:
    """Midpoint ``(sigma_max + sigma_min) / 2`` of the singular values of ``R`` (single or stacked)."""
    R = np.asarray(R)
    sv = np.linalg.svd(R, compute_uv=False)
    smax, smin = sv[..., 0], sv[..., -1]
    if np.any(smin <= 1e-12 * smax) or np.any(smax == 0):
        raise StepSizeError("R is numerically singular (condition estimate above 1e12)")
    out = 0.5 * (smax + smin)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- R tracking


@dataclass(frozen=True)
class RTracker:
    """Per-node estimates of the curvature-ratio matrix and the last fed input."""

    R: np.ndarray
    last_input: np.ndarray
    weights: np.ndarray
    params: SpectralParams


def node_weights(params: SpectralParams) -> np.ndarray:
    """``I * v_i u_i / v^T u``; these average to 1, so consensus on the scaled inputs tracks R itself."""
    u, v = params.u, params.v
    vu = v @ u
    if abs(vu) < 1e-12:
        raise StepSizeError("v^T u vanishes")
    w = u.size * v * u / vu
    if np.iscomplexobj(w) and np.abs(w.imag).max() <= 1e-10 * np.abs(w).max():
        w = w.real
    return w


def r_inputs(weights, hess, H, beta) -> np.ndarray:
    I, N, _ = np.asarray(hess).shape
    Binv, _ = floored_solve(H, np.broadcast_to(np.eye(N), (I, N, N)), beta)
    return weights[:, None, None] * (np.asarray(hess) @ Binv)


def init_rtracker(params: Optional[SpectralParams], states: NodeStates, beta: float, start: str = "input") -> RTracker:
    """Start the tracker from each node's own input (``start="input"``) or from the identity."""
    if params is None:
        raise StepSizeError("R tracking needs spectral parameters (u, v, lambda2)")
    w = node_weights(params)
    inp = r_inputs(w, states.hess, states.H, beta)
    if start == "input":
        R = inp.copy()
    elif start == "identity":
        I, N = states.x.shape
        R = np.broadcast_to(np.eye(N), (I, N, N)).astype(inp.dtype).copy()
    else:
        raise StepSizeError(f"unknown tracker start {start!r}")
    return RTracker(R, inp, w, params)


def r_step(W, tracker: RTracker, states_new: NodeStates, beta: float) -> RTracker:
    """One estimate-form consensus round on the curvature-ratio inputs at the new states."""
    if tracker.params is None:
        raise StepSizeError("R tracking needs spectral parameters")
    inp = r_inputs(tracker.weights, states_new.hess, states_new.H, beta)
    Wm = W.weights if isinstance(W, Topology) else np.asarray(W)
    R = np.tensordot(Wm, tracker.R + inp - tracker.last_input, axes=(1, 0))
    return RTracker(R, inp, tracker.weights, tracker.params)


# -------------------------------------------------------- stability constants


@dataclass(frozen=True)
class Similarity:
    """``W = T^{-1} Lambda T`` with ``Lambda`` diagonal."""

    T: np.ndarray
    T_inv: np.ndarray
    eigenvalues: np.ndarray
    unitary: bool


def diagonalize(W) -> Similarity:
    """Unitary ``T`` from the complex Schur form when ``W`` is normal, otherwise ``T = V^{-1}`` from ``eig``.

    Raises :class:`StepSizeError` for defective (non-diagonalizable) ``W``.
    """
    Wm = W.weights if isinstance(W, Topology) else np.asarray(W, dtype=float)
    S, Z = sla.schur(Wm, output="complex")
    off = np.abs(np.triu(S, 1)).max() if S.shape[0] > 1 else 0.0
    if off <= 1e-10 * max(1.0, np.abs(Wm).max()):
        return Similarity(Z.conj().T, Z, np.diag(S).copy(), True)
    lam, V = np.linalg.eig(Wm)
    V = V / np.linalg.norm(V, axis=0)
    if np.linalg.cond(V) > 1e10:
        raise StepSizeError("weight matrix is defective or nearly so; Jordan chains are not supported")
    return Similarity(np.linalg.inv(V), V, lam, False)


@dataclass(frozen=True)
class StabilityConstants:
    tau: float
    sigma_c: float
    eta: float
    upsilon: float
    lambda2: float
    beta: float
    gamma: float
    delta: float
    mu: np.ndarray
    nu: np.ndarray
    psi: np.ndarray
    Omega: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    P: np.ndarray
    a: float
    b: float
    c: float
    d: float
    e: float
    h: float
    similarity: Similarity = field(repr=False)
    literal: bool = False
    _f0: np.ndarray = field(repr=False, default=None)
    _f1: np.ndarray = field(repr=False, default=None)
    _g0: np.ndarray = field(repr=False, default=None)
    _g1: np.ndarray = field(repr=False, default=None)

    def f(self, alpha):
        """Growth factor of the weighted disagreement norm; broadcasts over ``alpha``."""
        al = np.asarray(alpha, dtype=float)
        if self.literal:
            return _literal_f(self, al)
        M = self._f0 + al[..., None, None] * self._f1
        out = np.abs(np.linalg.eigvalsh(M)).max(axis=-1)
        return float(out) if out.ndim == 0 else out

    def g(self, alpha):
        al = np.asarray(alpha, dtype=float)
        if self.literal:
            return _literal_g(self, al)
        v = self._g0 + al[..., None] * self._g1
        out = 2.0 * np.linalg.norm(v, axis=-1)
        return float(out) if out.ndim == 0 else out

    def lyapunov_residual(self) -> float:
        return float(np.abs(self.Phi.T @ self.P @ self.Phi - self.P + np.eye(3)).max())

    def theta_P(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(np.sqrt(theta @ self.P @ theta))


def solve_lyapunov(Phi: np.ndarray) -> np.ndarray:
    """``P`` with ``Phi^T P Phi = P - I``, through the 9x9 Kronecker system."""
    n = Phi.shape[0]
    K = np.kron(Phi.T, Phi.T) - np.eye(n * n)
    vecP = np.linalg.solve(K, -np.eye(n).ravel(order="F"))
    P = vecP.reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def _inv_sqrt(P):
    lam, U = np.linalg.eigh(P)
    return (U / np.sqrt(lam)) @ U.T


def compute_constants(W, beta: float, gamma: float, delta: float, literal: bool = False) -> StabilityConstants:
    """Assemble the certificate constants for ``W`` and curvature bounds ``(beta, gamma, delta)``.

    The default build yields bounds that hold as inequalities (see the
    project notes for the deviations from the printed formulas);
    ``literal=True`` reproduces the printed expressions for comparison.
    """
    if beta <= 0 or gamma < 0 or delta < 0:
        raise StepSizeError("need beta > 0 and gamma, delta >= 0")
    Wm = W.weights if isinstance(W, Topology) else np.asarray(W, dtype=float)
    I = Wm.shape[0]
    sim = diagonalize(Wm)
    ev = np.abs(sim.eigenvalues)
    perron = int(np.argmin(np.abs(sim.eigenvalues - 1.0)))
    lam2 = float(np.delete(ev, perron).max()) if I > 1 else 0.0
    if lam2 >= 1:
        raise StepSizeError(f"|lambda2| = {lam2} >= 1; the Lyapunov equation has no positive solution")
    tau = float(np.linalg.norm(sim.T, 2))
    sc = float(np.linalg.norm(sim.T_inv, 2))
    eta = float(np.linalg.norm(np.eye(I) - Wm, 2))
    ups = float(np.linalg.norm(np.full((I, I), 1.0 / I) - Wm, 2))
    bg = beta * gamma
    # In the default build the disagreement norms are converted back with sigma_c (exact for unitary T)
    # and the squared gradient-bound expansion keeps its cross terms.
    k = 1.0 if literal else sc
    mu = sc * np.array([gamma, 1.0, 0.0])
    nu = sc * np.array([beta * delta * (bg + 1), 0.0 if literal else beta * beta * delta, beta])
    psi = np.array([beta * tau, bg * tau * ups, beta * delta * tau * ups])
    o12 = beta * delta if literal else beta * delta * (bg + 1)
    Omega = sc**2 / 2 * np.array([
        [bg * delta * (bg + 2), o12, bg],
        [o12, beta**2 * delta, beta],
        [bg, beta, 0.0],
    ])
    Phi = np.array([
        [lam2, 0.0, 0.0],
        [k * gamma * tau * eta * ups, lam2, 0.0],
        [k * delta * tau * eta * ups, 0.0, lam2],
    ])
    Psi = k * np.array([
        [bg * tau, beta * tau, 0.0],
        [bg * gamma * tau * ups, bg * tau * ups, 0.0],
        [bg * delta * tau * ups, beta * delta * tau * ups, 0.0],
    ])
    P = solve_lyapunov(Phi)
    Pinv = np.linalg.inv(P)
    Pm = _inv_sqrt(P)
    b = beta**2 * delta / 2
    if literal:
        a = float(mu @ Pinv @ mu)
        c = float(nu @ Pinv @ nu)
        Om_half = sla.sqrtm(Omega)
        d = float(np.linalg.norm(Om_half @ Pm, 2) ** 2)
        e = float(np.linalg.norm(Pinv, 2))
    else:
        a = float(np.sqrt(mu @ Pinv @ mu))
        c = float(np.sqrt(nu @ Pinv @ nu))
        d = max(float(np.linalg.eigvalsh(Pm @ Omega @ Pm).max()), 0.0)
        e = float(1.0 / np.linalg.eigvalsh(P).max())
    h = float(psi @ P @ psi)

    def sym(M):
        return 0.5 * (M + M.T)

    f0 = Pm @ sym(2 * Phi.T @ P @ Psi) @ Pm
    f1 = Pm @ sym(Psi.T @ P @ Psi) @ Pm
    g0 = Pm @ Phi.T @ P @ psi
    g1 = Pm @ Psi.T @ P @ psi
    return StabilityConstants(tau, sc, eta, ups, lam2, beta, gamma, delta, mu, nu, psi, Omega, Phi, Psi, P,
                              a, b, c, d, e, h, sim, literal, f0, f1, g0, g1)


def _literal_f(C: StabilityConstants, al):
    Pinv = np.linalg.inv(C.P)
    vals = [np.linalg.norm(C.Psi.T @ C.P @ (2 * C.Phi + x * C.Psi) @ Pinv, 2) for x in np.atleast_1d(al).ravel()]
    out = np.array(vals).reshape(np.shape(al))
    return float(out) if out.ndim == 0 else out


def _literal_g(C: StabilityConstants, al):
    Pinv = np.linalg.inv(C.P)
    vals = []
    for x in np.atleast_1d(al).ravel():
        M = C.Phi + x * C.Psi
        vals.append(2 * abs(C.psi @ C.P @ M @ Pinv @ M.T @ C.P @ C.psi))
    out = np.array(vals).reshape(np.shape(al))
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ F map and schedule


def F_map(C: StabilityConstants, chi, alpha, return_clamped: bool = False):
    """Propagate the bound pair ``chi`` one round under step ``alpha`` (scalar or array).

    The second component's radicand is clamped at zero; pass
    ``return_clamped=True`` to learn whether that happened.
    """
    x1, x2 = (float(v) for v in chi)
    if x1 < 0 or x2 < 0:
        raise StepSizeError(f"chi must be nonnegative, got {chi}")
    al = np.asarray(alpha, dtype=float)
    y1 = (1 - al) * x1 + al * C.a * x2 + al**2 * C.b * x1**2 + al * C.c * x1 * x2 + al * C.d * x2**2
    rad = (1 - C.e + al * C.f(al)) * x2**2 + al * C.g(al) * x2 * x1 + al**2 * C.h * x1**2
    clamped = rad < 0
    y2 = np.sqrt(np.maximum(rad, 0.0))
    out = np.stack([y1, y2], axis=-1)
    return (out, clamped) if return_clamped else out


def _feasible(C, chi, al):
    Y = F_map(C, chi, al)
    return np.all(Y <= np.asarray(chi, dtype=float), axis=-1)


def schedule_alpha(C: StabilityConstants, chi, grid_step: float = 1e-3, tol: float = 1e-9) -> float:
    """Minimize ``||F(chi, alpha)||`` over ``alpha in [0, 1]`` subject to ``F(chi, alpha) <= chi``.

    A uniform grid plus a geometric grid toward 0 locates the best feasible
    point; feasibility boundaries next to it are found by bisection and the
    bracket is refined by bounded golden-section search.  ``alpha = 0`` is
    always feasible and is returned when nothing better is.
    """
    chi = np.asarray(chi, dtype=float)
    grid = np.unique(np.concatenate([np.arange(0.0, 1.0 + grid_step / 2, grid_step), np.geomspace(1e-12, grid_step, 200)]))
    grid = grid[grid <= 1.0]
    Y = F_map(C, chi, grid)
    feas = np.all(Y <= chi, axis=-1)
    feas[0] = True
    obj = np.where(feas, np.linalg.norm(Y, axis=-1), np.inf)
    j = int(np.argmin(obj))
    best_a, best_v = float(grid[j]), float(obj[j])

    def value(a):
        return float(np.linalg.norm(F_map(C, chi, a)))

    def feasible(a):
        return bool(_feasible(C, chi, a))

    def boundary(inside, outside):
        for _ in range(80):
            mid = 0.5 * (inside + outside)
            if feasible(mid):
                inside = mid
            else:
                outside = mid
            if abs(outside - inside) <= tol * 1e-3:
                break
        return inside

    lo = float(grid[j - 1]) if j > 0 else 0.0
    hi = float(grid[j + 1]) if j + 1 < grid.size else 1.0
    if not feasible(lo):
        lo = boundary(best_a, lo)
    if not feasible(hi):
        hi = boundary(best_a, hi)
    cands = [lo, hi]
    if hi > lo:
        res = minimize_scalar(value, bounds=(lo, hi), method="bounded", options={"xatol": tol})
        cands.append(float(res.x))
    for a in cands:
        if feasible(a):
            v = value(a)
            if v < best_v:
                best_a, best_v = a, v
    return best_a


# ------------------------------------------------------------ certified pair


def certified_pair(C: StabilityConstants, objs: ObjectiveSet, states: NodeStates):
    """``(||stacked grad f at x_mean||, ||theta||_P)`` and the raw ``theta`` vector."""
    X = states.x
    I = X.shape[0]
    xbar = X.mean(axis=0)
    gbar = objs.gradients(objs.at_common(xbar)).mean(axis=0)
    gnorm = float(np.sqrt(I) * np.linalg.norm(gbar))
    T = C.similarity.T
    xt = X - xbar
    gt = states.g - states.g.mean(axis=0)
    Ht = (states.H - states.H.mean(axis=0)).reshape(I, -1)
    theta = np.array([np.linalg.norm(T @ xt), np.linalg.norm(T @ gt), np.linalg.norm(T @ Ht)])
    return np.array([gnorm, C.theta_P(theta)]), theta
