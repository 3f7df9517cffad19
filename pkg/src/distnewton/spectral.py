"""Linearized rate models of the proposed iteration near the optimum.

Two equivalent descriptions are built here.  :func:`build_gamma` gives the
joint ``(x, g)`` Jacobian over the stacked iterates, whose spectrum contains
``N`` stationary modes at 1 that must be deflated before reading off a rate.
:func:`build_local_rate_model` works in mean/disagreement coordinates
``(x_mean - x_star, x - 1 x_mean, g - 1 g_mean)`` where those modes are
absent.  The module also evaluates the quadratic eigenvalue predictor for
small step sizes and the first-order generalized eigenvalue perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .netgraph import SpectralParams, Topology


class SpectralError(RuntimeError):
    pass


def _W(top) -> np.ndarray:
    return top.weights if isinstance(top, Topology) else np.asarray(top, dtype=float)


def _check_hstar(H_star):
    H_star = np.asarray(H_star, dtype=float)
    if np.linalg.cond(H_star) > 1e14:
        raise SpectralError("aggregate Hessian at the optimum is singular")
    return H_star


@dataclass(frozen=True)
class GammaModel:
    """``Gamma(alpha) = gamma0 + alpha * slope`` on the stacked ``(x, g)`` state."""

    gamma0: np.ndarray
    slope: np.ndarray
    node_count: int
    dimension: int

    def at(self, alpha: float) -> np.ndarray:
        return self.gamma0 + alpha * self.slope


def gamma_model(W, local_hessians, H_star) -> GammaModel:
    Wm = _W(W)
    I = Wm.shape[0]
    Hs = np.asarray(local_hessians, dtype=float)
    N = Hs.shape[-1]
    Hinv = np.linalg.inv(_check_hstar(H_star))
    Wb = np.kron(Wm, np.eye(N))
    Hblk = np.zeros((I * N, I * N))
    for i in range(I):
        Hblk[i * N:(i + 1) * N, i * N:(i + 1) * N] = Hs[i]
    Hinv_blk = np.kron(np.eye(I), Hinv)
    Z = np.zeros_like(Wb)
    g0 = np.block([[Wb, Z], [Wb @ Hblk @ (Wb - np.eye(I * N)), Wb]])
    sl = np.block([[Z, -Hinv_blk], [Z, -Wb @ Hblk @ Hinv_blk]])
    return GammaModel(g0, sl, I, N)


def build_gamma(W, local_hessians, H_star, alpha: float) -> np.ndarray:
    """Jacobian of one proposed round at the optimum for a common step ``alpha``."""
    return gamma_model(W, local_hessians, H_star).at(alpha)


@dataclass(frozen=True)
class Deflation:
    radius: float
    gap: float
    removed: np.ndarray
    remaining: np.ndarray


def deflate(eigs: np.ndarray, n_remove: int, min_gap: float = 1e-6) -> Deflation:
    """Drop the ``n_remove`` eigenvalues nearest ``1 + 0j`` and report the largest remaining modulus.

    Raises :class:`SpectralError` if the dropped cluster is not separated
    from the rest by at least ``min_gap``.
    """
    d = np.abs(eigs - 1.0)
    order = np.argsort(d, kind="stable")
    removed, rest = eigs[order[:n_remove]], eigs[order[n_remove:]]
    gap = float(d[order[n_remove]] - d[order[n_remove - 1]]) if rest.size and n_remove else np.inf
    if gap < min_gap:
        raise SpectralError(f"eigenvalue cluster at 1 is not separated (gap {gap:.2e} < {min_gap:.0e})")
    radius = float(np.abs(rest).max()) if rest.size else 0.0
    return Deflation(radius, gap, removed, rest)


def deflated_radius(model: GammaModel, alpha: float, min_gap: float = 1e-6) -> float:
    return deflate(np.linalg.eigvals(model.at(alpha)), model.dimension, min_gap).radius


def scan_alpha_opt(builder, alpha_grid: Iterable[float], min_gap: float = 1e-6):
    """Step size on ``alpha_grid`` minimizing the deflated spectral radius.

    ``builder`` is a :class:`GammaModel` or a callable returning the
    Jacobian matrix for a given step; in the callable case the number of
    stationary modes is read from ``builder.dimension`` if present, else
    must be 2 (planar problems).

    Returns
    -------
    alpha_opt : float
    curve : ndarray, shape (len(alpha_grid), 2)
        Columns are ``alpha`` and the deflated radius.
    """
    grid = np.asarray(list(alpha_grid), dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("alpha grid must be non-empty and lie inside (0, 1)")
    if isinstance(builder, GammaModel):
        make, n = builder.at, builder.dimension
    else:
        make, n = builder, getattr(builder, "dimension", 2)
    rates = np.array([deflate(np.linalg.eigvals(make(a)), n, min_gap).radius for a in grid])
    best = int(np.argmin(rates))
    return float(grid[best]), np.column_stack([grid, rates])


def refine_alpha_opt(model: GammaModel, lo: float, hi: float, tol: float = 1e-7) -> float:
    """Golden-section refinement of the deflated-radius minimizer inside ``[lo, hi]``."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda a: deflated_radius(model, a), bounds=(lo, hi), method="bounded",
                          options={"xatol": tol})
    return float(res.x)


def theorem2_roots(mu0, s, alpha):
    """Both roots of ``mu^2 - mu0 (2 - alpha s) mu + mu0 (mu0 - alpha s) = 0``.

    The larger-modulus root comes first; it is formed without cancellation
    and the other follows from the product of the roots.  Broadcasts over
    array arguments.
    """
    mu0 = np.asarray(mu0, dtype=complex)
    t = np.asarray(alpha, dtype=float) * np.asarray(s, dtype=float)
    p = mu0 * (2.0 - t)
    q = mu0 * (mu0 - t)
    sq = np.sqrt(p * p - 4.0 * q)
    sign = np.where((np.conj(p) * sq).real >= 0, 1.0, -1.0)
    big = 0.5 * (p + sign * sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big != 0, q / np.where(big != 0, big, 1.0), 0.0)
    return big, small


def predicted_roots_display(lam2, s, alpha):
    """The same roots written in the ``lam2 / 2 (2 - a s +- sqrt(...))`` form, ``+`` branch first."""
    lam2 = complex(lam2)
    t = alpha * s
    rad = np.sqrt(complex(t * t + 4 * t * (1 / lam2 - 1)))
    return lam2 / 2 * (2 - t + rad), lam2 / 2 * (2 - t - rad)


@dataclass(frozen=True)
class RootCheckReport:
    alphas: np.ndarray
    deviations: np.ndarray
    predicted: np.ndarray
    matched: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.deviations.size else 0.0

    @property
    def constants(self) -> np.ndarray:
        """``deviation / alpha^2`` per step size (NaN at zero)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.alphas > 0, self.deviations / self.alphas**2, np.nan)

    def doubling_ratios(self) -> np.ndarray:
        """``dev(alpha_{j+1}) / dev(alpha_j)`` for consecutive entries."""
        d = self.deviations
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


def verify_theorem2(model: GammaModel, params: SpectralParams, s: float, alphas: Sequence[float],
                    mu0=None, ambiguity_tol: float = 0.0) -> RootCheckReport:
    """Compare both predicted roots around ``mu0`` (default ``lambda2``) with the nearest actual eigenvalues."""
    mu0 = params.lambda2 if mu0 is None else mu0
    alphas = np.asarray(alphas, dtype=float)
    devs, preds, matched = [], [], []
    for a in alphas:
        eigs = np.linalg.eigvals(model.at(a))
        pr = np.array(theorem2_roots(mu0, s, a))
        m = []
        dev = 0.0
        for p in pr:
            d = np.abs(eigs - p)
            order = np.argsort(d)
            if ambiguity_tol > 0 and d[order[1]] - d[order[0]] < ambiguity_tol and not np.isclose(
                    eigs[order[0]], eigs[order[1]], atol=ambiguity_tol):
                raise SpectralError(f"alpha={a}: predicted root {p} is equidistant from two eigenvalues")
            m.append(eigs[order[0]])
            dev = max(dev, float(d[order[0]]))
        devs.append(dev)
        preds.append(pr)
        matched.append(m)
    return RootCheckReport(alphas, np.array(devs), np.array(preds), np.array(matched))


def rmatrix(local_hessians, H_star, u, v) -> np.ndarray:
    """``(1 / v^T u) sum_i v_i u_i H_i H_star^{-1}``; complex eigenvectors allowed, no conjugation."""
    u = np.asarray(u)
    v = np.asarray(v)
    vu = v @ u
    if abs(vu) < 1e-12:
        raise SpectralError(f"v^T u = {vu} is too small")
    w = v * u / vu
    Hinv = np.linalg.inv(_check_hstar(H_star))
    R = np.einsum("i,ijk->jk", w, np.asarray(local_hessians, dtype=float)) @ Hinv
    if np.iscomplexobj(R) and np.abs(R.imag).max() <= 1e-12 * max(1.0, np.abs(R).max()):
        R = R.real
    return R


def geig_perturbation(A, A_tilde, B, lam, x, y):
    """First-order shift of the generalized eigenvalue ``lam`` of ``(A, B)`` when ``A`` becomes ``A + A_tilde``.

    ``x``, ``y`` are right and left eigenvectors; ``lam`` itself is only
    used to check the eigentriple.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    den = y @ np.asarray(B) @ x
    if abs(den) < 1e-12:
        raise SpectralError("y^T B x vanishes; eigentriple is degenerate")
    r = np.linalg.norm(np.asarray(A) @ x - lam * (np.asarray(B) @ x))
    if r > 1e-6 * max(1.0, np.linalg.norm(A)) * np.linalg.norm(x):
        raise SpectralError(f"(lam, x) is not an eigenpair of (A, B): residual {r:.2e}")
    return (y @ np.asarray(A_tilde) @ x) / den


@dataclass(frozen=True)
class LocalRateModel:
    """Linearized map over ``(x_mean_err, x_disagreement, g_disagreement)``."""

    theta: np.ndarray
    upsilon: np.ndarray
    node_count: int
    dimension: int

    @property
    def operator(self) -> np.ndarray:
        return self.theta - self.upsilon

    def rate(self) -> float:
        """Spectral radius of the operator restricted to states with zero-mean disagreement blocks."""
        return float(np.abs(self.physical_eigenvalues()).max())

    def physical_eigenvalues(self) -> np.ndarray:
        I, N = self.node_count, self.dimension
        Q = _disagreement_basis(I, N)
        M = self.operator @ Q
        # Q has orthonormal columns spanning an invariant subspace, so Q^T M is its restriction.
        return np.linalg.eigvals(Q.T @ M)


def _disagreement_basis(I: int, N: int) -> np.ndarray:
    """Orthonormal basis of R^N x {zero-mean R^{IN}} x {zero-mean R^{IN}}."""
    ones = np.ones((I, 1)) / np.sqrt(I)
    full, _ = np.linalg.qr(np.hstack([ones, np.random.default_rng(0).standard_normal((I, I - 1))]))
    C = np.kron(full[:, 1:], np.eye(N))
    z1 = np.zeros((N, C.shape[1]))
    zc = np.zeros((I * N, C.shape[1]))
    zn = np.zeros((I * N, N))
    top = np.hstack([np.eye(N), z1, z1])
    mid = np.hstack([zn, C, zc])
    bot = np.hstack([zn, zc, C])
    return np.vstack([top, mid, bot])


def build_local_rate_model(W, local_hessians, H_star, alpha) -> LocalRateModel:
    """Assemble the mean/disagreement linearization for per-node steps ``alpha`` (scalar or length ``I``)."""
    Wm = _W(W)
    I = Wm.shape[0]
    Hs = np.asarray(local_hessians, dtype=float)
    N = Hs.shape[-1]
    Hinv = np.linalg.inv(_check_hstar(H_star))
    a_vec = np.broadcast_to(np.asarray(alpha, dtype=float), (I,))
    abar = float(a_vec.mean())
    IN = I * N
    En = np.eye(N)
    Wt = np.kron(Wm - np.full((I, I), 1.0 / I), En)
    A = np.kron(np.full((I, I), 1.0 / I), En)
    It = np.eye(IN) - A
    one = np.kron(np.ones((I, 1)), En)
    Hblk = np.zeros((IN, IN))
    for i in range(I):
        Hblk[i * N:(i + 1) * N, i * N:(i + 1) * N] = Hs[i]
    Hinv_blk = np.kron(np.eye(I), Hinv)
    al = np.kron(np.diag(a_vec), En)
    a_row = np.kron(np.full((1, I), 1.0 / I), En)
    Z_NI = np.zeros((N, IN))
    Z_IN = np.zeros((IN, N))
    Z = np.zeros((IN, IN))
    theta = np.block([[En, Z_NI, Z_NI], [Z_IN, Wt, Z], [Z_IN, Wt @ Hblk @ (Wt - np.eye(IN)), Wt]])
    HAH = Hinv_blk @ A @ Hblk
    ups = np.block([
        [abar * En, abar * Hinv @ a_row @ Hblk, Z_NI],
        [It @ al @ one, It @ al @ HAH, It @ al @ Hinv_blk],
        # Signs here follow a direct linearization of the gradient-disagreement update.
        [Wt @ Hblk @ al @ one, Wt @ Hblk @ al @ HAH, Wt @ Hblk @ al @ Hinv_blk],
    ])
    return LocalRateModel(theta, ups, I, N)
