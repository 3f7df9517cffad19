"""Local objective functions, problem instances and the centralized oracle.

Every node ``i`` owns a smooth function ``f^i``; the network minimizes the
average ``f = (1/I) sum_i f^i``.  Two families are provided: squared
range-residual localization objectives and strongly convex quadratics.
:class:`ObjectiveSet` evaluates all nodes at once on a stacked ``(I, N)``
array of local iterates, which is what the round engine consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# Substream order for SeedSequence.spawn; changing it changes every instance.
ANCHOR_STREAM, NOISE_STREAM, INIT_STREAM = 0, 1, 2
ANCHOR_VAR = 100.0


class ObjectiveError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def instance_streams(seed: int, count: int = 3):
    """Independent PCG64 generators derived from one integer seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


class LocalObjective:
    """Evaluation contract for a single node's objective."""

    dimension: int

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class QuadraticObjective(LocalObjective):
    """``f(x) = 0.5 x^T Q x + b^T x`` with symmetric ``Q``."""

    Q: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if Q.shape != (b.size, b.size):
            raise ObjectiveError(f"Q has shape {Q.shape} but b has length {b.size}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise ObjectiveError("Q must be symmetric")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "b", b)

    @classmethod
    def centered(cls, Q, c) -> "QuadraticObjective":
        """``0.5 (x - c)^T Q (x - c)`` up to an additive constant."""
        Q = np.asarray(Q, dtype=float)
        return cls(Q, -Q @ np.asarray(c, dtype=float))

    @property
    def dimension(self) -> int:
        return self.b.size

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.b @ x)

    def gradient(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.b

    def hessian(self, x):
        return self.Q.copy()


@dataclass(frozen=True)
class RangeObjective(LocalObjective):
    """``f(x) = (||x - a||^2 - z)^2`` for one anchor ``a`` and one squared-range reading ``z``."""

    anchor: np.ndarray
    z: float

    @property
    def dimension(self) -> int:
        return np.asarray(self.anchor).size

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.anchor
        return float((d @ d - self.z) ** 2)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.anchor
        return 4.0 * (d @ d - self.z) * d

    def hessian(self, x):
        d = np.asarray(x, dtype=float) - self.anchor
        return 8.0 * np.outer(d, d) + 4.0 * (d @ d - self.z) * np.eye(d.size)


@dataclass(frozen=True)
class LocalizationInstance:
    """Target-localization data: anchors, noisy squared ranges and the generating seed."""

    anchors: np.ndarray
    z: np.ndarray
    noise_var: float
    x_true: np.ndarray
    seed: int

    @property
    def node_count(self) -> int:
        return self.anchors.shape[0]

    @property
    def dimension(self) -> int:
        return self.anchors.shape[1]

    def objective_set(self) -> "ObjectiveSet":
        return ObjectiveSet([RangeObjective(a, float(z)) for a, z in zip(self.anchors, self.z)])

    def initial_points(self, scale: float = 1.0) -> np.ndarray:
        """Per-node starting points drawn N(x_true, scale^2 I) from the instance's init substream."""
        rng = instance_streams(self.seed)[INIT_STREAM]
        return rng.normal(self.x_true, scale, size=self.anchors.shape)


def make_localization_instance(I: int, x_true, noise_var: float, seed: int) -> LocalizationInstance:
    """Anchors ~ N(x_true, 100 I) and ``z^i = ||x_true - a^i||^2 + n^i`` with ``n^i ~ N(0, noise_var)``."""
    if I < 1:
        raise ObjectiveError(f"need at least one node, got {I}")
    if noise_var < 0:
        raise ObjectiveError(f"noise variance must be nonnegative, got {noise_var}")
    x_true = np.asarray(x_true, dtype=float).reshape(-1)
    rng_a, rng_n, _ = instance_streams(seed)
    anchors = rng_a.normal(x_true, np.sqrt(ANCHOR_VAR), size=(I, x_true.size))
    noise = rng_n.normal(0.0, np.sqrt(noise_var), size=I)
    z = ((x_true - anchors) ** 2).sum(axis=1) + noise
    return LocalizationInstance(anchors, z, float(noise_var), x_true, int(seed))


def localization_value_grad_hess(instance: LocalizationInstance, i: int, x):
    if not 0 <= i < instance.node_count:
        raise IndexError(f"node index {i} out of range for {instance.node_count} nodes")
    obj = RangeObjective(instance.anchors[i], float(instance.z[i]))
    return obj.value(x), obj.gradient(x), obj.hessian(x)


def ell_function(obj: LocalObjective, x) -> np.ndarray:
    """``hessian(x) @ x - gradient(x)``."""
    x = np.asarray(x, dtype=float)
    return obj.hessian(x) @ x - obj.gradient(x)


class ObjectiveSet:
    """The ``I`` local objectives of a network, evaluated on stacked iterates.

    Sets built entirely from range or quadratic objectives are evaluated in
    vectorized form; mixed sets fall back to a per-node loop.
    """

    def __init__(self, locals_: Sequence[LocalObjective]):
        locals_ = list(locals_)
        if not locals_:
            raise ObjectiveError("objective set is empty")
        dims = {obj.dimension for obj in locals_}
        if len(dims) != 1:
            raise ObjectiveError(f"local objectives disagree on dimension: {sorted(dims)}")
        self.locals = locals_
        self.dimension = dims.pop()
        self._kind = None
        if all(isinstance(o, RangeObjective) for o in locals_):
            self._kind = "range"
            self._A = np.array([o.anchor for o in locals_], dtype=float)
            self._z = np.array([o.z for o in locals_], dtype=float)
        elif all(isinstance(o, QuadraticObjective) for o in locals_):
            self._kind = "quad"
            self._Q = np.array([o.Q for o in locals_])
            self._b = np.array([o.b for o in locals_])

    def __len__(self):
        return len(self.locals)

    @property
    def node_count(self) -> int:
        return len(self.locals)

    def permuted(self, perm) -> "ObjectiveSet":
        return ObjectiveSet([self.locals[p] for p in perm])

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != (len(self.locals), self.dimension):
            raise ObjectiveError(f"expected stacked iterates of shape {(len(self.locals), self.dimension)}, got {X.shape}")
        return X

    def values(self, X) -> np.ndarray:
        X = self._check(X)
        if self._kind == "range":
            r = ((X - self._A) ** 2).sum(axis=1) - self._z
            return r**2
        if self._kind == "quad":
            return 0.5 * np.einsum("ij,ijk,ik->i", X, self._Q, X) + (self._b * X).sum(axis=1)
        return np.array([o.value(x) for o, x in zip(self.locals, X)])

    def gradients(self, X) -> np.ndarray:
        X = self._check(X)
        if self._kind == "range":
            D = X - self._A
            r = (D**2).sum(axis=1) - self._z
            return 4.0 * r[:, None] * D
        if self._kind == "quad":
            return np.einsum("ijk,ik->ij", self._Q, X) + self._b
        return np.array([o.gradient(x) for o, x in zip(self.locals, X)])

    def hessians(self, X) -> np.ndarray:
        X = self._check(X)
        if self._kind == "range":
            D = X - self._A
            r = (D**2).sum(axis=1) - self._z
            return 8.0 * D[:, :, None] * D[:, None, :] + 4.0 * r[:, None, None] * np.eye(self.dimension)
        if self._kind == "quad":
            return self._Q.copy()
        return np.array([o.hessian(x) for o, x in zip(self.locals, X)])

    def ells(self, X) -> np.ndarray:
        X = self._check(X)
        return np.einsum("ijk,ik->ij", self.hessians(X), X) - self.gradients(X)

    def at_common(self, x):
        """Stack a single point for every node."""
        return np.tile(np.asarray(x, dtype=float), (len(self.locals), 1))


def global_aggregate(objs: ObjectiveSet, x):
    """Value, gradient and Hessian of ``f = (1/I) sum_i f^i`` at ``x``."""
    X = objs.at_common(x)
    return float(objs.values(X).mean()), objs.gradients(X).mean(axis=0), objs.hessians(X).mean(axis=0)


def centralized_newton(objs: ObjectiveSet, x0, tol: float = 1e-10, max_iter: int = 100, alpha: float = 1.0):
    """Undamped (by default) Newton iteration on the aggregate objective.

    Raises
    ------
    ConvergenceError
        If the Hessian becomes numerically singular (condition number above
        1e14) or the gradient norm stays above ``tol`` after ``max_iter``
        iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter + 1):
        _, g, H = global_aggregate(objs, x)
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x
        if np.linalg.cond(H) > 1e14:
            raise ConvergenceError(f"aggregate Hessian is singular at x={x} (cond > 1e14)")
        x_new = x - alpha * np.linalg.solve(H, g)
        if not np.all(np.isfinite(x_new)):
            raise ConvergenceError("Newton iterate became non-finite")
        if np.array_equal(x_new, x):
            # Stalled at machine precision; accept if the gradient is tiny relative to its scale.
            scale = max(1.0, np.abs(objs.gradients(objs.at_common(x))).max())
            if gn <= 1e3 * np.finfo(float).eps * scale:
                return x
            break
        x = x_new
    raise ConvergenceError(f"Newton did not reach ||grad|| <= {tol} in {max_iter} iterations (last {gn:.3e})")


def newton_1d_quartic(x0: float, iters: int) -> np.ndarray:
    """Iterates of Newton's method on ``x**4``; each step multiplies by 2/3."""
    xs = [float(x0)]
    for _ in range(iters):
        x = xs[-1]
        xs.append(x - (4 * x**3) / (12 * x**2) if x != 0 else 0.0)
    return np.array(xs)


def hessian_lipschitz_estimate(objs: ObjectiveSet, lo, hi, samples: int, seed: int) -> float:
    """Largest sampled ``||H^i(x) - H^i(y)||_F / ||x - y||`` over pairs in the box ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (objs.dimension,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (objs.dimension,))
    I = len(objs)
    best = 0.0
    for _ in range(samples):
        X = rng.uniform(lo, hi, size=(I, objs.dimension))
        Y = rng.uniform(lo, hi, size=(I, objs.dimension))
        num = np.linalg.norm(objs.hessians(X) - objs.hessians(Y), axis=(1, 2))
        den = np.linalg.norm(X - Y, axis=1)
        best = max(best, float((num / den).max()))
    return best


@dataclass(frozen=True)
class AssumptionProposal:
    """Sampled candidates for the curvature constants of the global scheduler."""

    beta: float
    gamma: float
    delta: float
    samples: int


def propose_assumption_constants(objs: ObjectiveSet, lo, hi, samples: int = 2000, seed: int = 0) -> AssumptionProposal:
    """Sample the box to suggest ``beta``, ``gamma`` and ``delta``.

    ``beta`` bounds the inverse aggregate Hessian, ``gamma`` the local
    Hessian norms and ``delta`` the local Hessian Lipschitz constants.  The
    numbers are empirical lower estimates of the true suprema and are meant
    to be reviewed, not plugged in blindly.
    """
    rng = np.random.default_rng(seed)
    lo_b = np.broadcast_to(np.asarray(lo, dtype=float), (objs.dimension,))
    hi_b = np.broadcast_to(np.asarray(hi, dtype=float), (objs.dimension,))
    beta = gamma = 0.0
    for _ in range(samples):
        x = rng.uniform(lo_b, hi_b)
        Hs = objs.hessians(objs.at_common(x))
        gamma = max(gamma, float(np.linalg.norm(Hs, ord=2, axis=(1, 2)).max()))
        lmin = np.linalg.eigvalsh(Hs.mean(axis=0))[0]
        beta = max(beta, np.inf if lmin <= 0 else 1.0 / lmin)
    delta = hessian_lipschitz_estimate(objs, lo, hi, max(1, samples // 10), seed + 1)
    return AssumptionProposal(beta, gamma, delta, samples)


def save_instance(inst: LocalizationInstance, path) -> None:
    """Header ``I N noise_var seed x_true...`` then one ``a^i... z^i`` line per node."""
    I, N = inst.anchors.shape
    head = [str(I), str(N), repr(float(inst.noise_var)), str(inst.seed)] + [repr(float(v)) for v in inst.x_true]
    lines = [" ".join(head)]
    for a, z in zip(inst.anchors, inst.z):
        lines.append(" ".join(repr(float(v)) for v in a) + " " + repr(float(z)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_instance(path) -> LocalizationInstance:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise ObjectiveError(f"{path}: empty instance file")
    try:
        I, N = int(rows[0][0]), int(rows[0][1])
        noise_var, seed = float(rows[0][2]), int(rows[0][3])
        x_true = np.array(rows[0][4 : 4 + N], dtype=float)
    except (IndexError, ValueError) as exc:
        raise ObjectiveError(f"{path}: malformed header") from exc
    body = rows[1:]
    if len(body) != I or any(len(r) != N + 1 for r in body) or x_true.size != N:
        raise ObjectiveError(f"{path}: expected {I} node lines of {N + 1} numbers")
    data = np.array(body, dtype=float)
    return LocalizationInstance(data[:, :N], data[:, N], noise_var, x_true, seed)


def save_quadratics(objs: ObjectiveSet, path) -> None:
    """Header ``I N`` then per node the row-major ``Q`` entries followed by ``b``."""
    if objs._kind != "quad":
        raise ObjectiveError("only quadratic sets can be saved in this format")
    I, N = len(objs), objs.dimension
    lines = [f"{I} {N}"]
    for o in objs.locals:
        lines.append(" ".join(repr(float(v)) for v in np.concatenate([o.Q.ravel(), o.b])))
    Path(path).write_text("\n".join(lines) + "\n")


def load_quadratics(path) -> ObjectiveSet:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        I, N = int(rows[0][0]), int(rows[0][1])
    except (IndexError, ValueError) as exc:
        raise ObjectiveError(f"{path}: malformed header") from exc
    body = rows[1:]
    if len(body) != I or any(len(r) != N * N + N for r in body):
        raise ObjectiveError(f"{path}: expected {I} lines of {N * N + N} numbers")
    out = []
    for r in body:
        v = np.array(r, dtype=float)
        out.append(QuadraticObjective(v[: N * N].reshape(N, N), v[N * N :]))
    return ObjectiveSet(out)


def random_quadratic_set(I: int, N: int, seed: int, scale: float = 1.0, spread: float = 1.0,
                         indefinite: int = 0) -> ObjectiveSet:
    """Random quadratics ``0.5 (x - c_i)^T Q_i (x - c_i)``.

    Each ``Q_i`` is ``scale`` times a random SPD matrix with eigenvalues in
    ``[0.5, 1.5]``; the first ``indefinite`` nodes get one negative
    eigenvalue instead (the average stays positive definite as long as
    enough nodes are convex).
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(I):
        Qr, _ = np.linalg.qr(rng.standard_normal((N, N)))
        lam = rng.uniform(0.5, 1.5, size=N)
        if i < indefinite:
            lam[0] = -lam[0]
        Q = scale * (Qr * lam) @ Qr.T
        out.append(QuadraticObjective.centered(0.5 * (Q + Q.T), rng.normal(0.0, spread, size=N)))
    return ObjectiveSet(out)
