"""Communication topologies and their spectral quantities.

A topology is a doubly stochastic, primitive weight matrix ``W`` whose entry
``W[i, j]`` is the gain node ``i`` applies to the message received from node
``j``.  Besides construction and validation, this module computes the
second-largest-modulus eigenvalue of ``W`` together with its right/left
eigenvectors, and simulates the power-method estimator of that eigenvalue
that nodes can run on an undirected network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12


class TopologyError(ValueError):
    """Raised when a weight matrix violates a topology invariant."""


class SpectralError(RuntimeError):
    """Raised when an eigen-computation fails or is ill-posed."""


@dataclass(frozen=True)
class Topology:
    """Validated consensus weight matrix.

    Attributes
    ----------
    weights : ndarray, shape (I, I)
        Row ``i`` holds the gains node ``i`` applies to its in-neighbors.
    out_neighbors : tuple of tuple of int
        ``out_neighbors[j]`` lists the nodes ``i`` with ``W[i, j] != 0``.
    """

    weights: np.ndarray
    out_neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        validate_weights(W)
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        nbrs = tuple(tuple(int(i) for i in np.flatnonzero(W[:, j])) for j in range(W.shape[0]))
        object.__setattr__(self, "out_neighbors", nbrs)

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.weights, self.weights.T))

    def in_neighbors(self, i: int) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.weights[i]))

    def permuted(self, perm) -> "Topology":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return Topology(self.weights[np.ix_(perm, perm)])


def validate_weights(W: np.ndarray) -> None:
    """Check that ``W`` is square, nonnegative, doubly stochastic and primitive.

    Raises
    ------
    TopologyError
        Naming the violated invariant and the offending row or column.
    """
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
        raise TopologyError(f"weight matrix must be square and non-empty, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        r, c = np.argwhere(~np.isfinite(W))[0]
        raise TopologyError(f"non-finite weight at row {r}, column {c}")
    if np.any(W < 0):
        r, c = np.argwhere(W < 0)[0]
        raise TopologyError(f"nonnegativity violated: w[{r},{c}] = {W[r, c]!r}")
    rows = np.abs(W.sum(axis=1) - 1.0)
    if rows.max() > STOCHASTIC_TOL:
        r = int(rows.argmax())
        raise TopologyError(f"row-stochasticity violated: row {r} sums to {W[r].sum()!r}")
    cols = np.abs(W.sum(axis=0) - 1.0)
    if cols.max() > STOCHASTIC_TOL:
        c = int(cols.argmax())
        raise TopologyError(f"column-stochasticity violated: column {c} sums to {W[:, c].sum()!r}")
    if not is_primitive(W):
        raise TopologyError("primitivity violated: no power W^m with m <= I^2 is entrywise positive")


def is_primitive(W: np.ndarray) -> bool:
    """Exact primitivity test on the positivity pattern of ``W``.

    By Wielandt's bound a primitive I x I matrix has ``W^m > 0`` for
    ``m = (I - 1)^2 + 1 <= I^2``; once a power is positive all higher powers
    are, so repeated squaring of the boolean pattern suffices.
    """
    n = W.shape[0]
    P = (W > 0).astype(np.int64)
    bound = (n - 1) ** 2 + 1
    m = 1
    while True:
        if P.all():
            return True
        if m >= bound:
            return False
        P = ((P @ P) > 0).astype(np.int64)
        m *= 2


def build_ring(I: int, self_w: float, off1: float, off2: float) -> Topology:
    """Circulant ring with gains ``w[i,i] = self_w``, ``w[i,i-1] = off1``, ``w[i,i+2] = off2``.

    The two off-diagonal gains sit where ``mod(i - j, I)`` equals 1 and
    ``I - 2`` respectively.
    """
    if I < 3:
        raise TopologyError(f"ring needs at least 3 nodes, got {I}")
    ws = (self_w, off1, off2)
    if min(ws) < 0:
        raise TopologyError(f"ring weights must be nonnegative, got {ws}")
    if abs(sum(ws) - 1.0) > STOCHASTIC_TOL:
        raise TopologyError(f"ring weights must sum to 1, got {sum(ws)!r}")
    W = np.zeros((I, I))
    for i in range(I):
        W[i, i] += self_w
        W[i, (i - 1) % I] += off1
        W[i, (i + 2) % I] += off2
    return Topology(W)


def build_symmetric_ring(I: int, self_w: float = 0.5) -> Topology:
    """Undirected ring where each node splits ``1 - self_w`` evenly between its two neighbors."""
    if I < 3:
        raise TopologyError(f"ring needs at least 3 nodes, got {I}")
    side = (1.0 - self_w) / 2.0
    W = np.zeros((I, I))
    for i in range(I):
        W[i, i] += self_w
        W[i, (i - 1) % I] += side
        W[i, (i + 1) % I] += side
    return Topology(W)


def complete_average(I: int) -> Topology:
    return Topology(np.full((I, I), 1.0 / I))


def random_symmetric(I: int, rng: np.random.Generator, edge_prob: float = 0.3) -> Topology:
    """Metropolis-Hastings weights on a random connected undirected graph.

    A spanning path over a random node order guarantees connectivity; the
    positive diagonal then makes the matrix primitive.
    """
    A = rng.random((I, I)) < edge_prob
    A = np.triu(A, 1)
    order = rng.permutation(I)
    for a, b in zip(order[:-1], order[1:]):
        A[min(a, b), max(a, b)] = True
    A = A | A.T
    deg = A.sum(axis=1)
    W = np.zeros((I, I))
    for i, j in np.argwhere(A):
        W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(I)] = 1.0 - W.sum(axis=1)
    # Symmetrize exactly so row/column sums agree to the last bit.
    W = 0.5 * (W + W.T)
    W[np.diag_indices(I)] = 0.0
    W[np.diag_indices(I)] = 1.0 - W.sum(axis=1)
    return Topology(W)


def load_topology(path) -> Topology:
    """Read a plain-text matrix file: first line ``I``, then ``I`` rows of ``I`` numbers."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise TopologyError(f"{path}: empty topology file")
    try:
        n = int(lines[0][0])
    except ValueError as exc:
        raise TopologyError(f"{path}: first line must be the node count") from exc
    rows = lines[1:]
    if len(rows) != n:
        raise TopologyError(f"{path}: expected {n} matrix rows, found {len(rows)}")
    for r, row in enumerate(rows):
        if len(row) != n:
            raise TopologyError(f"{path}: row {r} has {len(row)} entries, expected {n}")
    return Topology(np.array(rows, dtype=float))


def save_topology(top: Topology, path) -> None:
    W = top.weights
    out = [str(W.shape[0])]
    out += [" ".join(repr(float(w)) for w in row) for row in W]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass(frozen=True)
class SpectralParams:
    """Second eigenvalue of ``W`` and its unit right/left eigenvectors.

    ``u`` and ``v`` are complex when ``lambda2`` is; ``v`` is phased so that
    ``v @ u`` is real and positive.
    """

    lambda2: complex
    u: np.ndarray
    v: np.ndarray

    @property
    def lambda2_modulus(self) -> float:
        return float(abs(self.lambda2))

    @property
    def is_real(self) -> bool:
        return bool(np.imag(self.lambda2) == 0.0)


def spectral_params(top: Topology) -> SpectralParams:
    """Second-largest-modulus eigenvalue of ``W`` with its eigenvectors.

    Symmetric matrices go through ``eigh`` (real, orthonormal vectors,
    ``u = v``).  Otherwise ``lambda2`` is taken from the deflated matrix
    ``W - 11^T / I`` and, for a conjugate pair, the member with positive
    imaginary part is returned.
    """
    W = top.weights
    n = W.shape[0]
    if n == 1:
        return SpectralParams(0.0, np.ones(1), np.ones(1))
    V = W - np.full((n, n), 1.0 / n)
    try:
        if top.is_symmetric:
            lam, U = np.linalg.eigh(V)
            k = int(np.argmax(np.abs(lam)))
            u = U[:, k]
            lam2 = float(lam[k])
            if abs(lam2) <= 1e-14:
                lam2 = 0.0
            return SpectralParams(lam2, u.copy(), u.copy())
        lam, R = np.linalg.eig(V)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition did not converge: {exc}") from exc
    mod = np.abs(lam)
    top_mod = mod.max()
    if top_mod <= 1e-14:
        u = np.ones(n) / np.sqrt(n)
        return SpectralParams(0.0, u, u.copy())
    cands = np.flatnonzero(mod >= top_mod * (1 - 1e-12))
    k = max(cands, key=lambda c: (lam[c].imag, lam[c].real))
    lam2 = complex(lam[k])
    if abs(lam2.imag) <= 1e-14 * abs(lam2):
        lam2 = lam2.real
        u = np.real(R[:, k])
    else:
        u = R[:, k]
    u = u / np.linalg.norm(u)
    # Left eigenvector: right eigenvector of W^T for the same eigenvalue.
    lamL, L = np.linalg.eig(V.T)
    j = int(np.argmin(np.abs(lamL - lam2)))
    v = L[:, j] if np.iscomplexobj(u) else np.real(L[:, j])
    v = v / np.linalg.norm(v)
    vu = v @ u
    if abs(vu) < 1e-12:
        raise SpectralError("left and right eigenvectors are orthogonal (defective eigenvalue)")
    v = v * (np.conj(vu) / abs(vu))
    if not np.iscomplexobj(u):
        v = np.real(v)
    return SpectralParams(lam2, u, v)


def power_estimate_lambda2(top: Topology, seed: int, rounds: int):
    """Simulate the power-method estimate of ``|lambda2|`` on an undirected network.

    Each node draws one entry of ``u_1``.  Every round applies the deflated
    matrix ``V = W - 11^T / I`` as ``W u_k - 1 * mean(u_k)``; the mean and
    the vector norms are global quantities that the simulation computes
    exactly.  In parallel each node runs static consensus ``m_{k+1} = W m_k``
    from ``m_1 = u_1``, which is its local estimate of the mean entry and is
    returned for inspection.

    Returns
    -------
    lambda_hat : ndarray, shape (I,)
        Per-node ratio-of-norms estimate after ``rounds`` rounds (identical
        across nodes).  Zero when the iterate collapses.
    u_hat : ndarray, shape (I,)
        Per-node entries of the normalized final iterate.
    mean_tracker : ndarray, shape (I,)
        Per-node consensus estimate of the initial mean entry.
    """
    if not top.is_symmetric:
        raise TopologyError("power estimate requires a symmetric (undirected) weight matrix")
    if rounds < 2:
        raise ValueError(f"rounds must be >= 2, got {rounds}")
    W = top.weights
    n = W.shape[0]
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    m = u.copy()
    lam = 0.0
    for _ in range(rounds - 1):
        prev = np.linalg.norm(u)
        u = W @ u - u.mean()
        m = W @ m
        cur = np.linalg.norm(u)
        # A deflated matrix that is zero only leaves rounding noise behind.
        if prev == 0.0 or cur <= 64 * np.finfo(float).eps * prev:
            lam = 0.0
            u = np.zeros(n)
            break
        lam = cur / prev
        # Rescaling keeps the iterate representable; the ratio is unaffected.
        u = u / cur
    nu = np.linalg.norm(u)
    u_hat = u / nu if nu > 0 else u
    return np.full(n, lam), u_hat, m
