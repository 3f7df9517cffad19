"""Static and dynamic average consensus on stacked payloads.

Payloads are arrays whose leading axis indexes the ``I`` nodes; trailing
axes (a vector, a matrix) are averaged entrywise.  All functions return new
arrays, so every node reads the previous round's values.
"""

from __future__ import annotations

import numpy as np

from .netgraph import Topology


def _weights(W):
    return W.weights if isinstance(W, Topology) else np.asarray(W, dtype=float)


def _mix(W: np.ndarray, v: np.ndarray) -> np.ndarray:
    if v.shape[0] != W.shape[0]:
        raise ValueError(f"payload stack has {v.shape[0]} blocks but the network has {W.shape[0]} nodes")
    return np.tensordot(W, v, axes=(1, 0))


def static_step(W, v) -> np.ndarray:
    """One mixing round ``v_i <- sum_j w_ij v_j``."""
    return _mix(_weights(W), np.asarray(v, dtype=float))


def dynamic_step_message(W, s, v_new, v_old) -> np.ndarray:
    """Message form: ``s <- W s + (v_new - v_old)``.

    Started from ``s_1 = v_1`` the network mean of ``s`` equals the mean of
    the current inputs at every round.
    """
    s, v_new, v_old = (np.asarray(a, dtype=float) for a in (s, v_new, v_old))
    if not (s.shape == v_new.shape == v_old.shape):
        raise ValueError(f"shape mismatch: s {s.shape}, v_new {v_new.shape}, v_old {v_old.shape}")
    return _mix(_weights(W), s) + (v_new - v_old)


def dynamic_step_estimate(W, u, v_new, v_old) -> np.ndarray:
    """Estimate form: ``u <- W (u + v_new - v_old)``."""
    u, v_new, v_old = (np.asarray(a, dtype=float) for a in (u, v_new, v_old))
    if not (u.shape == v_new.shape == v_old.shape):
        raise ValueError(f"shape mismatch: u {u.shape}, v_new {v_new.shape}, v_old {v_old.shape}")
    return _mix(_weights(W), u + (v_new - v_old))
