"""Anderson acceleration as solver-agnostic post-processing.

Windowed AA(m) keeps the last m+1 fixed-point images F(x) together with
their increments F(x) - x.  The next iterate is the affine combination
sum_k alpha_k F(x^k) whose mixed increment has minimal Euclidean (optionally
diagonally weighted) norm subject to sum_k alpha_k = 1.  The restarted
variant AA*(m) flushes its stores every m+1 iterations; for m = 1 it
alternates one plain with one accelerated step.  Depth 0 is an exact
pass-through of the underlying iteration.

The constrained least squares is solved in the unconstrained difference
formulation: with newest column f_last, minimize over gamma
|| f_last + sum_j gamma_j (f_j - f_last) ||_2 and map back, so the weights
sum to one by construction.  Ill-conditioned difference matrices trigger a
plain-step fallback instead of an exception: acceleration may degrade an
iteration, so a guarded step is preferable to a failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AndersonConfig", "AndersonWindow", "mixing_weights", "aa_step"]


@dataclass(frozen=True)
class AndersonConfig:
    """Acceleration depth m >= 0, window mode, and the condition-number cap
    of the mixing least squares."""

    depth: int = 0
    mode: str = "windowed"
    cond_cap: float = 1e10

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.mode not in ("windowed", "restarted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.cond_cap <= 0:
            raise ValueError("cond_cap must be positive")


def mixing_weights(increments: np.ndarray, cond_cap: float = 1e10):
    """Constrained least-squares mixing weights for the given increment
    columns (oldest first, newest last).

    Minimizes ||F alpha||_2 subject to sum alpha = 1 via the difference
    reformulation.  Returns (alpha, fallback); on rank deficiency beyond the
    condition cap alpha degenerates to (0, ..., 0, 1), i.e. a plain step.
    """
    F = np.atleast_2d(np.asarray(increments, dtype=float))
    if F.ndim != 2 or F.shape[1] < 1:
        raise ValueError("need at least one increment column")
    m = F.shape[1] - 1
    if m == 0:
        return np.array([1.0]), False
    newest = F[:, -1]
    plain = np.zeros(m + 1)
    plain[-1] = 1.0
    if m == 1:
        # single-difference case: closed-form 1-d least squares
        d = F[:, 0] - newest
        dd = d @ d
        if dd == 0.0 or not np.isfinite(dd):
            return plain, True
        gamma = -(newest @ d) / dd
        if not np.isfinite(gamma):
            return plain, True
        return np.array([gamma, 1.0 - gamma]), False
    diffs = F[:, :-1] - newest[:, None]
    if not np.all(np.isfinite(diffs)):
        return plain, True
    cond = np.linalg.cond(diffs)
    if not np.isfinite(cond) or cond > cond_cap:
        return plain, True
    gamma, *_ = np.linalg.lstsq(diffs, -newest, rcond=None)
    alpha = np.empty(m + 1)
    alpha[:m] = gamma
    alpha[m] = 1.0 - gamma.sum()
    return alpha, False


class AndersonWindow:
    """Image/increment store owned by one iteration driver.

    ``weights`` is an optional positive diagonal (e.g. mass-matrix diagonal)
    under which the mixing norm is taken, so that for PDE iterates the
    minimized quantity approximates the L2 norm.
    """

    def __init__(self, config: AndersonConfig, weights: np.ndarray | None = None):
        self.config = config
        self._scale = None if weights is None else np.sqrt(np.asarray(weights, dtype=float))
        self._images: list[np.ndarray] = []
        self._increments: list[np.ndarray] = []
        self._iteration = 0

    @property
    def depth_now(self) -> int:
        return len(self._images) - 1

    def _target_depth(self) -> int:
        i, m = self._iteration, self.config.depth
        if self.config.mode == "restarted":
            return min((i - 1) % (m + 1), m)
        return min(i - 1, m)

    def push(self, image: np.ndarray, increment: np.ndarray):
        """Store one fixed-point application and return the next iterate.

        Returns (iterate, alpha, fallback).
        """
        self._iteration += 1
        scaled = increment if self._scale is None else self._scale * increment
        self._images.append(np.asarray(image, dtype=float))
        self._increments.append(np.asarray(scaled, dtype=float))
        keep = self._target_depth() + 1  # restart flushes older entries
        self._images = self._images[-keep:]
        self._increments = self._increments[-keep:]
        alpha, fallback = mixing_weights(
            np.column_stack(self._increments), self.config.cond_cap
        )
        iterate = alpha @ np.vstack(self._images)
        return iterate, alpha, fallback


def aa_step(window: AndersonWindow, new_image: np.ndarray,
            new_increment: np.ndarray) -> np.ndarray:
    """Advance the window by one fixed-point application and return the
    accelerated iterate (the unchanged image for depth 0)."""
    iterate, _, _ = window.push(new_image, new_increment)
    return iterate
