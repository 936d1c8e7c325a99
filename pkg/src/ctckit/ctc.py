"""Connectionist temporal classification: loss, lattice, oracle, decoding.

The loss marginalizes over every frame-level path whose collapse (drop
adjacent duplicates, then drop blanks) equals the target.  The dynamic
program runs over the blank-expanded state sequence

    blank, y1, blank, y2, ..., yL, blank        (S = 2L + 1 states)

entirely in log space.  Both alpha and beta include the emission at
their own frame, so for every t

    logsumexp_s(alpha[t, s] + beta[t, s] - emit[t, s]) == log P.

The gradient with respect to the log-posteriors is computed from the
alpha/beta product rather than by generic backpropagation through the
recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .errors import ContractError, SizeError
from .tensor import Tensor

BLANK = 0

BRUTE_FORCE_MAX_FRAMES = 8
BRUTE_FORCE_MAX_PATHS = 1_000_000


def collapse(path: Sequence[int], blank: int = BLANK) -> list[int]:
    """Remove adjacent duplicates, then remove blanks."""
    out: list[int] = []
    previous = None
    for label in path:
        if label != previous:
            out.append(label)
        previous = label
    return [label for label in out if label != blank]


def expand_with_blanks(target: Sequence[int], blank: int = BLANK) -> np.ndarray:
    expanded = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    expanded[1::2] = np.asarray(target, dtype=np.int64)
    return expanded


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit the target: length plus adjacent repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(n_frames: int, target: Sequence[int]) -> bool:
    return min_frames(target) <= n_frames


def _check_target(target: Sequence[int], n_classes: int) -> None:
    for label in target:
        if label == BLANK:
            raise ContractError("target must not contain the blank id 0")
        if not 0 < label < n_classes:
            raise ContractError(
                f"target label {label} outside posterior width {n_classes}")


@dataclass
class CtcLattice:
    """Alpha/beta tables for one (log_probs, target) pair.

    alpha, beta: (T, S) log-domain tables, both including the emission
    at their own frame.  log_total is log P of the target; -inf when the
    target is infeasible for T frames.
    """

    expanded: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    emit: np.ndarray
    log_total: float

    @property
    def n_states(self) -> int:
        return len(self.expanded)


def build_lattice(log_probs: np.ndarray, target: Sequence[int]) -> CtcLattice:
    """Run the forward and backward recursions in float64 log space."""
    logp = np.asarray(log_probs, dtype=np.float64)
    if logp.ndim != 2:
        raise ContractError(f"log_probs must be (T, classes), got shape {logp.shape}")
    T, n_classes = logp.shape
    if T < 1:
        raise ContractError("log_probs must cover at least one frame")
    _check_target(target, n_classes)

    expanded = expand_with_blanks(target)
    S = len(expanded)
    emit = logp[:, expanded]                                # (T, S)

    # a state may be entered from two back only when the skipped state is
    # a different label (always a blank between distinct labels)
    skip_into = np.zeros(S, dtype=bool)
    skip_into[2:] = expanded[2:] != expanded[:-2]

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.full(S, -np.inf)
        step[1:] = prev[:-1]
        acc = np.logaddexp(stay, step)
        skip = np.full(S, -np.inf)
        skip[2:] = prev[:-2]
        acc = np.where(skip_into, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip_into[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.full(S, -np.inf)
        step[:-1] = nxt[1:]
        acc = np.logaddexp(stay, step)
        skip = np.full(S, -np.inf)
        skip[:-2] = nxt[2:]
        acc = np.where(skip_from, np.logaddexp(acc, skip), acc)
        beta[t] = acc + emit[t]

    if S > 1:
        log_total = float(np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]))
    else:
        log_total = float(alpha[T - 1, S - 1])
    return CtcLattice(expanded=expanded, alpha=alpha, beta=beta, emit=emit,
                      log_total=log_total)


def _lattice_grad(lattice: CtcLattice, n_classes: int) -> np.ndarray:
    """d(-log P)/d(log_probs) from the alpha/beta product.

    Every term exp(alpha + beta - emit - log P) lies in [0, 1] because
    the per-frame occupancies sum to one, so no rescaling is needed.
    """
    T, S = lattice.alpha.shape
    occupancy = np.exp(lattice.alpha + lattice.beta - lattice.emit - lattice.log_total)
    grad = np.zeros((T, n_classes), dtype=np.float64)
    rows = np.repeat(np.arange(T), S)
    cols = np.tile(lattice.expanded, T)
    np.add.at(grad, (rows, cols), occupancy.reshape(-1))
    return -grad


def ctc_loss(log_probs: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log probability of the target plus its gradient.

    Returns (loss, grad) where grad has the shape of log_probs.  An
    infeasible target (more labels plus repeats than frames, or zero
    total probability) yields (+inf, zeros).
    """
    logp = np.asarray(log_probs, dtype=np.float64)
    if logp.ndim != 2:
        raise ContractError(f"log_probs must be (T, classes), got shape {logp.shape}")
    T, n_classes = logp.shape
    _check_target(target, n_classes)
    if not is_feasible(T, target):
        return np.inf, np.zeros_like(logp)
    lattice = build_lattice(logp, target)
    if lattice.log_total == -np.inf:
        return np.inf, np.zeros_like(logp)
    return -lattice.log_total, _lattice_grad(lattice, n_classes)


def ctc_loss_node(log_probs: Tensor, target: Sequence[int]) -> Tensor:
    """Graph node for the loss; backward applies the lattice gradient."""
    loss, grad = ctc_loss(log_probs.data, target)
    dtype = log_probs.data.dtype

    def forward(vals):
        value, _ = ctc_loss(vals[0], target)
        return np.asarray(value, dtype=dtype)

    out = Tensor._result(np.asarray(loss, dtype=dtype), "ctc_loss",
                         (log_probs,), forward, None)
    grad = grad.astype(dtype, copy=False)
    out.meta = {"target": list(target), "infeasible": not np.isfinite(loss)}

    def backward_fn(g):
        log_probs.accumulate(float(g) * grad)

    out._backward = backward_fn
    return out


def brute_force_ctc(probs: np.ndarray, target: Sequence[int],
                    blank: int = BLANK) -> float:
    """Total path probability by explicit enumeration.

    Sums prod_t probs[t, z_t] over all (classes)^T frame paths whose
    collapse equals the target.  Guarded: T <= 8 and at most 1e6 paths.
    """
    probs = np.asarray(probs, dtype=np.float64)
    T, n_classes = probs.shape
    if T > BRUTE_FORCE_MAX_FRAMES or n_classes ** T > BRUTE_FORCE_MAX_PATHS:
        raise SizeError(
            f"brute force limited to T <= {BRUTE_FORCE_MAX_FRAMES} and "
            f"{BRUTE_FORCE_MAX_PATHS} paths; got T={T}, classes={n_classes}")
    wanted = list(target)
    total = 0.0
    for path in product(range(n_classes), repeat=T):
        if collapse(path, blank) == wanted:
            p = 1.0
            for t, label in enumerate(path):
                p *= probs[t, label]
            total += p
    return total


def best_path_decode(posteriors: np.ndarray, blank: int = BLANK) -> list[int]:
    """Collapse the frame-wise argmax path; argmax ties go to the lowest id."""
    posteriors = np.asarray(posteriors)
    if posteriors.ndim != 2:
        raise ContractError(f"posteriors must be (T, classes), got {posteriors.shape}")
    return collapse(np.argmax(posteriors, axis=1).tolist(), blank)
