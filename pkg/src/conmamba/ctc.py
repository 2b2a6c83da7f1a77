"""CTC loss, gradient, decoding, and a brute-force enumeration oracle.

The loss marginalizes over every frame-level path that collapses (merge
adjacent repeats, then drop blanks) to the target, via the usual dynamic
program over the blank-interleaved state sequence

    blank, t_1, blank, t_2, ..., blank          (2L + 1 states)

All arithmetic is in log space with -inf for impossible states; there is no
probability-space fallback. Targets that cannot fit in the available frames
raise instead of silently masking, because silent masking hides data bugs.

BOS and EOS exist in the vocabulary for tokenizer/checkpoint compatibility
but never appear in CTC targets; only blank (id 0) has a special role here.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import from_op

NEG_INF = -np.inf


class InfeasibleTargetError(ValueError):
    """Target cannot be emitted in the given number of frames."""


class EnumerationBudgetError(ValueError):
    """Brute-force path enumeration would exceed its budget."""


def expand_target(target, blank=0):
    """Blank-interleaved state sequence: odd positions carry the labels."""
    states = [blank]
    for tok in target:
        states.append(int(tok))
        states.append(blank)
    return states


def min_frames(target):
    """Fewest frames that can emit the target: length plus forced blanks
    between adjacent duplicates."""
    repeats = sum(1 for i in range(1, len(target)) if target[i] == target[i - 1])
    return len(target) + repeats


def _validate(log_probs, target, blank):
    lp = np.asarray(log_probs)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ValueError(f"ctc: expected a [T, V] lattice with T >= 1, got shape {lp.shape}")
    sums = np.exp(lp.astype(np.float64)).sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"ctc: lattice row {worst} exp-sums to {sums[worst]:.6f}, not 1")
    target = [int(t) for t in target]
    if any(t == blank for t in target):
        raise ValueError("ctc: target contains the blank id")
    if any(not (0 <= t < lp.shape[1]) for t in target):
        raise ValueError(f"ctc: target id outside vocabulary of size {lp.shape[1]}")
    need = min_frames(target)
    if lp.shape[0] < need:
        raise InfeasibleTargetError(
            f"ctc: target needs at least {need} frames (length + forced blanks), lattice has {lp.shape[0]}"
        )
    return lp.astype(np.float64), target


def _alpha(lp, states):
    """Forward log-probabilities; alpha[t, s] includes the emission at t."""
    T = lp.shape[0]
    S = len(states)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, states[0]]
    if S > 1:
        alpha[0, 1] = lp[0, states[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.empty(S)
        step[0] = NEG_INF
        step[1:] = prev[:-1]
        merged = np.logaddexp(stay, step)
        skip = np.full(S, NEG_INF)
        for s in range(2, S):
            if states[s] != 0 and states[s] != states[s - 2]:
                skip[s] = prev[s - 2]
        merged = np.logaddexp(merged, skip)
        alpha[t] = merged + lp[t, states]
    return alpha


def _beta(lp, states):
    """Backward log-probabilities; beta[t, s] excludes the emission at t."""
    T = lp.shape[0]
    S = len(states)
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, states]
        merged = nxt.copy()
        merged[:-1] = np.logaddexp(merged[:-1], nxt[1:])
        for s in range(S - 2):
            if states[s + 2] != 0 and states[s + 2] != states[s]:
                merged[s] = np.logaddexp(merged[s], nxt[s + 2])
        beta[t] = merged
    return beta


def ctc_loss(log_probs, target, blank=0):
    """Negative log-probability of the target under the lattice (scalar >= 0
    up to rounding)."""
    lp, target = _validate(log_probs, target, blank)
    states = expand_target(target, blank)
    alpha = _alpha(lp, states)
    S = len(states)
    tail = alpha[-1, S - 1] if S == 1 else np.logaddexp(alpha[-1, S - 1], alpha[-1, S - 2])
    return float(-tail)


def ctc_posteriors(log_probs, target, blank=0):
    """Loss plus per-frame symbol occupancy gamma (rows sum to 1)."""
    lp, target = _validate(log_probs, target, blank)
    states = expand_target(target, blank)
    alpha = _alpha(lp, states)
    beta = _beta(lp, states)
    S = len(states)
    log_z = alpha[-1, S - 1] if S == 1 else np.logaddexp(alpha[-1, S - 1], alpha[-1, S - 2])
    T, V = lp.shape
    log_gamma = np.full((T, V), NEG_INF)
    ab = alpha + beta - log_z
    for s, sym in enumerate(states):
        log_gamma[:, sym] = np.logaddexp(log_gamma[:, sym], ab[:, s])
    return float(-log_z), np.exp(log_gamma)


def ctc_grad(log_probs, target, blank=0):
    """Gradient of the loss with respect to pre-softmax logits.

    For a normalized lattice this is softmax(logits) - occupancy, so every
    frame's gradient row sums to zero.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    _, gamma = ctc_posteriors(lp, target, blank)
    return np.exp(lp) - gamma


def ctc_loss_t(log_probs, target, blank=0):
    """Tape-op variant for training: scalar loss tensor on the graph.

    The backward rule is -occupancy with respect to the log-probabilities;
    composed with the log-softmax op upstream this yields the classic
    softmax-minus-occupancy gradient at the logits.
    """
    loss, gamma = ctc_posteriors(log_probs.data, target, blank)

    def backward(out):
        from .tensor import accumulate

        accumulate(log_probs, out.grad * (-gamma).astype(log_probs.dtype))

    return from_op(np.asarray(loss, dtype=log_probs.dtype), (log_probs,), backward)


def collapse(path, blank=0):
    """Merge adjacent repeats, then remove blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank]


def brute_force_ctc(log_probs, target, blank=0, budget=10_000_000):
    """Loss by full enumeration of all V^T paths; verification oracle only."""
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    if V ** T > budget:
        raise EnumerationBudgetError(f"brute_force_ctc: {V}^{T} paths exceed budget {budget}")
    target = [int(t) for t in target]
    total = NEG_INF
    for path in itertools.product(range(V), repeat=T):
        if collapse(path, blank) == target:
            total = np.logaddexp(total, sum(lp[t, v] for t, v in enumerate(path)))
    return float(-total)


def greedy_decode(log_probs, blank=0):
    """Per-frame argmax followed by collapse; ties break to the lowest id."""
    best = np.argmax(np.asarray(log_probs), axis=1)
    return collapse(best.tolist(), blank)
