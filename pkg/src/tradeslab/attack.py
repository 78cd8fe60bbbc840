"""l-infinity attacks on MLP classifiers.

White-box attacks (FGSM, PGD on cross-entropy, TPGD on the TRADES KL term)
record every iterate and the sign of the input gradient there, which is what
the FOSC and SGCS diagnostics consume. ``square_search`` is a gradient-free
random search that only ever calls the forward pass.

All attacks work on batches: ``x`` is ``(batch, d)``; the loss being
ascended is the per-sample loss summed over the batch, so each row of the
input gradient is that sample's own gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .losses import cross_entropy, kl_divergence
from .model import Params, forward
from .rng import Rng
from .tensor import Tensor

OBJECTIVES = ("ce", "kl")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    objective: str = "ce"
    jitter_std: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass
class AttackTrace:
    """Per-step record of a sign-gradient attack on one batch.

    ``signs[i]`` is ``sign(grad loss)`` evaluated at ``iterates[i]`` (that is,
    at x^1 .. x^k); ``final_grad`` is the raw gradient at x^k.
    """

    x_clean: np.ndarray
    x0: np.ndarray
    iterates: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    final_grad: np.ndarray | None = None
    epsilon: float = 0.0

    @property
    def x_adv(self):
        return self.iterates[-1] if self.iterates else self.x0

    @property
    def steps(self):
        return len(self.iterates)


def project(x, x_clean, epsilon, lo, hi):
    """Onto the intersection of the l-inf ball around x_clean and the domain box."""
    return np.clip(np.clip(x, x_clean - epsilon, x_clean + epsilon), lo, hi)


def ce_gradient(params: Params, x, y):
    """Input gradient of the per-sample cross-entropy."""
    xt = Tensor(x, requires_grad=True)
    logits = forward(params.detached(), xt)
    loss = cross_entropy(logits, y, reduction="sum")
    T.backward(loss)
    return xt.grad


def kl_gradient(params: Params, x, clean_logits):
    """Input gradient of KL(softmax(clean_logits) || softmax(f(x))); clean side held fixed."""
    xt = Tensor(x, requires_grad=True)
    logits = forward(params.detached(), xt)
    loss = kl_divergence(Tensor(clean_logits), logits, reduction="sum")
    T.backward(loss)
    return xt.grad


def _sign_ascent(grad_fn, x_clean, x0, epsilon, alpha, steps, lo, hi):
    trace = AttackTrace(x_clean=x_clean, x0=x0, epsilon=epsilon)
    x = x0
    g = grad_fn(x)
    for _ in range(steps):
        x = project(x + alpha * np.sign(g), x_clean, epsilon, lo, hi)
        g = grad_fn(x)
        trace.iterates.append(x)
        trace.signs.append(np.sign(g))
    trace.final_grad = g
    return trace


def pgd(params: Params, x, y, cfg: AttackConfig, lo=0.0, hi=1.0, rng: Rng | None = None) -> AttackTrace:
    """k-step sign-gradient ascent on cross-entropy with optional uniform random start."""
    if cfg.objective != "ce":
        raise ContractError("pgd: attack objective must be 'ce'")
    x = np.asarray(x, dtype=np.float64)
    if cfg.random_start:
        rng = rng if rng is not None else Rng(cfg.seed)
        x0 = project(x + rng.uniform(x.shape, -cfg.epsilon, cfg.epsilon), x, cfg.epsilon, lo, hi)
    else:
        x0 = x.copy()
    return _sign_ascent(lambda z: ce_gradient(params, z, y), x, x0, cfg.epsilon,
                        cfg.alpha, cfg.steps, lo, hi)


def fgsm(params: Params, x, y, epsilon, lo=0.0, hi=1.0) -> AttackTrace:
    cfg = AttackConfig(epsilon=epsilon, alpha=epsilon if epsilon > 0 else 1.0, steps=1,
                       random_start=False)
    return pgd(params, x, y, cfg, lo, hi)


def tpgd(params: Params, x, cfg: AttackConfig, lo=0.0, hi=1.0, rng: Rng | None = None) -> AttackTrace:
    """TRADES inner maximisation: sign ascent on KL to the clean prediction.

    Starts from x plus N(0, jitter_std^2) noise, since the KL gradient
    vanishes exactly at x. Labels are never consulted.
    """
    if cfg.objective != "kl":
        raise ContractError("tpgd: attack objective must be 'kl'")
    x = np.asarray(x, dtype=np.float64)
    clean_logits = forward(params.detached(), x).data
    rng = rng if rng is not None else Rng(cfg.seed)
    x0 = project(x + cfg.jitter_std * rng.normal(x.shape), x, cfg.epsilon, lo, hi)
    return _sign_ascent(lambda z: kl_gradient(params, z, clean_logits), x, x0, cfg.epsilon,
                        cfg.alpha, cfg.steps, lo, hi)


def margin(params: Params, x, y):
    """Logit of the true class minus the largest other logit (negative = misclassified)."""
    logits = forward(params.detached(), x).data
    rows = np.arange(len(y))
    true = logits[rows, y]
    others = logits.copy()
    others[rows, y] = -np.inf
    return true - others.max(axis=1), logits.argmax(axis=1) != y


_SCHEDULE = (10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000)


def window_fraction(query, budget, p_init=0.3):
    """Halve the window fraction at fixed fractions of the query budget."""
    it = int(query / max(budget, 1) * 10000)
    return p_init / 2 ** sum(it > s for s in _SCHEDULE)


def square_search(params: Params, x, y, epsilon, queries, rng: Rng, lo=0.0, hi=1.0, p_init=0.3):
    """Black-box random search for misclassifying points in the l-inf ball.

    Each query sets a contiguous window of coordinates to x_clean +/- epsilon
    and keeps the proposal only if it lowers the margin. The first query
    scores the clean input, the second random per-coordinate +/- epsilon
    stripes. Returns ``(x_adv, success, queries_used)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    used = np.zeros(n, dtype=np.int64)
    if queries < 1:
        _, wrong = margin(params, x, y)
        return x.copy(), wrong, used
    best_x = x.copy()
    best_m, done = margin(params, x, y)
    used[:] = 1
    for q in range(1, queries):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        xa = x[active]
        if q == 1:
            cand = project(xa + epsilon * rng.signs(xa.shape), xa, epsilon, lo, hi)
        else:
            w = max(1, min(d, int(round(window_fraction(q, queries, p_init) * d))))
            start = rng.integers(np.full(active.size, d - w + 1))
            sgn = rng.signs((active.size, 1))
            cols = np.arange(d)
            mask = (cols >= start[:, None]) & (cols < start[:, None] + w)
            cand = np.where(mask, xa + sgn * epsilon, best_x[active])
            cand = project(cand, xa, epsilon, lo, hi)
        m, wrong = margin(params, cand, y[active])
        used[active] += 1
        better = m < best_m[active]
        take = active[better]
        best_x[take] = cand[better]
        best_m[take] = m[better]
        done[active[wrong & better]] = True
    _, wrong = margin(params, best_x, y)
    return best_x, wrong, used


def corner_search(params: Params, x, y, epsilon, lo=0.0, hi=1.0):
    """Lowest-margin point among the 2^d corners of each ball (d <= 12).

    Exact worst case whenever the margin is minimised at a corner, as it is
    for affine classifiers.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    corners = ((np.arange(2 ** d)[:, None] >> np.arange(d)) & 1) * 2.0 - 1.0
    best_x = x.copy()
    best_m, _ = margin(params, x, y)
    for i in range(n):
        pts = project(x[i] + epsilon * corners, x[i], epsilon, lo, hi)
        m, _ = margin(params, pts, np.full(len(pts), y[i]))
        j = int(np.argmin(m))
        if m[j] < best_m[i]:
            best_m[i] = m[j]
            best_x[i] = pts[j]
    return best_x


def robust_accuracy(params: Params, ds, attack, batch_size=500) -> float:
    """Fraction of ``ds`` still classified correctly after ``attack(params, x, y) -> x_adv``."""
    if ds.n == 0:
        return 0.0
    correct = 0
    for s in range(0, ds.n, batch_size):
        xb, yb = ds.features[s:s + batch_size], ds.labels[s:s + batch_size]
        x_adv = attack(params, xb, yb)
        correct += int((forward(params.detached(), x_adv).data.argmax(axis=1) == yb).sum())
    return correct / ds.n
