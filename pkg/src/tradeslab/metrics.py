"""Gradient-masking diagnostics.

FOSC and SGCS score how well a multi-step attack converged; the gradient
telemetry tracks the TRADES weight-gradient norms per batch; the remaining
helpers implement the accuracy-gap, masking and self-healing rules and the
two-direction loss landscape.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attack import AttackTrace, ce_gradient
from .errors import ContractError, NumericalError
from .losses import full_loss, loss_terms
from .model import Params, flatten_grads, forward
from .rng import Rng

MASKING_THRESHOLD = 0.08


@dataclass
class FoscReport:
    values: np.ndarray
    mean: float


def fosc_values(trace: AttackTrace, epsilon=None) -> np.ndarray:
    """Closed form eps*||g||_1 - <x^k - x, g>, g the input gradient at x^k.

    ``x`` is the ball centre (the clean input), not the attack's start point.
    """
    if trace.final_grad is None:
        raise ContractError("fosc: trace has no final gradient")
    eps = trace.epsilon if epsilon is None else epsilon
    g = np.atleast_2d(trace.final_grad)
    delta = np.atleast_2d(trace.x_adv - trace.x_clean)
    vals = eps * np.abs(g).sum(axis=1) - (delta * g).sum(axis=1)
    # Exact value is >= 0 whenever x^k lies in the ball; drop rounding noise.
    return np.maximum(vals, 0.0)


def fosc(trace: AttackTrace, epsilon=None) -> FoscReport:
    vals = fosc_values(trace, epsilon)
    return FoscReport(values=vals, mean=float(vals.mean()) if vals.size else 0.0)


def sgcs_values(trace: AttackTrace) -> np.ndarray:
    """Per-sample mean pairwise cosine similarity of the step-wise gradient signs.

    A zero sign vector has similarity 0 with everything.
    """
    k = len(trace.signs)
    if k < 2:
        raise ContractError(f"sgcs: need at least 2 attack steps, got {k}")
    s = np.stack([np.atleast_2d(g) for g in trace.signs], axis=1)  # (n, k, d)
    norms = np.linalg.norm(s, axis=2)
    gram = np.einsum("nid,njd->nij", s, s)
    denom = norms[:, :, None] * norms[:, None, :]
    cos = np.divide(gram, denom, out=np.zeros_like(gram), where=denom > 0)
    off = cos.sum(axis=(1, 2)) - np.trace(cos, axis1=1, axis2=2)
    return off / (k * (k - 1))


def sgcs(traces) -> float:
    """Mean SGCS over every sample of one trace or a sequence of traces."""
    if isinstance(traces, AttackTrace):
        traces = [traces]
    vals = np.concatenate([sgcs_values(t) for t in traces])
    return float(vals.mean())


@dataclass
class GradTelemetry:
    step: int
    w_grad_norm: float
    ce_norm: float
    kl_norm: float
    grad_cosine_similarity: float

    def to_dict(self):
        return {"step": self.step, "w_grad_norm": self.w_grad_norm, "ce_norm": self.ce_norm,
                "kl_norm": self.kl_norm, "grad_cosine_similarity": self.grad_cosine_similarity}


def _param_grad(params: Params, loss) -> np.ndarray:
    params.zero_grad()
    T.backward(loss)
    return flatten_grads(params)


def term_gradients(params: Params, x_clean, x_adv, y, beta, mode="trades"):
    """Flattened gradients of (full loss, CE term, KL term), one backward each.

    Returns ``(full, ce, kl, full_loss_value)``. On return ``params`` hold the
    full-loss gradient, ready for an optimizer step.
    """
    ce_term, kl_term = loss_terms(mode, params, x_clean, x_adv, y, beta)
    ce = _param_grad(params, ce_term)
    kl = _param_grad(params, kl_term) if kl_term is not None else np.zeros_like(ce)
    loss = full_loss(mode, params, x_clean, x_adv, y, beta)
    full = _param_grad(params, loss)
    return full, ce, kl, loss.item()


def cosine(a, b) -> float:
    """Cosine similarity; two zero vectors count as aligned, one zero vector as orthogonal."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def grad_telemetry(params: Params, x_clean, x_adv, y, beta, update, mode="trades", step=0):
    """Norm telemetry around one optimizer step.

    ``update(params)`` must apply the step from the populated gradients. The
    after-step gradient reuses the same batch and the same ``x_adv``.
    Returns ``(GradTelemetry, loss_value_before_step)``.
    """
    full, ce, kl, loss_value = term_gradients(params, x_clean, x_adv, y, beta, mode)
    if not np.isfinite(loss_value) or not np.all(np.isfinite(full)):
        raise NumericalError(f"non-finite loss {loss_value}")
    update(params)
    after = _param_grad(params, full_loss(mode, params, x_clean, x_adv, y, beta))
    tel = GradTelemetry(step=step, w_grad_norm=float(np.linalg.norm(full)),
                        ce_norm=float(np.linalg.norm(ce)), kl_norm=float(np.linalg.norm(kl)),
                        grad_cosine_similarity=cosine(full, after))
    return tel, loss_value


def gap(clean_train_acc, adv_train_acc) -> float:
    return float(clean_train_acc) - float(adv_train_acc)


def gap_anomalous(value) -> bool:
    """Adversarial accuracy above clean accuracy signals overfitting to the training adversary."""
    return value < 0


def masking_verdict(pgd_acc, blackbox_acc, threshold=MASKING_THRESHOLD) -> bool:
    # 1e-12 slack so decimal inputs exactly at the threshold are not lost to rounding.
    return float(pgd_acc) - float(blackbox_acc) >= threshold - 1e-12


def _field(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def self_healing_flag(window, fosc_threshold) -> bool:
    """Self-healing signature over epochs (e-1, e, e+1).

    FOSC falls from above the threshold to below a tenth of it while clean
    training accuracy dips, and the weight-gradient norm drops one epoch later.
    """
    if len(window) != 3:
        raise ContractError(f"self_healing_flag: need 3 consecutive epochs, got {len(window)}")
    names = ("fosc_mean", "clean_train_acc", "w_grad_norm_mean")
    try:
        prev, cur, nxt = ({n: float(_field(rec, n)) for n in names} for rec in window)
    except (KeyError, AttributeError) as exc:
        raise ContractError(f"self_healing_flag: incomplete telemetry ({exc})") from None
    return bool(
        prev["fosc_mean"] > fosc_threshold
        and cur["fosc_mean"] < 0.1 * fosc_threshold
        and cur["clean_train_acc"] < prev["clean_train_acc"]
        and nxt["w_grad_norm_mean"] < cur["w_grad_norm_mean"]
    )


def sample_loss(params: Params, x, y) -> float:
    """Cross-entropy of one sample, evaluated as a single-row batch."""
    logp = T.log_softmax(forward(params.detached(), np.asarray(x, dtype=np.float64)[None, :]))
    return float(-logp.data[0, int(y)])


@dataclass
class LandscapeGrid:
    offsets: np.ndarray
    z: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    radius: float

    @property
    def resolution(self):
        return len(self.offsets)

    def rows(self):
        for i, a in enumerate(self.offsets):
            for j, b in enumerate(self.offsets):
                yield float(a), float(b), float(self.z[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("a,b,z\n")
        for a, b, z in self.rows():
            buf.write(f"{a!r},{b!r},{z!r}\n")
        return buf.getvalue()


def landscape(params: Params, x, y, radius, res, rng: Rng, lo=0.0, hi=1.0) -> LandscapeGrid:
    """CE loss over x + a*r1 + b*r2 for (a, b) on a res x res grid in [-radius, radius]^2.

    r1 is the sign of the input gradient at x, r2 a Rademacher vector.
    """
    if res < 2 or res % 2 == 0:
        raise ContractError(f"landscape: resolution must be odd and >= 3, got {res}")
    x = np.asarray(x, dtype=np.float64)
    r1 = np.sign(ce_gradient(params, x[None, :], np.array([int(y)]))[0])
    r2 = rng.signs(x.shape)
    c = res // 2
    offsets = np.array([radius * (i - c) / c for i in range(res)])
    z = np.empty((res, res))
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            z[i, j] = sample_loss(params, np.clip(x + a * r1 + b * r2, lo, hi), y)
    return LandscapeGrid(offsets=offsets, z=z, r1=r1, r2=r2, radius=float(radius))
