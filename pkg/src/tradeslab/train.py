"""Adversarial training loop with the FOSC stability guard.

One epoch trains on every batch (TRADES, PGD-AT or Modified-TRADES), then
validates with PGD-10. When the validation FOSC exceeds the threshold the
guard arms a countdown, and the next ``noise_batches`` training batches get
Gaussian input noise. A model only becomes the best checkpoint if its PGD
accuracy improves *and* its FOSC is within the threshold.

Epochs are numbered from 0. Global batch steps are ``epoch * n_batches + b + 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attack import AttackConfig, pgd, tpgd
from .checkpoint import Checkpoint, config_digest
from .data import BatchPlan, Dataset, batches
from .errors import ContractError, NumericalError
from .metrics import fosc, gap, grad_telemetry, sgcs_values
from .model import MlpSpec, Params, forward, init_params
from .rng import ALGORITHM, Rng

LOSS_MODES = ("trades", "pgd_at", "modified_trades")

# Rng.child keys for independent streams.
_INIT, _BATCH, _NOISE, _TRAIN_ATTACK, _VAL_ATTACK = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class TrainConfig:
    loss_mode: str = "trades"
    beta: float = 3.0
    epochs: int = 30
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple = (100, 150)
    lr_gamma: float = 0.1
    hidden_dims: tuple = (64, 64)
    attack: AttackConfig = field(default_factory=AttackConfig)
    val_steps: int = 10
    fosc_threshold: float = 0.1
    noise_std: float = 0.1
    noise_batches: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.loss_mode not in LOSS_MODES:
            raise ContractError(f"loss_mode must be one of {LOSS_MODES}")
        if self.beta < 0:
            raise ContractError("beta must be >= 0")
        if self.lr0 <= 0:
            raise ContractError("lr0 must be > 0")
        if not 0 < self.lr_gamma <= 1:
            raise ContractError("lr_gamma must lie in (0, 1]")
        if self.noise_batches < 0 or self.noise_std < 0:
            raise ContractError("noise_batches and noise_std must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.val_steps < 2:
            raise ContractError("need epochs >= 0, batch_size >= 1, val_steps >= 2")

    @property
    def guard_enabled(self):
        return math.isfinite(self.fosc_threshold)

    def to_dict(self):
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        d["hidden_dims"] = list(self.hidden_dims)
        d["fosc_threshold"] = self.fosc_threshold if self.guard_enabled else None
        return d


@dataclass
class GuardState:
    fosc_threshold: float
    add_noise_batches: int = 0
    best_adv_acc: float = 0.0
    best_checkpoint: Checkpoint | None = None


@dataclass
class EpochTelemetry:
    epoch: int
    lr: float
    clean_train_acc: float = 0.0
    adv_train_acc: float = 0.0
    gap: float = 0.0
    clean_val_acc: float = 0.0
    pgd_val_acc: float = 0.0
    fosc_mean: float = 0.0
    sgcs_mean: float = 0.0
    w_grad_norm_mean: float = 0.0
    ce_norm_mean: float = 0.0
    kl_norm_mean: float = 0.0
    grad_cos_mean: float = 0.0
    guard_triggered: bool = False
    noise_batches_applied: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class ValResult:
    clean_acc: float
    adv_acc: float
    fosc_mean: float
    sgcs_mean: float
    fosc_values: np.ndarray | None = None


@dataclass
class FitResult:
    best: Checkpoint | None
    epochs: list
    batches: list
    params: Params | None


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: multiply by gamma once for every decay epoch reached."""
    lr = cfg.lr0
    for e in sorted(cfg.lr_decay_epochs):
        if epoch >= e:
            lr *= cfg.lr_gamma
    return lr


def sgd_step(params: Params, lr, momentum, weight_decay, velocity: dict):
    """Nesterov SGD with L2 weight decay, in place.

    g = grad + wd*w;  v = mu*v + g;  w = w - lr*(g + mu*v)
    """
    for name, t in params:
        if t.grad is None:
            raise ContractError(f"sgd_step: no gradient for {name}")
        g = t.grad + weight_decay * t.data
        v = momentum * velocity.get(name, 0.0) + g
        velocity[name] = v
        t.data -= lr * (g + momentum * v)
    return params, velocity


def _accuracy(params: Params, x, y) -> float:
    return float((forward(params.detached(), x).data.argmax(axis=1) == y).mean())


def _adversary(params, x, y, cfg: TrainConfig, rng: Rng, lo, hi):
    if cfg.loss_mode == "trades":
        return tpgd(params, x, replace(cfg.attack, objective="kl"), lo, hi, rng=rng).x_adv
    return pgd(params, x, y, replace(cfg.attack, objective="ce"), lo, hi, rng=rng).x_adv


def train_epoch(params: Params, velocity: dict, data: Dataset, cfg: TrainConfig,
                guard: GuardState, epoch: int):
    """Train one epoch in place. Returns ``(EpochTelemetry, [GradTelemetry])``."""
    root = Rng(cfg.seed)
    plan = BatchPlan(cfg.batch_size, root.child(_BATCH).seed, epoch)
    plan_batches = batches(data, plan)
    lr = lr_at(epoch, cfg)
    rec = EpochTelemetry(epoch=epoch, lr=lr)
    batch_log = []
    sums = np.zeros(6)
    n_seen = 0

    def update(p):
        sgd_step(p, lr, cfg.momentum, cfg.weight_decay, velocity)

    for b, idx in enumerate(plan_batches):
        x = data.features[idx]
        y = data.labels[idx]
        if guard.add_noise_batches > 0:
            noise = root.child(_NOISE, epoch, b).normal(x.shape)
            x = data.clamp(x + cfg.noise_std * noise)
            guard.add_noise_batches -= 1
            rec.noise_batches_applied += 1
        x_adv = _adversary(params, x, y, cfg, root.child(_TRAIN_ATTACK, epoch, b),
                           data.domain_lo, data.domain_hi)
        clean_acc = _accuracy(params, x, y)
        adv_acc = _accuracy(params, x_adv, y)
        step = epoch * len(plan_batches) + b + 1
        try:
            tel, _ = grad_telemetry(params, x, x_adv, y, cfg.beta, update, cfg.loss_mode, step)
        except NumericalError as exc:
            raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
        batch_log.append(tel)
        w = len(idx)
        n_seen += w
        sums += w * np.array([clean_acc, adv_acc, tel.w_grad_norm, tel.ce_norm, tel.kl_norm,
                              tel.grad_cosine_similarity])
    # An unfinished countdown expires with the epoch: only the epoch right
    # after a trigger is noised.
    guard.add_noise_batches = 0
    means = sums / max(n_seen, 1)
    (rec.clean_train_acc, rec.adv_train_acc, rec.w_grad_norm_mean, rec.ce_norm_mean,
     rec.kl_norm_mean, rec.grad_cos_mean) = (float(v) for v in means)
    rec.gap = gap(rec.clean_train_acc, rec.adv_train_acc)
    return rec, batch_log


def validate(params: Params, data: Dataset, cfg: TrainConfig, epoch: int, chunk=500) -> ValResult:
    """Clean and PGD accuracy plus mean FOSC/SGCS from the PGD validation traces."""
    atk = replace(cfg.attack, objective="ce", steps=cfg.val_steps)
    root = Rng(cfg.seed)
    clean = adv = 0
    fosc_vals, sgcs_vals = [], []
    for i, s in enumerate(range(0, data.n, chunk)):
        x, y = data.features[s:s + chunk], data.labels[s:s + chunk]
        trace = pgd(params, x, y, atk, data.domain_lo, data.domain_hi,
                    rng=root.child(_VAL_ATTACK, epoch, i))
        pd = params.detached()
        clean += int((forward(pd, x).data.argmax(axis=1) == y).sum())
        adv += int((forward(pd, trace.x_adv).data.argmax(axis=1) == y).sum())
        fosc_vals.append(fosc(trace).values)
        sgcs_vals.append(sgcs_values(trace))
    fv = np.concatenate(fosc_vals)
    return ValResult(clean_acc=clean / data.n, adv_acc=adv / data.n, fosc_mean=float(fv.mean()),
                     sgcs_mean=float(np.concatenate(sgcs_vals).mean()), fosc_values=fv)


def make_checkpoint(params: Params, cfg: TrainConfig, epoch: int, rec: EpochTelemetry) -> Checkpoint:
    return Checkpoint(spec=params.spec, arrays=params.snapshot(), epoch=epoch,
                      config_digest=config_digest(cfg.to_dict()), rng_algorithm=ALGORITHM,
                      telemetry=rec.to_dict())


def validate_and_guard(params: Params, val: Dataset, cfg: TrainConfig, guard: GuardState,
                       epoch: int, rec: EpochTelemetry, evaluator=validate) -> ValResult:
    """Fill the validation columns of ``rec`` and apply the guard rules to ``guard``."""
    res = evaluator(params, val, cfg, epoch)
    rec.clean_val_acc = res.clean_acc
    rec.pgd_val_acc = res.adv_acc
    rec.fosc_mean = res.fosc_mean
    rec.sgcs_mean = res.sgcs_mean
    within = not (res.fosc_mean > guard.fosc_threshold)
    if res.adv_acc > guard.best_adv_acc and within:
        guard.best_adv_acc = res.adv_acc
        guard.best_checkpoint = make_checkpoint(params, cfg, epoch, rec)
    if not within:
        guard.add_noise_batches = cfg.noise_batches
        rec.guard_triggered = True
    return res


def fit(cfg: TrainConfig, train: Dataset, val: Dataset, evaluator=validate, on_epoch=None) -> FitResult:
    """Run ``cfg.epochs`` epochs; deterministic given ``cfg.seed``.

    ``evaluator(params, val, cfg, epoch) -> ValResult`` replaces PGD-10
    validation (tests inject FOSC values this way). ``on_epoch(rec, val_result)``
    is called after every epoch.
    """
    spec = MlpSpec(train.d, cfg.hidden_dims, train.k)
    params = init_params(spec, Rng(cfg.seed).child(_INIT))
    guard = GuardState(fosc_threshold=cfg.fosc_threshold)
    velocity = {}
    epochs, batch_log = [], []
    for epoch in range(cfg.epochs):
        rec, log = train_epoch(params, velocity, train, cfg, guard, epoch)
        res = validate_and_guard(params, val, cfg, guard, epoch, rec, evaluator)
        epochs.append(rec)
        batch_log.extend(log)
        if on_epoch is not None:
            on_epoch(rec, res)
    return FitResult(best=guard.best_checkpoint, epochs=epochs, batches=batch_log,
                     params=params if cfg.epochs else None)
