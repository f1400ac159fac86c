"""L1 training loop: Adam, halving learning-rate schedule, epoch accounting,
checkpointing and deterministic seeding.

Each iteration's randomness derives from (seed, epoch, iteration), so the
sample stream is reproducible across runs and independent of any prefetching.
Losses are computed on the mean-subtracted 0..255 pixel scale.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import augment, sample_patch, step_rng
from .errors import ConfigError, ContractError, ImageTooSmall, TrainingDiverged
from .model import bind_params, save_checkpoint, super_resolve


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 16
    patch: int = 192
    iters_per_epoch: int = 1000
    epochs: int = 1000
    lr_half_every: int = 200
    seed: int = 0
    scale: int = 2
    checkpoint_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("lr0", "eps", "batch", "patch", "iters_per_epoch", "epochs",
                    "lr_half_every", "checkpoint_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.patch % self.scale != 0:
            raise ConfigError(f"patch ({self.patch}) must be divisible by scale ({self.scale})")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass
class OptimState:
    m: dict
    v: dict
    t: int = 0

    @staticmethod
    def zeros_like(params):
        return OptimState(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
            t=0,
        )


def l1_loss(pred, target):
    """Mean absolute error; the subgradient at zero is zero."""
    if pred.shape != target.shape:
        raise ContractError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return T.mean_all(T.absolute(T.sub(pred, target)))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place on the parameter arrays."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for k, arr in params.arrays.items():
        g = grads[k].astype(arr.dtype, copy=False)
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def lr_schedule(cfg, epoch):
    """Piecewise-constant halving: lr0 * 2^-(epoch // lr_half_every)."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * 2.0 ** (-(epoch // cfg.lr_half_every))


@dataclass
class FitResult:
    loss_log: list = field(default_factory=list)  # (epoch, iteration, lr, loss)
    checkpoints: list = field(default_factory=list)
    best_loss: float = float("inf")


def _assemble_batch(images, cfg, rng):
    """Pick images uniformly with replacement; sample + augment aligned patches."""
    lr_stack = []
    hr_stack = []
    guard = 0
    while len(lr_stack) < cfg.batch:
        idx = int(rng.integers(0, len(images)))
        source_id, hr, lr = images[idx]
        try:
            pair = sample_patch(hr, lr, cfg.scale, rng, patch=cfg.patch)
        except ImageTooSmall:
            guard += 1
            if guard > 100 * cfg.batch:
                raise ContractError(
                    f"no manifest image can supply a {cfg.patch}px training patch at scale {cfg.scale}"
                ) from None
            continue
        pair.source_id = source_id
        pair = augment(pair, rng)
        lr_stack.append(pair.lr_patch)
        hr_stack.append(pair.hr_patch)
    return np.stack(lr_stack), np.stack(hr_stack)


def train_step(params, model_cfg, lr_batch, hr_batch, state, lr,
               beta1=0.9, beta2=0.999, eps=1e-8):
    """Forward, L1 loss, backward, Adam; returns the step's loss value."""
    tape = T.Tape()
    bound = bind_params(params, tape)
    pred = super_resolve(bound, T.constant(lr_batch), model_cfg)
    loss = l1_loss(pred, T.constant(hr_batch))
    loss_value = float(loss.data)
    if not np.isfinite(loss_value):
        return loss_value
    grad_map = T.backward(tape, loss)
    grads = {k: grad_map[t] for k, t in bound.items()}
    adam_step(params, grads, state, lr, beta1=beta1, beta2=beta2, eps=eps)
    return loss_value


def fit(params, model_cfg, train_cfg, images, mean_stats, *, checkpoint_dir=None,
        log_path=None, start_epoch=0, optim_state=None, on_epoch_end=None,
        max_steps=None):
    """Run the training loop over preloaded (source_id, HR, LR) images.

    Fully deterministic under a fixed seed.  Checkpoints are written every
    ``checkpoint_every`` epochs plus a best-loss checkpoint; a sidecar .opt.npz
    carries the optimizer state for resuming.  ``max_steps`` caps the total
    number of iterations (for smoke runs).
    """
    if not images:
        raise ContractError("fit needs at least one training image")
    state = optim_state if optim_state is not None else OptimState.zeros_like(params)
    result = FitResult()
    log_file = open(log_path, "a") if log_path else None
    mean = np.asarray(mean_stats.mean_rgb, dtype=np.float32)
    steps_done = 0
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            lr = lr_schedule(train_cfg, epoch)
            epoch_losses = []
            for it in range(1, train_cfg.iters_per_epoch + 1):
                rng = step_rng(train_cfg.seed, epoch, it)
                lr_batch, hr_batch = _assemble_batch(images, train_cfg, rng)
                lr_batch -= mean[None, :, None, None]
                hr_batch -= mean[None, :, None, None]
                loss_value = train_step(
                    params, model_cfg, lr_batch, hr_batch, state, lr,
                    beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps,
                )
                if not np.isfinite(loss_value):
                    tail = [v[3] for v in result.loss_log[-5:]]
                    raise TrainingDiverged(step=state.t + 1, lr=lr, loss_tail=tail)
                epoch_losses.append(loss_value)
                if it == 1 or it % 100 == 0 or it == train_cfg.iters_per_epoch:
                    entry = (epoch, it, lr, loss_value)
                    result.loss_log.append(entry)
                    if log_file:
                        log_file.write(f"{epoch},{it},{lr:.8g},{loss_value:.8g}\n")
                        log_file.flush()
                steps_done += 1
                if max_steps is not None and steps_done >= max_steps:
                    break
            mean_loss = float(np.mean(epoch_losses))
            if checkpoint_dir is not None:
                _maybe_checkpoint(params, state, train_cfg, epoch, mean_loss, result, checkpoint_dir)
            if on_epoch_end is not None:
                on_epoch_end(epoch, mean_loss)
            if max_steps is not None and steps_done >= max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    return result


def _maybe_checkpoint(params, state, train_cfg, epoch, mean_loss, result, checkpoint_dir):
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    if (epoch + 1) % train_cfg.checkpoint_every == 0 or epoch + 1 == train_cfg.epochs:
        path = checkpoint_dir / f"epoch_{epoch:05d}.amsr"
        save_checkpoint(params, path)
        save_optim_state(state, epoch, path)
        result.checkpoints.append(str(path))
    if mean_loss < result.best_loss:
        result.best_loss = mean_loss
        best = checkpoint_dir / "best.amsr"
        save_checkpoint(params, best)
        save_optim_state(state, epoch, best)


def save_optim_state(state, epoch, checkpoint_path):
    sidecar = str(checkpoint_path) + ".opt.npz"
    payload = {"t": np.asarray(state.t), "epoch": np.asarray(epoch)}
    for k, arr in state.m.items():
        payload["m:" + k] = arr
    for k, arr in state.v.items():
        payload["v:" + k] = arr
    np.savez(sidecar, **payload)


def load_optim_state(checkpoint_path):
    """Returns (OptimState, next_epoch) for resuming after ``checkpoint_path``."""
    sidecar = str(checkpoint_path) + ".opt.npz"
    with np.load(sidecar) as z:
        m = {k[2:]: z[k].copy() for k in z.files if k.startswith("m:")}
        v = {k[2:]: z[k].copy() for k in z.files if k.startswith("v:")}
        state = OptimState(m=m, v=v, t=int(z["t"]))
        next_epoch = int(z["epoch"]) + 1
    return state, next_epoch
