"""Training, evaluation and prediction loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig, dump_config, load_config
from .data import DepthSample, augment, crop, image_to_input
from .errors import ConfigError, NumericError
from .losses import DepthPair, MetricsReport, compute_metrics, silog_loss
from .model import DepthNet
from .nn import load_weights, save_weights
from .tensor import Tensor, reshape

logger = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


class Adam:
    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-6):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float, cosine: bool = True) -> float:
    """Learning rate at ``step`` (0-based); the last step lands exactly on ``lr_end``."""
    if total_steps <= 1:
        return lr_start
    frac = step / (total_steps - 1)
    if not cosine:
        return lr_start + (lr_end - lr_start) * frac
    return lr_end + 0.5 * (lr_start - lr_end) * (1 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    model: DepthNet
    step_losses: list[float] = field(default_factory=list)
    step_lrs: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    best_state: dict | None = None
    best_loss: float = math.inf


def predict_tensor(model: DepthNet, rgb: np.ndarray) -> Tensor:
    cfg = model.cfg
    out = model(Tensor(image_to_input(rgb)))
    return reshape(out, (cfg.input_h, cfg.input_w))


def predict(model: DepthNet, rgb: np.ndarray) -> np.ndarray:
    """Depth (H×W, metres) for one H×W×3 RGB raster."""
    h, w = rgb.shape[:2]
    if (h, w) != (model.cfg.input_h, model.cfg.input_w):
        raise ConfigError(
            f"image is {h}×{w} but the model expects {model.cfg.input_h}×{model.cfg.input_w}"
        )
    return predict_tensor(model, rgb).data.copy()


def total_steps(cfg: RunConfig, n_samples: int) -> int:
    steps = cfg.train.epochs * math.ceil(n_samples / cfg.train.batch_size)
    return min(steps, cfg.train.max_steps) if cfg.train.max_steps else steps


def train(
    cfg: RunConfig,
    samples: list[DepthSample],
    out_dir: str | Path | None = None,
    on_step: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Adam with a cosine-annealed learning rate on the mean silog loss of each batch."""
    cfg.validate()
    if not samples:
        raise ConfigError("training set is empty")
    for s in samples:
        if s.shape != (cfg.model.input_h, cfg.model.input_w):
            raise ConfigError(f"sample of shape {s.shape} does not match model input {cfg.model.input_h}×{cfg.model.input_w}")
    rng = np.random.default_rng(cfg.train.seed)
    model = DepthNet(cfg.model, seed=cfg.train.seed)
    opt = Adam(model.parameters(), cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps)
    n_total = total_steps(cfg, len(samples))
    result = TrainResult(model)
    bs = cfg.train.batch_size
    step = 0
    for epoch in range(cfg.train.epochs):
        if step >= n_total:
            break
        order = rng.permutation(len(samples))
        epoch_loss = []
        for start in range(0, len(samples), bs):
            if step >= n_total:
                break
            batch = order[start : start + bs]
            model.zero_grad()
            batch_loss = 0.0
            for i in batch:
                s = augment(samples[i], cfg.augment, rng)
                try:
                    loss = silog_loss(predict_tensor(model, s.rgb), s.depth, s.mask, cfg.loss.lam)
                    (loss * (1.0 / len(batch))).backward()
                except NumericError as exc:
                    raise TrainingDiverged(step, str(exc)) from exc
                batch_loss += loss.item() / len(batch)
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(step)
            lr = cosine_lr(step, n_total, cfg.schedule.lr_start, cfg.schedule.lr_end, cfg.schedule.cosine)
            opt.step(lr)
            result.step_losses.append(batch_loss)
            result.step_lrs.append(lr)
            epoch_loss.append(batch_loss)
            if on_step is not None:
                on_step(step, lr, batch_loss)
            step += 1
        mean_loss = float(np.mean(epoch_loss))
        result.epoch_losses.append(mean_loss)
        logger.info("epoch %d loss %.6f", epoch, mean_loss)
        if mean_loss < result.best_loss:
            result.best_loss = mean_loss
            result.best_state = model.state_dict()
    if out_dir is not None:
        write_run(cfg, result, out_dir)
    return result


def write_run(cfg: RunConfig, result: TrainResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(dump_config(cfg))
    with open(out / "steps.csv", "w") as fh:
        fh.write("step,lr,loss\n")
        for i, (lr, loss) in enumerate(zip(result.step_lrs, result.step_losses)):
            fh.write(f"{i},{lr!r},{loss!r}\n")
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(result.epoch_losses):
            fh.write(f"{i},{loss!r}\n")
    save_weights(out / "final.ecdw", result.model)
    save_weights(out / "best.ecdw", result.best_state or result.model.state_dict())


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> tuple[DepthNet, RunConfig]:
    """Rebuild a model from an ECDW file; the config defaults to ``run.cfg`` beside it."""
    path = Path(path)
    if cfg is None:
        cfg = load_config(path.parent / "run.cfg")
    model = DepthNet(cfg.model)
    model.load_state_dict(load_weights(path))
    return model, cfg


def evaluate(
    model: DepthNet,
    samples: list[DepthSample],
    cap: tuple[float, float],
    crop_mode: str = "none",
    predictions: list[np.ndarray] | None = None,
) -> tuple[MetricsReport, list[MetricsReport]]:
    """Per-image metrics and their unweighted mean.

    ``predictions`` replaces the model output (used to score given depth maps).
    """
    per_image = []
    for i, s in enumerate(samples):
        pred = predict(model, s.rgb) if predictions is None else np.asarray(predictions[i], float)
        if pred.shape != s.shape:
            raise ConfigError(f"prediction shape {pred.shape} differs from ground truth {s.shape}")
        joined = crop(DepthSample(s.rgb, np.stack([s.depth, pred], -1), s.mask), crop_mode)
        pair = DepthPair(joined.depth[..., 1], joined.depth[..., 0], joined.mask, cap)
        per_image.append(compute_metrics(pair))
    return MetricsReport.mean(per_image), per_image
