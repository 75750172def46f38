"""Scale-invariant log loss and depth evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DomainError, EmptyMaskError
from .tensor import Tensor, as_tensor, log, mul, reduce_mean, reshape, sqrt, sub, take

# a zero lower cap cannot be used to clamp predictions before taking logs
MIN_EVAL_DEPTH = 1e-3

METRIC_COLUMNS = ("delta1", "delta2", "delta3", "absrel", "sqrel", "rmse", "rmse_log", "log10")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"loss.lam must lie in [0, 1], got {self.lam}")


@dataclass
class DepthPair:
    pred: np.ndarray | Tensor
    gt: np.ndarray
    mask: np.ndarray | None = None
    cap: tuple[float, float] | None = None

    def valid_mask(self) -> np.ndarray:
        gt = np.asarray(self.gt, dtype=np.float64)
        mask = np.ones(gt.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if self.cap is not None:
            lo, hi = effective_cap(self.cap)
            mask = mask & (gt >= lo) & (gt <= hi)
        return mask


def effective_cap(cap: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(cap[0]), float(cap[1])
    lo = max(lo, MIN_EVAL_DEPTH)
    if hi <= lo:
        raise ConfigError(f"depth cap {cap} is empty")
    return lo, hi


def silog_loss(
    pred: Tensor | np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray | None = None,
    lam: float | LossConfig = 0.85,
) -> Tensor:
    """sqrt(mean(g^2) - lam * mean(g)^2) with g = log(gt) - log(pred) over masked pixels.

    Evaluated as sqrt(var(g) + (1 - lam) * mean(g)^2), which is the same quantity
    without the cancellation between the two sums.
    """
    if isinstance(lam, LossConfig):
        lam = lam.lam
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"silog_loss: pred {pred.shape} and gt {gt.shape} differ")
    m = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, bool)
    idx = np.flatnonzero(m)
    if idx.size == 0:
        raise EmptyMaskError("silog_loss: mask selects no pixels")
    gt_sel = gt.reshape(-1)[idx]
    if np.any(gt_sel <= 0) or np.any(pred.data.reshape(-1)[idx] <= 0):
        raise DomainError("silog_loss: masked depths must be strictly positive")
    d_star = take(reshape(pred, (-1,)), idx)
    g = sub(np.log(gt_sel), log(d_star))
    mean_g = reduce_mean(g)
    centred = g - mean_g
    inner = reduce_mean(mul(centred, centred)) + (1.0 - lam) * mul(mean_g, mean_g)
    return sqrt(inner)


@dataclass
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    absrel: float
    sqrel: float
    rmse: float
    rmse_log: float
    log10: float

    def to_kv(self) -> str:
        return " ".join(f"{k}={getattr(self, k)!r}" for k in METRIC_COLUMNS)

    def to_csv_row(self) -> str:
        return ",".join(repr(getattr(self, k)) for k in METRIC_COLUMNS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(METRIC_COLUMNS)

    @classmethod
    def from_kv(cls, line: str) -> "MetricsReport":
        items = dict(part.split("=", 1) for part in line.split())
        return cls(**{k: float(items[k]) for k in METRIC_COLUMNS})

    @classmethod
    def from_csv_row(cls, row: str) -> "MetricsReport":
        return cls(*(float(v) for v in row.strip().split(",")))

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        if not reports:
            raise EmptyMaskError("no reports to average")
        return cls(**{f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(cls)})

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def compute_metrics(pair: DepthPair) -> MetricsReport:
    """Threshold accuracies and error metrics over the valid pixels of ``pair``.

    Predictions are clamped into the cap when one is given, and ground truth
    outside the cap is excluded.  Relative errors are normalised by ground truth.
    """
    pred = pair.pred.data if isinstance(pair.pred, Tensor) else np.asarray(pair.pred, dtype=np.float64)
    gt = np.asarray(pair.gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"compute_metrics: pred {pred.shape} and gt {gt.shape} differ")
    m = pair.valid_mask()
    if not m.any():
        raise EmptyMaskError("compute_metrics: mask selects no pixels")
    d, p = gt[m], pred[m]
    if pair.cap is not None:
        p = np.clip(p, *effective_cap(pair.cap))
    if np.any(d <= 0) or np.any(p <= 0):
        raise DomainError("compute_metrics: masked depths must be strictly positive")
    ratio = np.maximum(d / p, p / d)
    diff = d - p
    log_diff10 = np.log10(d) - np.log10(p)
    return MetricsReport(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        absrel=float(np.mean(np.abs(diff) / d)),
        sqrel=float(np.mean(diff**2 / d)),
        rmse=math.sqrt(float(np.mean(diff**2))),
        rmse_log=math.sqrt(float(np.mean(log_diff10**2))),
        log10=float(np.mean(np.abs(log_diff10))),
    )
