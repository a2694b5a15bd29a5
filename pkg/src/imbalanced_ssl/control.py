"""Decoupled sampling control: threshold initialization from the matched
anchor's expansion factor, bias-driven per-class threshold decay, bias-vector
extraction, logit calibration, and unlabeled-count estimation.

The controller reads exactly one signal: the output head's bias term, a proxy
for accumulated optimization imbalance.  Each step, every class whose bias
exceeds nu has its confidence threshold lowered by alpha on both heads.
Entries only ever decrease.  The decay rule stops at rho_floor; an entry
whose initialization already sits below the floor (large expansion factors
produce these) is frozen there rather than pulled up, so trajectories are
nonincreasing without exception.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import network
from .network import Model

__all__ = [
    "ThresholdState",
    "BiasVector",
    "init_thresholds",
    "update_thresholds",
    "extract_bias_vector",
    "calibrate_logits",
    "predict_calibrated",
    "estimate_unlabeled_distribution",
]

DEFAULT_ALPHA = 0.005
DEFAULT_NU = 1.0
DEFAULT_RHO_MAX = 0.95
DEFAULT_RHO_FLOOR = 0.5


@dataclass(frozen=True)
class ThresholdState:
    """Per-class confidence thresholds for the balanced (rho_b) and expansive
    (rho_e) heads, plus the controller constants."""

    rho_b: np.ndarray
    rho_e: np.ndarray
    alpha: float = DEFAULT_ALPHA
    nu: float = DEFAULT_NU
    rho_max: float = DEFAULT_RHO_MAX
    rho_floor: float = DEFAULT_RHO_FLOOR

    def __post_init__(self) -> None:
        if not 0.0 < self.rho_floor < self.rho_max <= 1.0:
            raise ValueError("need 0 < rho_floor < rho_max <= 1")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be > 0")
        for name in ("rho_b", "rho_e"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.ndim != 1 or arr.size < 2:
                raise ValueError(f"{name} must be a per-class vector")
            if np.any(arr <= 0.0) or np.any(arr > self.rho_max + 1e-12):
                raise ValueError(f"{name} entries must lie in (0, rho_max]")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.rho_b.size != self.rho_e.size:
            raise ValueError("rho_b and rho_e must have the same length")

    @property
    def k(self) -> int:
        return int(self.rho_b.size)


@dataclass(frozen=True)
class BiasVector:
    """Snapshot of the output head's bias term."""

    b_opt: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.b_opt, dtype=np.float64).copy()
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("bias vector must be a finite vector")
        arr.flags.writeable = False
        object.__setattr__(self, "b_opt", arr)


def init_thresholds(c: float, gamma_u: float, head_classes: np.ndarray,
                    alpha: float = DEFAULT_ALPHA, nu: float = DEFAULT_NU,
                    rho_max: float = DEFAULT_RHO_MAX,
                    rho_floor: float = DEFAULT_RHO_FLOOR) -> ThresholdState:
    """Head classes start at rho_max on both heads.  Non-head entries:

        rho_b0 = rho_max - ((c - 4) / 10) * min(gamma_u / 50, 1)
        rho_e0 = rho_max - ((c - 3) / 5)  * min(gamma_u / 20, 1)

    capped above at rho_max and required to stay positive.  These values may
    legitimately start below rho_floor (c=6 with saturated imbalance gives
    0.35); the floor only limits the later bias-driven decay.  Larger
    expansion factors and heavier unlabeled imbalance push non-head
    thresholds further down, and the expansive head always at least as far
    as the balanced one once both damping terms saturate.
    """
    if not c > 3.0:
        raise ValueError(f"expansion factor must exceed 3, got {c}")
    if gamma_u < 1.0:
        raise ValueError(f"imbalance ratio must be >= 1, got {gamma_u}")
    head = np.asarray(head_classes, dtype=bool)
    if head.ndim != 1 or head.size < 2:
        raise ValueError("head_classes must be a boolean vector over classes")
    rho_b0 = rho_max - ((c - 4.0) / 10.0) * min(gamma_u / 50.0, 1.0)
    rho_e0 = rho_max - ((c - 3.0) / 5.0) * min(gamma_u / 20.0, 1.0)
    if min(rho_b0, rho_e0) <= 0.0:
        raise ValueError(f"expansion factor {c} drives a threshold nonpositive")
    rho_b = np.where(head, rho_max, min(rho_b0, rho_max))
    rho_e = np.where(head, rho_max, min(rho_e0, rho_max))
    return ThresholdState(rho_b=rho_b, rho_e=rho_e, alpha=alpha, nu=nu,
                          rho_max=rho_max, rho_floor=rho_floor)


def update_thresholds(state: ThresholdState, bias: BiasVector) -> ThresholdState:
    """One controller tick: rho(k) -= alpha wherever b_opt(k) > nu (signed
    comparison, both heads, same rule).  The decay is clamped at rho_floor;
    entries already below the floor stay where they are, so the trajectory
    never increases."""
    if bias.b_opt.size != state.k:
        raise ValueError("bias vector length must match class count")
    hot = bias.b_opt > state.nu
    if not np.any(hot):
        return state
    step = state.alpha * hot
    return replace(state,
                   rho_b=np.maximum(state.rho_b - step,
                                    np.minimum(state.rho_b, state.rho_floor)),
                   rho_e=np.maximum(state.rho_e - step,
                                    np.minimum(state.rho_e, state.rho_floor)))


def extract_bias_vector(model: Model) -> BiasVector:
    """The output head's bias term, copied.  Never another head's."""
    return BiasVector(b_opt=model.heads["output"].b.copy())


def calibrate_logits(model: Model, x: np.ndarray) -> np.ndarray:
    """Inference-time correction: the output head's affine map with its bias
    removed, exactly W_b @ B(x)."""
    feats = network.forward_features(model, x)
    w = model.heads["output"].w
    return feats @ w.T


def predict_calibrated(model: Model, x: np.ndarray) -> np.ndarray | int:
    logits = calibrate_logits(model, x)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


def estimate_unlabeled_distribution(model: Model, unlabeled_x: np.ndarray) -> np.ndarray:
    """Histogram of calibrated predictions over the unlabeled split; sums to
    the split size by construction."""
    x = np.asarray(unlabeled_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("unlabeled set must be a nonempty (M, D) array")
    preds = predict_calibrated(model, x)
    return np.bincount(preds, minlength=model.k).astype(np.int64)
