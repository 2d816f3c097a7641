"""First-order pose optimization with per-group step sizes.

Scale is optimized in log space so its tiny learning rate acts
multiplicatively. The objective callback owns any context refreshing;
this module only steps parameters and records the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import LossBreakdown, PoseGradient
from .rig import PoseState


@dataclass
class OptimizerConfig:
    method: str = "adam"  # or "sgd"
    lr_articulation: float = 1e-2
    lr_translation: float = 1e-2
    lr_rotation: float = 1e-2
    lr_scale: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: str = "constant"  # or "cosine", annealing to final_lr_fraction
    final_lr_fraction: float = 0.0
    epochs_stage1: int = 200
    epochs_stage2: int = 100
    optimize_articulation: bool = True
    optimize_translation: bool = True
    optimize_rotation: bool = True
    optimize_scale: bool = True

    def __post_init__(self):
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.decay not in ("constant", "cosine"):
            raise ValueError(f"unknown decay schedule {self.decay!r}")
        if not 0.0 <= self.final_lr_fraction <= 1.0:
            raise ValueError("final_lr_fraction must lie in [0, 1]")
        for name in ("lr_articulation", "lr_translation", "lr_rotation", "lr_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def lr_scale_at(self, iteration: int, epochs: int) -> float:
        """Schedule multiplier, 1.0 at iteration 0."""
        if self.decay == "constant" or epochs <= 1:
            return 1.0
        ramp = 0.5 * (1.0 + math.cos(math.pi * iteration / epochs))
        return self.final_lr_fraction + (1.0 - self.final_lr_fraction) * ramp


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray


class _Stepper:
    def __init__(self, config: OptimizerConfig, shapes: dict):
        self.config = config
        self.t = 0
        self.slots = {
            k: _AdamSlot(np.zeros(s), np.zeros(s)) for k, s in shapes.items()
        }

    def step(self, params: dict, grads: dict, lr_scale: float = 1.0) -> dict:
        cfg = self.config
        self.t += 1
        out = {}
        for key, value in params.items():
            g = np.asarray(grads[key], dtype=np.float64)
            lr = getattr(cfg, f"lr_{key}") * lr_scale
            if cfg.method == "sgd":
                out[key] = value - lr * g
                continue
            slot = self.slots[key]
            slot.m = cfg.beta1 * slot.m + (1 - cfg.beta1) * g
            slot.v = cfg.beta2 * slot.v + (1 - cfg.beta2) * g**2
            m_hat = slot.m / (1 - cfg.beta1**self.t)
            v_hat = slot.v / (1 - cfg.beta2**self.t)
            out[key] = value - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return out


def run_stage(
    pose: PoseState,
    objective_fn,
    config: OptimizerConfig,
    epochs: int,
    stage: int = 1,
) -> tuple[PoseState, list[dict]]:
    """Minimize objective_fn for a fixed number of epochs.

    objective_fn(pose, iteration) -> (LossBreakdown, PoseGradient).
    Returns the final pose and one trace record per iteration with the
    losses measured before that iteration's update.
    """
    pose = pose.copy()
    num_bones = pose.articulation.shape[0]
    stepper = _Stepper(
        config,
        {
            "articulation": (num_bones, 3),
            "translation": (3,),
            "rotation": (3,),
            "scale": (),
        },
    )
    trace = []
    for it in range(epochs):
        breakdown, grad = objective_fn(pose, it)
        if not isinstance(breakdown, LossBreakdown) or not isinstance(
            grad, PoseGradient
        ):
            raise TypeError("objective_fn must return (LossBreakdown, PoseGradient)")
        record = {"stage": stage, "iteration": it}
        record.update(breakdown.as_dict())
        trace.append(record)

        params = {
            "articulation": pose.articulation,
            "translation": pose.translation,
            "rotation": pose.rotation,
            "scale": np.float64(math.log(pose.scale)),
        }
        grads = {
            "articulation": grad.articulation
            if config.optimize_articulation
            else np.zeros_like(grad.articulation),
            "translation": grad.translation
            if config.optimize_translation
            else np.zeros(3),
            "rotation": grad.rotation if config.optimize_rotation else np.zeros(3),
            "scale": grad.log_scale if config.optimize_scale else 0.0,
        }
        new = stepper.step(params, grads, config.lr_scale_at(it, epochs))
        pose = PoseState(
            articulation=new["articulation"],
            translation=new["translation"],
            rotation=new["rotation"],
            scale=math.exp(float(new["scale"])),
        )
    return pose, trace
