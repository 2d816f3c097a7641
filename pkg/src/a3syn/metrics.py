"""Placement quality metrics from per-vertex scene distances."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry.sdf import query_sdf
from .rig import PoseState, SkinnedRig, skin_vertices
from .scene import SceneContext


def non_collision_rate(psi: np.ndarray) -> float:
    """Fraction of vertices strictly outside the scene."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.size == 0:
        return 1.0
    return float(np.mean(psi > 0.0))


def has_contact(psi: np.ndarray, tol: float = 0.0) -> bool:
    """True when some vertex touches or enters the scene surface."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.size == 0:
        return False
    return bool(psi.min() <= tol)


def contact_ratio(psi_batches, tol: float = 0.0) -> float:
    """Fraction of placements that make contact."""
    batches = list(psi_batches)
    if not batches:
        return 0.0
    return float(np.mean([has_contact(p, tol) for p in batches]))


def evaluate_pose(rig: SkinnedRig, pose: PoseState, scene: SceneContext) -> dict:
    world = skin_vertices(rig, pose)
    psi = query_sdf(scene.sdf, world)
    return {
        "non_collision": non_collision_rate(psi),
        "contact": has_contact(psi),
        "n_vertices": int(len(world)),
    }


def write_report(path, metrics: dict, clip_score: float | None = None) -> Path:
    """report.json next to the other run artifacts."""
    path = Path(path)
    doc = {
        "non_collision": float(metrics["non_collision"]),
        "contact": bool(metrics["contact"]),
        "clip_score": None if clip_score is None else float(clip_score),
        "n_vertices": int(metrics["n_vertices"]),
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
