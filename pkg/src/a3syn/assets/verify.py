"""Rig sanity report used by the ingest command."""

from __future__ import annotations

import numpy as np

from ..rig import WEIGHT_TOL, SkinnedRig, rest_globals


def verify_rig(rig: SkinnedRig) -> dict:
    """Named checks, each {'ok': bool, 'detail': str}."""
    checks = {}

    parents = rig.skeleton.parents
    idx = np.arange(rig.num_bones)
    ok = bool(np.all(parents < idx) and np.all(parents >= -1))
    checks["hierarchy_topological"] = {
        "ok": ok,
        "detail": f"{rig.num_bones} bones, {int((parents == -1).sum())} roots",
    }

    sums = rig.weights.sum(axis=1)
    worst = float(np.abs(sums - 1.0).max()) if len(sums) else 0.0
    checks["weights_normalized"] = {
        "ok": bool(worst <= WEIGHT_TOL and rig.weights.min(initial=0.0) >= -WEIGHT_TOL),
        "detail": f"max row-sum deviation {worst:.2e}",
    }

    residual = float(
        np.abs(rig.inverse_bind @ rest_globals(rig.skeleton) - np.eye(4)).max()
    )
    checks["inverse_bind_consistent"] = {
        "ok": bool(residual <= 1e-4),
        "detail": f"max |IB @ rest - I| = {residual:.2e}",
    }

    if rig.faces.size:
        in_range = bool(
            rig.faces.min() >= 0 and rig.faces.max() < rig.num_vertices
        )
        detail = f"{len(rig.faces)} triangles over {rig.num_vertices} vertices"
    else:
        in_range, detail = True, "no faces"
    checks["faces_in_range"] = {"ok": in_range, "detail": detail}

    finite = bool(
        np.all(np.isfinite(rig.vertices))
        and np.all(np.isfinite(rig.weights))
        and np.all(np.isfinite(rig.inverse_bind))
        and np.all(np.isfinite(rig.skeleton.rest_local))
    )
    checks["values_finite"] = {"ok": finite, "detail": "vertices/weights/matrices"}

    return checks
