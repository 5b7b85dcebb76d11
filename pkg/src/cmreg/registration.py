"""Contact-manifold registration and the final align-and-insert motion."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .contact import ContactModel, contact_model
from .geometry import GeometryPair
from .pose import (Pose6, as_array, compose_arrays, distance_arrays, flat_difference,
                   invert_arrays, mean_pose_array, rotation_angle_deg)

EXACT_NN = "exact_nn"
LEARNED = "learned"


@dataclass
class Correspondence:
    """Maps hole-frame poses (N, 6) to their manifold correspondences (N, 6)."""

    fn: Callable[[np.ndarray], np.ndarray]
    backend: str

    def __call__(self, poses) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(poses, dtype=float).reshape(-1, 6)), dtype=float)

    @classmethod
    def exact(cls, manifold) -> "Correspondence":
        return cls(manifold.project, EXACT_NN)

    @classmethod
    def learned(cls, model) -> "Correspondence":
        return cls(model.project, LEARNED)


@dataclass
class RegistrationResult:
    estimate: Pose6
    iterations_run: int
    update_mm: list = field(default_factory=list)
    update_deg: list = field(default_factory=list)
    mean_residual: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    backend: str = ""

    def __post_init__(self):
        if not (len(self.update_mm) == len(self.update_deg) == len(self.mean_residual)
                == self.iterations_run):
            raise ValueError("trace length must equal iterations_run")

    def to_json(self) -> str:
        return json.dumps({
            "estimate": as_array(self.estimate).tolist(),
            "iterations_run": self.iterations_run,
            "trace": [{"update_mm": a, "update_deg": b, "mean_residual": c}
                      for a, b, c in zip(self.update_mm, self.update_deg, self.mean_residual)],
            "timings_s": self.timings,
            "backend": self.backend,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RegistrationResult":
        d = json.loads(text)
        tr = d["trace"]
        return cls(Pose6.from_array(d["estimate"]), int(d["iterations_run"]),
                   [t["update_mm"] for t in tr], [t["update_deg"] for t in tr],
                   [t["mean_residual"] for t in tr], dict(d.get("timings_s", {})),
                   d.get("backend", ""))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


class RegistrationDiverged(RuntimeError):
    pass


def register(observations, initial, corr: Correspondence, n_iter: int = 50, *,
             literal: bool = False, converge_eps: float | None = None,
             trim: float | None = None) -> RegistrationResult:
    """Iteratively align observed contact poses to the reference manifold.

    ``observations`` are agent-frame peg poses (an ObservationSet or an
    (N, 6) array). Each iteration expresses them in the current hole
    estimate, finds correspondences, averages the per-point misalignments and
    moves the estimate by that mean.

    The misalignment of a point is ``obs_i ⊗ corr_i⁻¹``, the hole-frame
    offset that carries the manifold point onto the observation; composing it
    on the right of the estimate converges. ``literal=True`` uses
    ``obs_i⁻¹ ⊗ corr_i`` instead, which for near-identity contact poses is
    the inverse offset and walks away from the solution; it is kept for
    comparison only.
    """
    obs = np.asarray(getattr(observations, "poses", observations), dtype=float).reshape(-1, 6)
    if len(obs) == 0:
        raise ValueError("no observations")
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    est = as_array(initial).astype(float)
    t_start = time.perf_counter()
    t_corr = 0.0
    cur = compose_arrays(invert_arrays(est), obs)
    up_mm, up_deg, resid = [], [], []
    for it in range(n_iter):
        t0 = time.perf_counter()
        proj = corr(cur)
        t_corr += time.perf_counter() - t0
        if literal:
            delta = compose_arrays(invert_arrays(cur), proj)
        else:
            delta = compose_arrays(cur, invert_arrays(proj))
        # exact correspondences carry no offset; keep them exactly zero
        delta[np.all(proj == cur, axis=1)] = 0.0
        r = distance_arrays(cur, proj)
        if trim:
            keep = np.argsort(r, kind="stable")[: max(1, int(math.ceil(len(r) * (1.0 - trim))))]
            delta = delta[np.sort(keep)]
        if not np.all(np.isfinite(delta)):
            raise RegistrationDiverged(f"registration diverged at iteration {it}")
        D = mean_pose_array(delta)
        if not np.all(np.isfinite(D)):
            raise RegistrationDiverged(f"registration diverged at iteration {it}")
        if np.any(D != 0.0):
            est = compose_arrays(est, D)
            cur = compose_arrays(invert_arrays(D), cur)
        um = float(np.linalg.norm(D[:3]))
        ud = float(rotation_angle_deg(D))
        if not (math.isfinite(um) and math.isfinite(ud) and np.all(np.isfinite(est))):
            raise RegistrationDiverged(f"registration diverged at iteration {it}")
        up_mm.append(um)
        up_deg.append(ud)
        resid.append(float(np.mean(r)))
        if converge_eps is not None and um < converge_eps and ud < converge_eps:
            break
    total = time.perf_counter() - t_start
    return RegistrationResult(Pose6.from_array(est), len(up_mm), up_mm, up_deg, resid,
                              {"correspondence": t_corr, "total": total}, corr.backend)


# ---------------------------------------------------------------- insertion

@dataclass(frozen=True)
class InsertionConfig:
    """Descent along the estimated axis with a bounded compliance.

    The peg can absorb up to ``comply_mm`` of lateral and ``comply_deg`` of
    angular misalignment per waypoint (quasi-static impedance); any residual
    that still penetrates the walls jams the insertion.
    """

    comply_mm: float = 0.5
    comply_deg: float = 0.5
    step_mm: float = 0.5


@dataclass(frozen=True)
class InsertionResult:
    success: bool
    max_penetration: float
    reached_depth: float


def _comply(dev: np.ndarray, comply_mm: float, comply_deg: float) -> np.ndarray:
    out = dev.copy()
    nt = float(np.linalg.norm(dev[:2]))
    nr = float(np.linalg.norm(dev[3:]))
    out[:2] *= max(0.0, 1.0 - comply_mm / nt) if nt > 0 else 0.0
    out[3:] *= max(0.0, 1.0 - comply_deg / nr) if nr > 0 else 0.0
    return out


def align_and_insert(pair: GeometryPair, estimate, true_hole, start_depth: float = 0.0,
                     cfg: InsertionConfig | None = None,
                     model: ContactModel | None = None) -> InsertionResult:
    """Descend along the estimated hole axis to full depth, resolved against the truth."""
    cfg = cfg or InsertionConfig()
    model = model or contact_model(pair)
    E = compose_arrays(invert_arrays(as_array(true_hole)), as_array(estimate))
    H = pair.hole_depth
    start = min(max(start_depth, 0.0), H)
    n = max(int(math.ceil((H - start) / cfg.step_mm)), 1)
    depths = start + (H - start) * np.arange(1, n + 1) / n
    cmd = np.zeros((n, 6))
    cmd[:, 2] = -depths
    W = compose_arrays(E, cmd)
    worst = -math.inf
    for i, w in enumerate(W):
        dev = w.copy()
        dev[2] = 0.0
        dev[3:] = flat_difference(w, np.zeros(6))[3:]
        p = _comply(dev, cfg.comply_mm, cfg.comply_deg)
        p[2] = w[2]
        g = model.gap(p)
        if math.isfinite(g):
            worst = max(worst, -g)
        if g < -model.pen_tol:
            return InsertionResult(False, worst, float(depths[i - 1]) if i else start)
    return InsertionResult(True, max(worst, 0.0) if math.isfinite(worst) else 0.0, H)
