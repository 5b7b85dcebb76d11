"""Online contact-observation collection under an erroneous hole estimate.

Motions are commanded in the estimated hole frame (or relative to the peg's
own state) and resolved against the true geometry, so the estimator never
sees the truth; the true hole pose travels with the data for evaluation only.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import ContactModel, contact_model
from .geometry import GeometryPair
from .manifold import _fmt, read_meta, read_pose_csv, write_meta
from .pose import Pose6, as_array, compose_arrays, invert_arrays, mean_pose_array

OBS_HEADER = "t_s,x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg"
ERROR_BOUND_MM = 5.0
ERROR_BOUND_DEG = 5.0


class SearchFailed(RuntimeError):
    pass


class NoContact(RuntimeError):
    pass


@dataclass(frozen=True)
class StageConfig:
    amplitude_mm: float
    amplitude_deg: tuple
    depth_fraction: float
    spiral_turns: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "amplitude_deg", tuple(float(a) for a in self.amplitude_deg))


@dataclass(frozen=True)
class ObserverConfig:
    t_obs: float = 10.0
    waypoint_rate: float = 50.0
    stage1_share: float = 0.4
    stage1: StageConfig = StageConfig(3.0, (12.0, 12.0, 12.0), 0.3)
    stage2: StageConfig = StageConfig(1.5, (6.0, 6.0, 6.0), 0.55, 5.0)
    entry_fraction: float = 0.1
    search_pitch: float = 1.5
    search_max_radius: float = 10.0
    search_step: float = 0.8
    search_budget_s: float = 20.0
    capture_radius: float = 1.0
    oscillation_hz: tuple = (1.3, 1.9, 2.3)
    downsample_k: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.t_obs <= 0 or self.waypoint_rate <= 0:
            raise ValueError("t_obs and waypoint_rate must be positive")
        if not 0 < self.stage1_share < 1:
            raise ValueError("stage1_share must lie in (0, 1)")
        s1, s2 = self.stage1, self.stage2
        if not (s2.amplitude_mm < s1.amplitude_mm
                and all(b < a for a, b in zip(s1.amplitude_deg, s2.amplitude_deg))):
            raise ValueError("stage-2 amplitudes must be smaller than stage-1 amplitudes")
        if not self.entry_fraction < s1.depth_fraction <= s2.depth_fraction < 1:
            raise ValueError("depth targets must increase: entry < stage 1 <= stage 2 < 1")
        if self.downsample_k < 6:
            raise ValueError("downsample_k must be >= 6")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ObservationSet:
    poses: np.ndarray  # agent frame
    timestamps: np.ndarray
    geometry: str
    true_hole_pose: Pose6  # evaluation only
    est_hole_pose: Pose6 | None = None
    stage: np.ndarray | None = None
    seeds: dict = field(default_factory=dict)
    partial_pose: np.ndarray | None = None  # agent frame pose at the end of the search
    final_pose: np.ndarray | None = None  # agent frame pose at the end of collection
    truncated: bool = False

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 6)
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(self.poses) != len(self.timestamps):
            raise ValueError("poses and timestamps differ in length")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def in_hole_frame(self, hole: Pose6 | None = None) -> np.ndarray:
        h = self.true_hole_pose if hole is None else hole
        return compose_arrays(invert_arrays(as_array(h)), self.poses)


def perturb_hole_pose(true_pose, seed, bound_mm: float = ERROR_BOUND_MM,
                      bound_deg: float = ERROR_BOUND_DEG) -> Pose6:
    """``true_pose`` composed with a uniform error in x, y and the three angles."""
    rng = np.random.default_rng(seed)
    d = np.zeros(6)
    d[0:2] = rng.uniform(-bound_mm, bound_mm, size=2)
    d[3:6] = rng.uniform(-bound_deg, bound_deg, size=3)
    return Pose6.from_array(compose_arrays(as_array(true_pose), d))


class _Plant:
    """Peg under the quasi-static compliance model, seen from the agent frame."""

    def __init__(self, pair: GeometryPair, true_hole, model: ContactModel | None = None):
        self.pair = pair
        self.model = model or contact_model(pair)
        self.T_h = as_array(true_hole)
        self.T_h_inv = invert_arrays(self.T_h)

    def to_hole(self, agent_poses) -> np.ndarray:
        return compose_arrays(self.T_h_inv, agent_poses)

    def to_agent(self, hole_poses) -> np.ndarray:
        return compose_arrays(self.T_h, hole_poses)

    def execute(self, agent_waypoints):
        """Resolve commanded agent-frame waypoints; returns hole-frame poses and contact flags."""
        return self.model.resolve_many(self.to_hole(agent_waypoints))


def _search_waypoints(cfg: ObserverConfig, depth: float) -> np.ndarray:
    n = int(round(cfg.search_budget_s * cfg.waypoint_rate))
    # Archimedean spiral r = b*theta, sampled at roughly constant arc length
    b = cfg.search_pitch / (2.0 * math.pi)
    theta = np.zeros(n)
    for i in range(1, n):
        r = b * theta[i - 1]
        theta[i] = theta[i - 1] + cfg.search_step / max(math.hypot(r, b), 0.5 * cfg.search_step)
    r = b * theta
    keep = r <= cfg.search_max_radius
    W = np.zeros((int(keep.sum()), 6))
    W[:, 0] = r[keep] * np.cos(theta[keep])
    W[:, 1] = r[keep] * np.sin(theta[keep])
    W[:, 2] = -depth
    return W


def search_to_partial_insertion(pair: GeometryPair, est_hole, true_hole,
                                cfg: ObserverConfig | None = None,
                                model: ContactModel | None = None) -> Pose6:
    """Spiral at entry depth in the estimated frame until the peg drops in.

    The peg is captured once its bottom centre passes within
    ``capture_radius`` of the true axis below the mouth; it then complies to
    the first contact toward the axis. Returns the agent-frame pose.
    """
    return search_with_duration(pair, est_hole, true_hole, cfg, model)[0]


def search_with_duration(pair: GeometryPair, est_hole, true_hole,
                         cfg: ObserverConfig | None = None,
                         model: ContactModel | None = None) -> tuple[Pose6, float]:
    """As search_to_partial_insertion, also returning the simulated search time in s."""
    cfg = cfg or ObserverConfig()
    plant = _Plant(pair, true_hole, model)
    W = compose_arrays(as_array(est_hole), _search_waypoints(cfg, cfg.entry_fraction * pair.hole_depth))
    H = plant.to_hole(W)
    near = (np.hypot(H[:, 0], H[:, 1]) <= cfg.capture_radius) & (H[:, 2] < 0.0)
    if not near.any():
        raise SearchFailed("search failed: no engagement within the search budget")
    i = int(np.argmax(near))
    P, _ = plant.model.resolve_many(H[i:i + 1])
    return Pose6.from_array(plant.to_agent(P[0])), (i + 1) / cfg.waypoint_rate


def _stage_offsets(stage: StageConfig, n: int, z_from: float, z_to: float,
                   rate: float, hz, t0: float) -> np.ndarray:
    """Relative waypoints: outward spiral in xy, sinusoids in the angles, linear descent."""
    u = (np.arange(n) + 1.0) / n
    theta = 2.0 * math.pi * stage.spiral_turns * u
    r = stage.amplitude_mm * np.sqrt(u)
    t = t0 + np.arange(n) / rate
    W = np.zeros((n, 6))
    W[:, 0] = r * np.cos(theta)
    W[:, 1] = r * np.sin(theta)
    W[:, 2] = z_from + (z_to - z_from) * u
    for j in range(3):
        W[:, 3 + j] = stage.amplitude_deg[j] * np.sin(2.0 * math.pi * hz[j] * t + 1.1 * j)
    return W


def collect_observations(pair: GeometryPair, est_hole, true_hole,
                         cfg: ObserverConfig | None = None,
                         model: ContactModel | None = None,
                         partial=None) -> ObservationSet:
    """Search, then run the two perturbation stages and record contact poses."""
    cfg = cfg or ObserverConfig()
    plant = _Plant(pair, true_hole, model)
    T_est = as_array(est_hole)
    if partial is None:
        partial = search_to_partial_insertion(pair, est_hole, true_hole, cfg, plant.model)
    p0 = as_array(partial)
    n_total = int(round(cfg.t_obs * cfg.waypoint_rate))
    n1 = int(round(cfg.stage1_share * n_total))
    n2 = n_total - n1
    H = pair.hole_depth
    rate = cfg.waypoint_rate

    def depth_in_est(agent_pose) -> float:
        return -float(compose_arrays(invert_arrays(T_est), agent_pose)[2])

    # stage 1: around the partial-insertion pose, descending along its axis
    d0 = depth_in_est(p0)
    W1 = _stage_offsets(cfg.stage1, n1, 0.0, -(cfg.stage1.depth_fraction * H - d0),
                        rate, cfg.oscillation_hz, 0.0)
    P1, c1 = plant.execute(compose_arrays(p0, W1))
    if not c1.any():
        raise NoContact("no contact observed during stage 1")
    A1 = plant.to_agent(P1[c1])
    # stage 2: around the mean stage-1 contact, smaller and deeper
    centre = mean_pose_array(A1)
    dc = depth_in_est(centre)
    W2 = _stage_offsets(cfg.stage2, n2, 0.0, -(cfg.stage2.depth_fraction * H - dc),
                        rate, cfg.oscillation_hz, n1 / rate)
    P2, c2 = plant.execute(compose_arrays(centre, W2))
    hole_poses = np.concatenate([P1, P2])
    contact = np.concatenate([c1, c2])
    times = np.arange(n_total) / rate
    stage = np.concatenate([np.ones(n1, dtype=int), np.full(n2, 2)])
    # only poses the contact oracle classifies as Contact count as observations
    verified = np.zeros_like(contact)
    if contact.any():
        verified[contact] = plant.model.kinds(hole_poses[contact]) == 1
    if not verified.any():
        raise NoContact("no contact observed")
    agent = plant.to_agent(hole_poses[verified])
    final = plant.to_agent(hole_poses[-1])
    return ObservationSet(agent, times[verified], pair.name, Pose6.from_array(as_array(true_hole)),
                          Pose6.from_array(T_est), stage[verified],
                          {"observer": cfg.rng_seed}, p0, final)


def downsample(obs: ObservationSet, k: int) -> ObservationSet:
    """Keep ``k`` poses at evenly spaced quantile positions (endpoints included)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(obs)
    if k >= n:
        out = dataclasses.replace(obs)
        out.truncated = k > n
        return out
    if k == 1:
        idx = np.array([0])
    else:
        idx = np.round(np.arange(k) * (n - 1) / (k - 1)).astype(int)
    return dataclasses.replace(obs, poses=obs.poses[idx], timestamps=obs.timestamps[idx],
                               stage=None if obs.stage is None else obs.stage[idx])


# ------------------------------------------------------------------- files

def save_observations(obs: ObservationSet, path) -> None:
    path = Path(path)
    lines = [OBS_HEADER]
    for t, p in zip(obs.timestamps, obs.poses):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in p]))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "geometry": obs.geometry,
        "rows": str(len(obs)),
        "seeds": " ".join(f"{k}:{v}" for k, v in sorted(obs.seeds.items())),
        "est_hole_pose": " ".join(_fmt(v) for v in as_array(obs.est_hole_pose))
        if obs.est_hole_pose is not None else "",
        "# ground truth below is for evaluation only; estimators must not read it": None,
        "true_hole_pose_eval_only": " ".join(_fmt(v) for v in as_array(obs.true_hole_pose)),
    }
    lines = []
    for k, v in meta.items():
        lines.append(k if v is None else f"{k}={v}")
    path.with_name(path.name + ".meta").write_text("\n".join(lines) + "\n")


def load_observations(path) -> ObservationSet:
    path = Path(path)
    data = read_pose_csv(path, OBS_HEADER, 7)
    meta = read_meta(path.with_name(path.name + ".meta"))
    if int(meta.get("rows", len(data))) != len(data):
        raise ValueError(f"{path}: sidecar row count does not match")
    seeds = {}
    for item in meta.get("seeds", "").split():
        k, v = item.split(":")
        seeds[k] = int(v)

    def pose(key):
        raw = meta.get(key, "")
        return Pose6.from_array([float(v) for v in raw.split()]) if raw else None

    true = pose("true_hole_pose_eval_only") or Pose6()
    return ObservationSet(data[:, 1:], data[:, 0], meta.get("geometry", ""), true,
                          pose("est_hole_pose"), None, seeds)


__all__ = ["ObserverConfig", "StageConfig", "ObservationSet", "SearchFailed", "NoContact",
           "perturb_hole_pose", "search_to_partial_insertion", "search_with_duration", "collect_observations",
           "downsample", "save_observations", "load_observations", "write_meta"]
