"""Reference contact manifold: sampling controller, storage and NN index."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import ContactModel, contact_model
from .geometry import GeometryPair, builtin_pair, resolve_geometry
from .kdtree import KDTree
from .pose import Pose6, as_array, wrap_degrees

CSV_HEADER = "x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg"
FORMAT_VERSION = 1
# waypoints tried per requested contact before a depth level counts as starving
MAX_WAYPOINTS_PER_SAMPLE = 40


@dataclass(frozen=True)
class SamplerConfig:
    """Spiral + oscillation sampling controller parameters.

    Depth levels are fractions of the hole depth. Levels at or below
    ``band_split`` use the shallow amplitudes, deeper ones the deep amplitudes.
    """

    spiral_pitch: float = 0.5
    spiral_max_radius: float = 3.0
    shallow_amplitudes: tuple = (7.0, 7.0, 7.0)
    deep_amplitudes: tuple = (3.5, 3.5, 3.5)
    deep_radius_scale: float = 0.5
    band_split: float = 0.3
    perturbation_scale: tuple = (0.75, 0.5)
    depth_fractions: tuple = tuple(np.round(np.linspace(0.1, 0.8, 16), 6).tolist())
    samples_target: int = 50_000
    rng_seed: int = 0
    oscillation_rates: tuple = (0.37, 0.53, 0.71)

    def __post_init__(self):
        for name in ("shallow_amplitudes", "deep_amplitudes", "perturbation_scale",
                     "depth_fractions", "oscillation_rates"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.spiral_pitch <= 0 or self.spiral_max_radius <= 0:
            raise ValueError("spiral pitch and radius must be positive")
        if min(self.shallow_amplitudes + self.deep_amplitudes) <= 0:
            raise ValueError("oscillation amplitudes must be strictly positive")
        if any(s < d for s, d in zip(self.shallow_amplitudes, self.deep_amplitudes)):
            raise ValueError("shallow-band amplitudes must be >= deep-band amplitudes")
        if not 0 < self.deep_radius_scale <= 1:
            raise ValueError("deep_radius_scale must be in (0, 1]")
        if any(s < 0 for s in self.perturbation_scale) or len(self.perturbation_scale) != 2:
            raise ValueError("perturbation_scale is (mm, deg) and non-negative")
        if not self.depth_fractions or any(not 0 < f < 1 for f in self.depth_fractions):
            raise ValueError("depth fractions must lie strictly inside (0, 1)")
        if self.samples_target < 0:
            raise ValueError("samples_target must be >= 0")

    def depth_levels(self, pair: GeometryPair) -> np.ndarray:
        return np.array(self.depth_fractions) * pair.hole_depth

    def amplitudes(self, fraction: float) -> tuple[float, np.ndarray]:
        """Spiral radius and angle amplitudes for one engagement fraction."""
        if fraction <= self.band_split:
            return self.spiral_max_radius, np.array(self.shallow_amplitudes)
        return self.spiral_max_radius * self.deep_radius_scale, np.array(self.deep_amplitudes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ContactManifold:
    pair: GeometryPair
    poses: np.ndarray
    config: SamplerConfig | None = None
    levels: np.ndarray | None = None
    _tree: KDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        P = np.ascontiguousarray(self.poses, dtype=float).reshape(-1, 6)
        P.setflags(write=False)
        self.poses = P

    def __len__(self):
        return len(self.poses)

    @property
    def empty(self) -> bool:
        return len(self.poses) == 0

    @property
    def index(self) -> KDTree:
        if self._tree is None:
            self._tree = KDTree(self.poses)
        return self._tree

    def query(self, queries):
        """Indices and squared flat distances of the nearest stored poses."""
        if self.empty:
            raise ValueError("manifold is empty")
        return self.index.query(queries)

    def project(self, queries) -> np.ndarray:
        idx, _ = self.query(queries)
        return np.array(self.poses[idx])

    def spacing(self) -> tuple[float, float]:
        """Median inter-sample spacing as (translation mm, rotation deg).

        Each pose is paired with its nearest other pose under the flat metric;
        the medians of the translation and angle parts of those gaps are
        returned.
        """
        if len(self.poses) < 2:
            raise ValueError("spacing needs at least two poses")
        idx, _ = self.index.query(self.poses, exclude=np.arange(len(self.poses)))
        t, r = split_errors(self.poses[idx], self.poses)
        return float(np.median(t)), float(np.median(r))


def split_errors(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Per-row translation (mm) and rotation (deg) norms of ``a - b`` (shortest arc)."""
    a = np.asarray(a, dtype=float).reshape(-1, 6)
    b = np.asarray(b, dtype=float).reshape(-1, 6)
    dt = a[:, :3] - b[:, :3]
    dr = wrap_degrees(a[:, 3:] - b[:, 3:])
    return np.linalg.norm(dt, axis=1), np.linalg.norm(dr, axis=1)


def nn_query(m: ContactManifold, q) -> Pose6:
    """Exact nearest manifold pose under the flat euclidean metric."""
    idx, _ = m.query(as_array(q).reshape(1, 6))
    return Pose6.from_array(m.poses[idx[0]])


def _level_waypoints(cfg: SamplerConfig, fraction: float, z: float, dz: float,
                     start: int, count: int, rng: np.random.Generator) -> np.ndarray:
    radius, amp = cfg.amplitudes(fraction)
    turns = radius / cfg.spiral_pitch
    k = np.arange(start, start + count, dtype=float)
    # one spiral pass visits about 40 waypoints per turn, then restarts
    per_pass = max(int(round(40 * turns)), 1)
    u = (np.mod(k, per_pass) + 0.5) / per_pass
    theta = 2.0 * math.pi * turns * u
    r = radius * u
    W = np.empty((count, 6))
    W[:, 0] = r * np.cos(theta)
    W[:, 1] = r * np.sin(theta)
    W[:, 2] = z
    for j in range(3):
        W[:, 3 + j] = amp[j] * np.sin(cfg.oscillation_rates[j] * k + 1.7 * j)
    pt, pr = cfg.perturbation_scale
    W[:, 0:2] += rng.uniform(-pt, pt, size=(count, 2))
    W[:, 2] += rng.uniform(-dz, dz, size=count)
    W[:, 3:] += rng.uniform(-pr, pr, size=(count, 3))
    # keep the commanded translation inside the spiral envelope
    rr = np.hypot(W[:, 0], W[:, 1])
    scale = np.where(rr > radius, radius / np.maximum(rr, 1e-300), 1.0)
    W[:, 0] *= scale
    W[:, 1] *= scale
    return W


def sample_manifold(pair: GeometryPair, cfg: SamplerConfig | None = None,
                    model: ContactModel | None = None) -> ContactManifold:
    """Drive the sampling controller against the contact oracle.

    Waypoints that are not Free are resolved by the compliance model to the
    first Contact pose toward the cavity axis; only Contact poses are kept.
    The target is split evenly over the depth levels, each with its own RNG
    stream, and the output is ordered by level, then step.
    """
    cfg = cfg or SamplerConfig()
    model = model or contact_model(pair)
    n_lev = len(cfg.depth_fractions)
    if cfg.samples_target == 0:
        return ContactManifold(pair, np.zeros((0, 6)), cfg, np.zeros(0, dtype=int))
    depths = cfg.depth_levels(pair)
    spacing = np.diff(depths).min() if n_lev > 1 else depths[0]
    dz = 0.5 * spacing
    chunks, levels = [], []
    for lev, (frac, depth) in enumerate(zip(cfg.depth_fractions, depths)):
        quota = cfg.samples_target // n_lev + (1 if lev < cfg.samples_target % n_lev else 0)
        if quota == 0:
            continue
        rng = np.random.default_rng([cfg.rng_seed, lev])
        found, tried = [], 0
        have = 0
        limit = MAX_WAYPOINTS_PER_SAMPLE * quota
        while have < quota:
            if tried >= limit:
                raise RuntimeError(
                    f"depth level {lev} (z = {-depth:.3f} mm) starved: {have} of {quota} contacts "
                    f"after {tried} waypoints")
            n = min(max(2 * (quota - have), 256), limit - tried)
            W = _level_waypoints(cfg, frac, -depth, dz, tried, n, rng)
            tried += n
            P, hit = model.resolve_many(W)
            P = P[hit]
            kinds = model.kinds(P)
            P = P[kinds == 1]
            found.append(P)
            have += len(P)
        block = np.concatenate(found)[:quota]
        chunks.append(block)
        levels.append(np.full(len(block), lev))
    return ContactManifold(pair, np.concatenate(chunks), cfg, np.concatenate(levels))


# ------------------------------------------------------------------- files

def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _geometry_source(pair: GeometryPair) -> str:
    try:
        if builtin_pair(pair.name) == pair:
            return pair.name
    except KeyError:
        pass
    return ""


def save_manifold(m: ContactManifold, path, geometry_source: str | None = None) -> None:
    """CSV (one pose per row, 17 significant digits) plus a key=value sidecar."""
    path = Path(path)
    lines = [CSV_HEADER]
    lines += [",".join(_fmt(v) for v in row) for row in m.poses]
    path.write_text("\n".join(lines) + "\n")
    src = geometry_source if geometry_source is not None else _geometry_source(m.pair)
    meta = {
        "format_version": str(FORMAT_VERSION),
        "geometry": m.pair.name,
        "geometry_source": src,
        "clearance": _fmt(m.pair.clearance),
        "hole_depth_mm": _fmt(m.pair.hole_depth),
        "rows": str(len(m.poses)),
    }
    if m.config is not None:
        meta["seed"] = str(m.config.rng_seed)
        for k, v in m.config.to_dict().items():
            if isinstance(v, tuple):
                meta["config." + k] = " ".join(_fmt(x) for x in v)
            elif isinstance(v, float):
                meta["config." + k] = _fmt(v)
            else:
                meta["config." + k] = str(v)
    write_meta(meta_path(path), meta)


def write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_meta(path) -> dict:
    out = {}
    for i, ln in enumerate(Path(path).read_text().splitlines(), start=1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ValueError(f"{path}: line {i}: expected key=value")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_pose_csv(path, header: str, ncols: int) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != header:
        raise ValueError(f"{path}: line 1: expected header {header!r}")
    rows = []
    for i, ln in enumerate(text[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != ncols:
            raise ValueError(f"{path}: line {i}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"{path}: line {i}: non-numeric value") from None
    return np.array(rows, dtype=float).reshape(-1, ncols)


def _config_from_meta(meta: dict) -> SamplerConfig | None:
    d = {}
    for f in dataclasses.fields(SamplerConfig):
        key = "config." + f.name
        if key not in meta:
            return None
        raw = meta[key]
        if isinstance(f.default, tuple):
            d[f.name] = tuple(float(x) for x in raw.split())
        elif isinstance(f.default, int):
            d[f.name] = int(raw)
        else:
            d[f.name] = float(raw)
    return SamplerConfig(**d)


def load_manifold(path, pair: GeometryPair | None = None) -> ContactManifold:
    """Inverse of :func:`save_manifold`; the index is rebuilt lazily."""
    poses = read_pose_csv(path, CSV_HEADER, 6)
    meta = read_meta(meta_path(path)) if meta_path(path).exists() else {}
    if "rows" in meta and int(meta["rows"]) != len(poses):
        raise ValueError(f"{path}: sidecar says {meta['rows']} rows, file has {len(poses)}")
    if pair is None:
        src = meta.get("geometry_source") or meta.get("geometry")
        if not src:
            raise ValueError(f"{path}: no geometry recorded; pass the geometry explicitly")
        clearance = float(meta["clearance"]) if "clearance" in meta else None
        pair = resolve_geometry(src, clearance if src.startswith("@") else None)
    return ContactManifold(pair, poses, _config_from_meta(meta))
