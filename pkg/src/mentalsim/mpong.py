"""Mental-Pong: ball trajectories with wall bounces, an occluder and a passive paddle.

Units are degrees of visual angle, seconds and radians. The ball moves at constant
speed; wall contacts are resolved at their exact time inside a frame step so the
speed never drifts. A trajectory ends on the first frame whose ball center has
reached ``paddle_x``.

Random conditions are drawn from numpy's PCG64 generator (``np.random.default_rng``)
seeded with the caller's 64-bit seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class GenerationError(RuntimeError):
    pass


class InsufficientContext(ValueError):
    pass


@dataclass(frozen=True)
class BoardSpec:
    width: float = 20.0
    height: float = 10.0
    # occluder rectangle (x0, y0, x1, y1); defaults to the right 35% of the width
    occluder: tuple = (13.0, 0.0, 19.5, 10.0)
    paddle_x: float = 19.5
    ball_radius: float = 0.35
    ball_speed: float = 9.5
    frame_rate: float = 60.0
    # sampling box for random starts
    start_x: tuple = (3.0, 5.0)
    start_y: tuple = (1.0, 9.0)
    max_angle: float = math.radians(60.0)
    occluder_always: bool = True
    frame_cap: int = 10_000

    def __post_init__(self):
        x0, y0, x1, y1 = self.occluder
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ValueError(f"occluder {self.occluder} must lie inside the board")
        if self.ball_speed <= 0:
            raise ValueError("ball_speed must be positive")
        if x1 - x0 <= 2 * self.ball_radius:
            raise ValueError("occluder must be wider than the ball")
        if not x0 < self.paddle_x <= x1:
            raise ValueError("paddle_x must sit inside the occluder's x-extent")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "BoardSpec":
        doc = dict(doc)
        for key in ("occluder", "start_x", "start_y"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class BallTrajectory:
    position: np.ndarray  # [frames x 2]
    velocity: np.ndarray  # [frames x 2]

    def __len__(self):
        return self.position.shape[0]

    @property
    def state(self) -> np.ndarray:
        return np.hstack([self.position, self.velocity])


@dataclass(frozen=True)
class Condition:
    id: int
    start_pos: tuple
    start_angle: float
    n_frames: int
    visible_end: int

    @property
    def occluded_frames(self) -> range:
        return range(self.visible_end + 1, self.n_frames)

    @property
    def n_visible(self) -> int:
        return self.visible_end + 1

    def occluded_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_frames, dtype=bool)
        mask[self.visible_end + 1:] = True
        return mask


@dataclass(frozen=True)
class ConditionSet:
    spec: BoardSpec
    conditions: tuple
    seed: int

    def __len__(self):
        return len(self.conditions)

    def __iter__(self):
        return iter(self.conditions)

    def __getitem__(self, i):
        return self.conditions[i]

    def trajectory(self, i: int) -> BallTrajectory:
        c = self.conditions[i]
        return simulate_trajectory(self.spec, c.start_pos, c.start_angle)

    def trajectories(self) -> list:
        return [self.trajectory(i) for i in range(len(self))]

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "conditions": [
                {
                    "id": c.id,
                    "start_pos": list(c.start_pos),
                    "start_angle": c.start_angle,
                    "n_frames": c.n_frames,
                    "visible_end": c.visible_end,
                    "occluded_start": c.visible_end + 1,
                }
                for c in self.conditions
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ConditionSet":
        doc = json.loads(text)
        conds = tuple(
            Condition(c["id"], tuple(c["start_pos"]), c["start_angle"], c["n_frames"], c["visible_end"])
            for c in doc["conditions"]
        )
        return cls(BoardSpec.from_dict(doc["spec"]), conds, doc["seed"])

    @classmethod
    def load(cls, path) -> "ConditionSet":
        path = Path(path)
        if path.is_dir():
            path = path / "conditions.json"
        return cls.from_json(path.read_text())


def _advance(spec: BoardSpec, pos, vel, dt):
    """Move for ``dt`` seconds, reflecting off top, bottom and left walls."""
    x, y = pos
    vx, vy = vel
    r = spec.ball_radius
    lo_y, hi_y, lo_x = r, spec.height - r, r
    remaining = dt
    while remaining > 0:
        hits = []
        if vy > 0:
            hits.append(((hi_y - y) / vy, "y"))
        elif vy < 0:
            hits.append(((lo_y - y) / vy, "y"))
        if vx < 0:
            hits.append(((lo_x - x) / vx, "x"))
        t_hit, axis = min(hits, default=(math.inf, ""))
        if t_hit >= remaining:
            x += vx * remaining
            y += vy * remaining
            break
        t_hit = max(t_hit, 0.0)
        x += vx * t_hit
        y += vy * t_hit
        remaining -= t_hit
        if axis == "y":
            y = hi_y if vy > 0 else lo_y
            vy = -vy
        else:
            x = lo_x
            vx = -vx
    return (x, y), (vx, vy)


def simulate_trajectory(spec: BoardSpec, start_pos, start_angle: float) -> BallTrajectory:
    x, y = map(float, start_pos)
    r = spec.ball_radius
    if not (r <= x <= spec.width - r and r <= y <= spec.height - r):
        raise ValueError(f"start {start_pos} outside the board")
    ox0, oy0, ox1, oy1 = spec.occluder
    if ox0 <= x <= ox1 and oy0 <= y <= oy1:
        raise ValueError(f"start {start_pos} inside the occluder")
    vel = (spec.ball_speed * math.cos(start_angle), spec.ball_speed * math.sin(start_angle))
    pos = (x, y)
    positions, velocities = [pos], [vel]
    while pos[0] < spec.paddle_x:
        if len(positions) >= spec.frame_cap:
            raise GenerationError(
                f"trajectory from {start_pos} at {start_angle:.4f} rad did not reach the paddle "
                f"within {spec.frame_cap} frames"
            )
        pos, vel = _advance(spec, pos, vel, spec.dt)
        positions.append(pos)
        velocities.append(vel)
    return BallTrajectory(np.array(positions), np.array(velocities))


def _condition_from(spec, cid, start, angle) -> Condition:
    traj = simulate_trajectory(spec, start, angle)
    inside = np.nonzero(traj.position[:, 0] >= spec.occluder[0])[0]
    first_hidden = int(inside[0])
    if first_hidden == 0:
        raise GenerationError(f"condition {cid}: ball starts hidden")
    return Condition(cid, tuple(map(float, start)), float(angle), len(traj), first_hidden - 1)


def make_condition(spec: BoardSpec, start_pos, start_angle, cid: int = 0) -> Condition:
    return _condition_from(spec, cid, start_pos, start_angle)


def generate_conditions(spec: BoardSpec, n: int, seed: int) -> ConditionSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    conds = []
    seen = set()
    while len(conds) < n:
        x = rng.uniform(*spec.start_x)
        y = rng.uniform(*spec.start_y)
        angle = rng.uniform(-spec.max_angle, spec.max_angle)
        if (x, y, angle) in seen:
            continue
        seen.add((x, y, angle))
        conds.append(_condition_from(spec, len(conds), (x, y), angle))
    return ConditionSet(spec, tuple(conds), int(seed))


def render_frames(spec: BoardSpec, trajectory: BallTrajectory, resolution=(64, 128),
                  visible_end: int | None = None) -> np.ndarray:
    """Grayscale frames ``[frames x H x W]`` in [0, 1].

    Background 0, ball 1, occluder 0.5 painted over the ball. With
    ``spec.occluder_always`` false the occluder only appears after ``visible_end``.
    """
    h_px, w_px = resolution
    if h_px < 32 or w_px < 32:
        raise ValueError("resolution must be at least 32x32")
    sx = w_px / spec.width
    sy = h_px / spec.height
    # pixel centers in board degrees; row 0 is the top of the board
    xs = (np.arange(w_px) + 0.5) / sx
    ys = spec.height - (np.arange(h_px) + 0.5) / sy
    ox0, oy0, ox1, oy1 = spec.occluder
    occ = ((xs >= ox0) & (xs <= ox1))[None, :] & ((ys >= oy0) & (ys <= oy1))[:, None]
    n = len(trajectory)
    frames = np.zeros((n, h_px, w_px), dtype=np.float32)
    r2 = spec.ball_radius ** 2
    for i, (bx, by) in enumerate(trajectory.position):
        disk = ((xs[None, :] - bx) ** 2 + (ys[:, None] - by) ** 2) <= r2
        frames[i][disk] = 1.0
        if spec.occluder_always or visible_end is None or i > visible_end:
            frames[i][occ] = 0.5
    return frames


def context_indices(condition: Condition | int, T: int) -> list:
    """``T`` frame indices spread uniformly over the visible epoch (both ends included)."""
    V = condition if isinstance(condition, int) else condition.n_visible
    if T < 2:
        raise ValueError("T must be >= 2")
    if V < T:
        raise InsufficientContext(f"visible epoch has {V} frames, need at least T={T}")
    # round half up, not banker's rounding
    return [int(math.floor(k * (V - 1) / (T - 1) + 0.5)) for k in range(T)]


ORACLE_KINDS = ("position", "velocity", "position+velocity")


def oracle_latents(trajectory: BallTrajectory, kind: str = "position+velocity") -> np.ndarray:
    if kind == "position":
        return trajectory.position.copy()
    if kind == "velocity":
        return trajectory.velocity.copy()
    if kind == "position+velocity":
        return trajectory.state
    raise ValueError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")
