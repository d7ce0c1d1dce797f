"""Seeded bouncing-balls and Blinking Color Balls generators.

Physics runs in float64 pixel units on an arena [0, size]^2 with position (x, y) =
(column, row). Positions are rounded to 1/256 pixel before rendering, discs are
rasterised by testing pixel centres, and later balls are drawn on top of earlier
ones. Mask value 0 is background and ball i is i + 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, InfeasiblePackingError, ShapeError
from .nn import make_rng
from .palette import BACKGROUND, BALL_COLORS, PALETTE, WHITE

RENDER_GRID = 256
BLINK_VARIANTS = ("earliest", "most_frequent")


@dataclass
class BallWorldConfig:
    image_size: int = 32
    num_balls: int = 3
    radius_range: Tuple[float, float] = (2.5, 4.0)
    mass_range: Tuple[float, float] = (1.0, 3.0)
    speed_range: Tuple[float, float] = (0.5, 1.5)
    steps: int = 20
    substeps: int = 8
    seed: int = 0
    placement_retries: int = 1000

    def validate(self) -> "BallWorldConfig":
        lo_r, hi_r = self.radius_range
        if self.num_balls < 1 or self.steps < 1 or self.substeps < 1 or self.image_size < 1:
            raise ConfigError("num_balls, steps, substeps and image_size must be positive")
        if not 0 < lo_r <= hi_r or 2 * hi_r >= self.image_size:
            raise ConfigError(f"radius range {self.radius_range} does not fit a {self.image_size}px arena")
        if not 0 < self.mass_range[0] <= self.mass_range[1]:
            raise ConfigError(f"mass range {self.mass_range} must be positive and ordered")
        if not 0 <= self.speed_range[0] <= self.speed_range[1]:
            raise ConfigError(f"speed range {self.speed_range} must be non-negative and ordered")
        return self


@dataclass
class Episode:
    frames: np.ndarray
    masks: np.ndarray
    positions: Optional[np.ndarray] = None
    velocities: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    radii: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    log: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def steps(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class BlinkingConfig:
    steps: int = 6
    grid: int = 4
    variant: str = "earliest"
    image_size: int = 32
    num_balls: int = 3
    seed: int = 0

    def validate(self) -> "BlinkingConfig":
        if self.variant not in BLINK_VARIANTS:
            raise ConfigError(f"unknown blinking variant {self.variant!r}; choose from {BLINK_VARIANTS}")
        if self.steps < 2:
            raise ConfigError("blinking episodes need at least one context frame (steps >= 2)")
        if self.grid < 1 or self.image_size % self.grid:
            raise ConfigError(f"image size {self.image_size} is not divisible by patch grid {self.grid}")
        return self

    @property
    def sequence_length(self) -> int:
        return sequence_length(self.steps, self.grid)

    def world(self) -> BallWorldConfig:
        return BallWorldConfig(image_size=self.image_size, num_balls=self.num_balls, steps=self.steps, seed=self.seed)


@dataclass
class BlinkingEpisode:
    context: np.ndarray
    target: np.ndarray
    log: np.ndarray
    final_colors: np.ndarray
    masks: np.ndarray
    episode: Optional[Episode] = None

    @property
    def target_mask(self) -> np.ndarray:
        return self.masks[-1]


def sequence_length(steps: int, grid: int) -> int:
    return (steps - 1) * grid * grid


def place_balls(rng: np.random.Generator, radii: np.ndarray, size: float, retries: int) -> np.ndarray:
    """Rejection-sample non-overlapping centres inside the arena."""
    positions = np.zeros((len(radii), 2))
    for i, radius in enumerate(radii):
        for _ in range(retries):
            candidate = rng.uniform(radius, size - radius, size=2)
            gaps = np.linalg.norm(positions[:i] - candidate, axis=1) - (radii[:i] + radius)
            if np.all(gaps > 0):
                positions[i] = candidate
                break
        else:
            raise InfeasiblePackingError(f"could not place ball {i} of radius {radius:.2f} after {retries} tries")
    return positions


def reflect_walls(pos: np.ndarray, vel: np.ndarray, radii: np.ndarray, size: float) -> None:
    for axis in range(2):
        low = pos[:, axis] < radii
        pos[low, axis] = 2 * radii[low] - pos[low, axis]
        vel[low, axis] = np.abs(vel[low, axis])
        high = pos[:, axis] > size - radii
        pos[high, axis] = 2 * (size - radii[high]) - pos[high, axis]
        vel[high, axis] = -np.abs(vel[high, axis])


def collide_pairs(pos: np.ndarray, vel: np.ndarray, masses: np.ndarray, radii: np.ndarray) -> None:
    """Elastic mass-weighted impulses for approaching overlapping pairs, then positional de-penetration."""
    count = len(masses)
    for i in range(count):
        for j in range(i + 1, count):
            delta = pos[j] - pos[i]
            dist = float(np.hypot(delta[0], delta[1]))
            overlap = radii[i] + radii[j] - dist
            if overlap <= 0 or dist == 0.0:
                continue
            normal = delta / dist
            approach = float(np.dot(vel[i] - vel[j], normal))
            if approach > 0:
                impulse = 2.0 * approach / (1.0 / masses[i] + 1.0 / masses[j])
                vel[i] -= impulse / masses[i] * normal
                vel[j] += impulse / masses[j] * normal
            total = masses[i] + masses[j]
            pos[i] -= overlap * masses[j] / total * normal
            pos[j] += overlap * masses[i] / total * normal


def simulate(
    positions: np.ndarray,
    velocities: np.ndarray,
    masses: np.ndarray,
    radii: np.ndarray,
    steps: int,
    size: float,
    substeps: int = 8,
) -> Tuple[np.ndarray, np.ndarray]:
    """Trajectories [steps, n, 2] of positions and velocities; frame 0 is the initial state."""
    pos = np.array(positions, dtype=np.float64)
    vel = np.array(velocities, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    pos_out = np.zeros((steps,) + pos.shape)
    vel_out = np.zeros((steps,) + vel.shape)
    pos_out[0], vel_out[0] = pos, vel
    dt = 1.0 / substeps
    for t in range(1, steps):
        for _ in range(substeps):
            pos += vel * dt
            reflect_walls(pos, vel, radii, size)
            collide_pairs(pos, vel, masses, radii)
        pos_out[t], vel_out[t] = pos, vel
    return pos_out, vel_out


def kinetic_energy(velocities: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Total kinetic energy per frame for velocities [T, n, 2]."""
    return 0.5 * (masses[None, :] * (velocities ** 2).sum(axis=-1)).sum(axis=-1)


def render(positions: np.ndarray, radii: np.ndarray, colors: np.ndarray, size: int, palette: np.ndarray = PALETTE) -> Tuple[np.ndarray, np.ndarray]:
    """Rasterise one frame: positions [n, 2], colors [n] palette ids -> (rgb u8 [H, W, 3], mask u8 [H, W])."""
    snapped = np.round(np.asarray(positions) * RENDER_GRID) / RENDER_GRID
    centres = np.arange(size) + 0.5
    rows, cols = np.meshgrid(centres, centres, indexing="ij")
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = palette[BACKGROUND]
    mask = np.zeros((size, size), dtype=np.uint8)
    for index, ((x, y), radius, color) in enumerate(zip(snapped, radii, colors)):
        inside = (cols - x) ** 2 + (rows - y) ** 2 <= radius * radius
        image[inside] = palette[int(color)]
        mask[inside] = index + 1
    return image, mask


def render_sequence(positions: np.ndarray, radii: np.ndarray, colors: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray]:
    frames, masks = zip(*(render(p, radii, c, size) for p, c in zip(positions, colors)))
    return np.stack(frames), np.stack(masks)


def _initial_state(cfg: BallWorldConfig, rng: np.random.Generator):
    radii = rng.uniform(*cfg.radius_range, size=cfg.num_balls)
    masses = rng.uniform(*cfg.mass_range, size=cfg.num_balls)
    positions = place_balls(rng, radii, float(cfg.image_size), cfg.placement_retries)
    angles = rng.uniform(0.0, 2 * np.pi, size=cfg.num_balls)
    speeds = rng.uniform(*cfg.speed_range, size=cfg.num_balls)
    velocities = np.stack([speeds * np.cos(angles), speeds * np.sin(angles)], axis=1)
    return positions, velocities, masses, radii


def gen_bouncing(cfg: BallWorldConfig, seed: Optional[int] = None) -> Episode:
    cfg.validate()
    rng = make_rng(cfg.seed if seed is None else seed)
    positions, velocities, masses, radii = _initial_state(cfg, rng)
    pos_traj, vel_traj = simulate(positions, velocities, masses, radii, cfg.steps, float(cfg.image_size), cfg.substeps)
    colors = np.full((cfg.steps, cfg.num_balls), WHITE, dtype=np.int64)
    frames, masks = render_sequence(pos_traj, radii, colors, cfg.image_size)
    return Episode(frames, masks, pos_traj, vel_traj, masses, radii, colors)


def final_colors(log: np.ndarray, num_balls: int, variant: str) -> np.ndarray:
    """Target color per ball from the (ball, color) assignment log; unassigned balls stay white.

    earliest: first color the ball received. most_frequent: color with the highest
    count, ties going to the color whose first assignment came earliest.
    """
    if variant not in BLINK_VARIANTS:
        raise ConfigError(f"unknown blinking variant {variant!r}")
    out = np.full(num_balls, WHITE, dtype=np.int64)
    for ball in range(num_balls):
        history = [int(color) for b, color in np.asarray(log).reshape(-1, 2) if int(b) == ball]
        if not history:
            continue
        if variant == "earliest":
            out[ball] = history[0]
            continue
        counts = {color: history.count(color) for color in history}
        best = max(counts.values())
        out[ball] = next(color for color in history if counts[color] == best)
    return out


def gen_blinking(cfg: BlinkingConfig, seed: Optional[int] = None) -> BlinkingEpisode:
    """Bouncing physics for `steps` frames; one random ball per context frame gets a random non-white color."""
    cfg.validate()
    world = cfg.world().validate()
    rng = make_rng(cfg.seed if seed is None else seed)
    positions, velocities, masses, radii = _initial_state(world, rng)
    pos_traj, vel_traj = simulate(positions, velocities, masses, radii, world.steps, float(world.image_size), world.substeps)

    context_steps = cfg.steps - 1
    balls = rng.integers(0, cfg.num_balls, size=context_steps)
    picks = rng.integers(0, len(BALL_COLORS), size=context_steps)
    log = np.stack([balls, np.asarray(BALL_COLORS)[picks]], axis=1).astype(np.int64)

    colors = np.full((cfg.steps, cfg.num_balls), WHITE, dtype=np.int64)
    colors[np.arange(context_steps), log[:, 0]] = log[:, 1]
    target_colors = final_colors(log, cfg.num_balls, cfg.variant)
    colors[-1] = target_colors

    frames, masks = render_sequence(pos_traj, radii, colors, cfg.image_size)
    episode = Episode(frames, masks, pos_traj, vel_traj, masses, radii, colors, log)
    return BlinkingEpisode(frames[:-1], frames[-1], log, target_colors, masks, episode)


def patchify(frames: np.ndarray, grid: int) -> Tuple[np.ndarray, np.ndarray]:
    """[F, H, W, C] -> (patches [F*P*P, H/P, W/P, C], meta [F*P*P, 3] of (frame, row, col)).

    Patches are row-major within a frame and frames keep their temporal order.
    """
    count, height, width, channels = frames.shape
    if height % grid or width % grid:
        raise ShapeError("patchify", frames.shape, (grid, grid), detail="image side not divisible by the patch grid")
    ph, pw = height // grid, width // grid
    patches = frames.reshape(count, grid, ph, grid, pw, channels).transpose(0, 1, 3, 2, 4, 5)
    patches = patches.reshape(count * grid * grid, ph, pw, channels)
    frame_idx, row, col = np.meshgrid(np.arange(count), np.arange(grid), np.arange(grid), indexing="ij")
    meta = np.stack([frame_idx.ravel(), row.ravel(), col.ravel()], axis=1)
    return patches, meta


def unpatchify(patches: np.ndarray, grid: int) -> np.ndarray:
    total, ph, pw, channels = patches.shape
    if total % (grid * grid):
        raise ShapeError("unpatchify", patches.shape, (grid, grid))
    count = total // (grid * grid)
    frames = patches.reshape(count, grid, grid, ph, pw, channels).transpose(0, 1, 3, 2, 4, 5)
    return frames.reshape(count, grid * ph, grid * pw, channels)


def episode_seeds(base_seed: int, count: int, offset: int = 0) -> List[int]:
    return [int(base_seed) * 1_000_003 + offset + i for i in range(count)]
