"""Deterministic synthetic swipe data with controllable user separability.

Every user gets generator parameters (per-step velocity, pressure and
area levels); start points and finger orientation are drawn the same way
for everybody and carry no identity. Positions are integrated from noisy per-step
velocities. On each of the four axes vx, vy, pressure and area the user
means sit on a grid spaced ``separability`` generator standard deviations
apart, with an independent seeded assignment of users to grid slots per
axis, so any two users differ by at least that margin on every axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Action, TouchRecord

SCREEN_W = 1080.0
SCREEN_H = 1920.0
# (center, span) of the user means along each separated axis.
_AXES = {
    "vx": (0.0, 40.0),
    "vy": (0.0, 40.0),
    "pressure": (0.5, 0.6),
    "area": (0.06, 0.08),
}
SAMPLE_MS = (12, 20)
GAP_MS = (400, 3000)
SAMPLE_NOISE = 2.0


@dataclass(frozen=True)
class SynthSpec:
    num_users: int = 10
    strokes_per_user: int = 200
    min_length: int = 3
    max_length: int = 60
    separability: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_users < 2:
            raise ValueError("num_users must be >= 2")
        if self.strokes_per_user < 10:
            raise ValueError("strokes_per_user must be >= 10")
        if not 2 <= self.min_length <= self.max_length:
            raise ValueError("need 2 <= min_length <= max_length")
        if self.separability < 0:
            raise ValueError("separability must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    phone_id: int
    mean: dict[str, float]
    std: dict[str, float]


def axis_std(spec: SynthSpec, axis: str) -> float:
    _, span = _AXES[axis]
    return span / (spec.num_users * max(spec.separability, 1.0))


def user_profiles(spec: SynthSpec) -> list[UserProfile]:
    slots = np.random.default_rng([spec.seed, 0])
    offsets = {
        axis: slots.permutation(spec.num_users) - (spec.num_users - 1) / 2 for axis in _AXES
    }
    profiles = []
    for u in range(spec.num_users):
        mean, std = {}, {}
        for axis, (center, _) in _AXES.items():
            std[axis] = axis_std(spec, axis)
            mean[axis] = center + spec.separability * std[axis] * offsets[axis][u]
        profiles.append(
            UserProfile(
                user_id=u + 1,
                phone_id=1 + u % 4,
                mean=mean,
                std=std,
            )
        )
    return profiles


def _user_runs(spec: SynthSpec, profile: UserProfile, u: int) -> list[list[TouchRecord]]:
    rng = np.random.default_rng([spec.seed, 2, u])
    clock = 1_000_000 + int(rng.integers(0, 100_000))
    runs = []
    for k in range(spec.strokes_per_user):
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        doc_id = 1 + (4 * k) // spec.strokes_per_user
        # Stroke-level parameters scatter around the user mean by one
        # generator std; samples scatter around the stroke level.
        level = {axis: rng.normal(profile.mean[axis], profile.std[axis]) for axis in _AXES}
        steps = {
            axis: rng.normal(level[axis], SAMPLE_NOISE * profile.std[axis], size=length)
            for axis in ("vx", "vy")
        }
        x0 = rng.uniform(0.25, 0.75) * SCREEN_W
        y0 = rng.uniform(0.25, 0.75) * SCREEN_H
        xs = x0 + np.concatenate([[0.0], np.cumsum(steps["vx"][1:])])
        ys = y0 + np.concatenate([[0.0], np.cumsum(steps["vy"][1:])])
        pressure = rng.normal(
            level["pressure"], SAMPLE_NOISE * profile.std["pressure"], size=length
        )
        area = rng.normal(level["area"], SAMPLE_NOISE * profile.std["area"], size=length)
        finger = rng.normal(0.0, 0.3) + rng.normal(0.0, 0.05, size=length)
        dts = rng.integers(SAMPLE_MS[0], SAMPLE_MS[1] + 1, size=length)
        run = []
        for t in range(length):
            if t == 0:
                action = Action.DOWN
            elif t == length - 1:
                action = Action.UP
            else:
                action = Action.MOVE
            run.append(
                TouchRecord(
                    phone_id=profile.phone_id,
                    user_id=profile.user_id,
                    doc_id=doc_id,
                    timestamp=float(clock),
                    action=action,
                    phone_orientation=1,
                    x=round(float(xs[t]), 2),
                    y=round(float(ys[t]), 2),
                    pressure=round(max(float(pressure[t]), 0.0), 4),
                    area=round(max(float(area[t]), 0.0), 5),
                    finger_orientation=round(float(finger[t]), 4),
                )
            )
            clock += int(dts[t])
        clock += int(rng.integers(GAP_MS[0], GAP_MS[1] + 1))
        runs.append(run)
    return runs


def generate_runs(spec: SynthSpec) -> list[list[TouchRecord]]:
    """All generated Down..Up runs, user by user in time order."""
    runs = []
    for u, profile in enumerate(user_profiles(spec)):
        runs.extend(_user_runs(spec, profile, u))
    return runs


def generate(spec: SynthSpec) -> list[TouchRecord]:
    return [rec for run in generate_runs(spec) for rec in run]
