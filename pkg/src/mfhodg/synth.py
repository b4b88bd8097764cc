"""Seeded synthetic RGBD action sequences.

Three classes of a textured disk in front of a static textured wall:

translate
    the disk slides left/right at constant depth (bouncing off the margins).
approach
    identical RGB motion, but the disk comes closer and bulges in depth, so
    only the depth channel tells it apart from ``translate``.
rotate
    the disk stays put while its texture spins; its depth is a tilted plane
    whose slope direction spins with it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .media_io import (TRAJ_LEN, DepthFrame, RgbFrame, SequenceManifest, open_sequence,
                       write_depth_frame, write_manifest, write_rgb_frame)

CLASSES = ("translate", "rotate", "approach")
WALL_DEPTH = 2000  # mm


@dataclass(frozen=True)
class SynthSpec:
    cls: str = "translate"
    frames: int = 30
    size: int = 128
    texture_seed: Optional[int] = None
    magnitude: float = 3.0
    noise: float = 2.0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown synthetic class {self.cls!r}; expected one of {CLASSES}")
        if self.frames < TRAJ_LEN:
            raise ValueError(f"frames must be >= {TRAJ_LEN}")
        if self.size < 64:
            raise ValueError("size must be >= 64")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")


def _texture_params(rng, n_waves=4):
    # periods between ~6 and ~20 px, random directions, per-channel phases
    period = rng.uniform(6.0, 20.0, n_waves)
    angle = rng.uniform(0.0, np.pi, n_waves)
    fx = np.cos(angle) / period
    fy = np.sin(angle) / period
    phase = rng.uniform(0.0, 2 * np.pi, (3, n_waves))
    return fx, fy, phase


def _texture(params, u, v):
    fx, fy, phase = params
    arg = 2 * np.pi * (u[..., None] * fx + v[..., None] * fy)  # (..., n_waves)
    chans = [128.0 + 30.0 * np.sin(arg + phase[c]).sum(axis=-1) for c in range(3)]
    return np.stack(chans, axis=-1)


def _bounce(start, velocity, lo, hi, t):
    """Position at integer time t of a point moving between lo and hi, reflecting at the ends."""
    span = hi - lo
    p = (start - lo + velocity * t) % (2 * span)
    return lo + (p if p <= span else 2 * span - p)


def render_sequence(spec: SynthSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Render (frames, S, S, 3) uint8 RGB and (frames, S, S) uint16 depth stacks."""
    rng = np.random.default_rng(seed)
    tex_rng = rng if spec.texture_seed is None else np.random.default_rng(spec.texture_seed)
    s = spec.size
    radius = s // 4
    margin = radius + 4
    # draw every parameter regardless of class so translate/approach RGB share a distribution
    wall_tex = _texture_params(tex_rng)
    disk_tex = _texture_params(tex_rng)
    cx0 = rng.uniform(margin, s - margin)
    cy0 = rng.uniform(margin, s - margin)
    direction = rng.choice([-1.0, 1.0])
    depth0 = rng.uniform(1100.0, 1400.0)
    theta0 = rng.uniform(0.0, 2 * np.pi)
    noise_rng = np.random.default_rng(rng.integers(2**63))

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    wall = _texture(wall_tex, xx, yy)
    omega = direction * spec.magnitude / (0.75 * radius)  # rim speed about `magnitude` px/frame
    slope = 3.0  # mm/px of the rotating tilted plane

    rgbs = np.empty((spec.frames, s, s, 3), dtype=np.uint8)
    depths = np.empty((spec.frames, s, s), dtype=np.uint16)
    for t in range(spec.frames):
        if spec.cls == "rotate":
            cx, cy = round(cx0), round(cy0)
            ang = omega * t
        else:
            cx = round(_bounce(cx0, direction * spec.magnitude, margin, s - margin, t))
            cy = round(cy0)
            ang = 0.0
        du, dv = xx - cx, yy - cy
        inside = du * du + dv * dv <= radius * radius
        # texture coordinates rotate with the disk
        c, sn = np.cos(ang), np.sin(ang)
        u = c * du + sn * dv
        v = -sn * du + c * dv
        rgb = np.where(inside[..., None], _texture(disk_tex, u, v), wall)
        if spec.noise > 0:
            rgb = rgb + noise_rng.normal(0.0, spec.noise, rgb.shape)
        rgbs[t] = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)

        if spec.cls == "translate":
            disk = np.full_like(xx, depth0)
        elif spec.cls == "approach":
            r2 = (du * du + dv * dv) / (radius * radius)
            bulge = 40.0 + 12.0 * t
            disk = depth0 - 20.0 * t - bulge * (1.0 - r2)
        else:
            theta = theta0 + ang
            disk = depth0 + slope * (np.cos(theta) * du + np.sin(theta) * dv)
        depth = np.where(inside, disk, float(WALL_DEPTH))
        depths[t] = np.clip(np.floor(depth + 0.5), 1, 65535).astype(np.uint16)
    return rgbs, depths


def synth_sequence(spec: SynthSpec, seed: int, out_dir) -> SequenceManifest:
    """Write a synthetic sequence as PPM/PGM frames plus ``manifest.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(str(out))
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from None
    rgbs, depths = render_sequence(spec, seed)
    rgb_paths, depth_paths = [], []
    h, w = depths.shape[1:]
    for t in range(spec.frames):
        rp = out / f"rgb_{t:04d}.ppm"
        dp = out / f"depth_{t:04d}.pgm"
        write_rgb_frame(rp, RgbFrame(w, h, rgbs[t]))
        write_depth_frame(dp, DepthFrame(w, h, depths[t]))
        rgb_paths.append(rp)
        depth_paths.append(dp)
    write_manifest(out / "manifest.json", rgb_paths, depth_paths, label=spec.cls, fps=30)
    return open_sequence(out / "manifest.json")


def sequence_seed(seed: int, class_index: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, class_index, index]).generate_state(1)[0])


def synth_corpus(out_dir, n_train: int = 10, n_test: int = 5, seed: int = 0,
                 classes=CLASSES, frames: int = 30, size: int = 128,
                 magnitude: float = 3.0) -> Path:
    """Generate a labelled corpus and its ``split.json``; returns the split path."""
    out = Path(out_dir)
    split = {"train": [], "test": []}
    for ci, cls in enumerate(classes):
        for i in range(n_train + n_test):
            part = "train" if i < n_train else "test"
            name = f"{cls}_{i:03d}"
            spec = SynthSpec(cls=cls, frames=frames, size=size, magnitude=magnitude)
            synth_sequence(spec, sequence_seed(seed, ci, i), out / name)
            split[part].append({"manifest": f"{name}/manifest.json", "label": cls})
    path = out / "split.json"
    path.write_text(json.dumps(split, indent=1) + "\n")
    return path
