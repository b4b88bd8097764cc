"""Block motion fields, sparse interest points and chained trajectories.

Motion vectors play the role of the vectors an MPEG encoder stores for
each macroblock: either they are estimated here by exhaustive block
matching or they are read from a sidecar text file produced elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

DEFAULT_BLOCK_SIZE = 16
DEFAULT_SEARCH_RANGE = 7
DEFAULT_TAU = 1.0
DEFAULT_STRIDE = 5


class SidecarError(DataError):
    pass


@dataclass
class MotionField:
    """Displacements mapping blocks of frame t onto frame t+1.

    ``vectors`` has shape (blocks_y, blocks_x, 2) with (dx, dy) per block.
    """

    blocks_x: int
    blocks_y: int
    block_size: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.int64)
        if self.vectors.shape != (self.blocks_y, self.blocks_x, 2):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match "
                f"{self.blocks_y}x{self.blocks_x} blocks"
            )

    @classmethod
    def zeros(cls, blocks_x, blocks_y, block_size=DEFAULT_BLOCK_SIZE):
        return cls(blocks_x, blocks_y, block_size, np.zeros((blocks_y, blocks_x, 2), np.int64))


@dataclass
class Trajectory:
    start_frame: int
    points: np.ndarray  # (traj_len, 2) integer (x, y)
    valid: bool = True

    @property
    def mean_position(self) -> tuple[float, float]:
        m = self.points.mean(axis=0)
        return float(m[0]), float(m[1])


def _candidate_offsets(search_range: int) -> list[tuple[int, int]]:
    # row-major scan (dy outer, dx inner), then stable sort by L1 length
    scan = [(dx, dy) for dy in range(-search_range, search_range + 1)
            for dx in range(-search_range, search_range + 1)]
    return sorted(scan, key=lambda v: abs(v[0]) + abs(v[1]))


def estimate_motion(prev, cur, block_size: int = DEFAULT_BLOCK_SIZE,
                    search_range: int = DEFAULT_SEARCH_RANGE) -> MotionField:
    """Exhaustive SAD block matching of ``prev`` against ``cur``.

    For every full block of ``prev`` the displacement in
    [-search_range, search_range]^2 with the smallest sum of absolute
    differences wins. Ties go to the shorter vector (L1), then to the
    earlier candidate in row-major scan order. Candidates whose displaced
    block falls outside ``cur`` are not considered, and trailing partial
    blocks are skipped.
    """
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    if prev.shape != cur.shape or prev.ndim != 2:
        raise DataError(f"frame size mismatch: {prev.shape} vs {cur.shape}")
    if search_range < 1:
        raise ValueError("search_range must be >= 1")
    h, w = prev.shape
    nby, nbx = h // block_size, w // block_size
    if nby == 0 or nbx == 0:
        raise DataError(f"frame {w}x{h} smaller than one {block_size}px block")

    hc, wc = nby * block_size, nbx * block_size
    ref = prev[:hc, :wc].astype(np.int32)
    r = search_range
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=np.int32)
    padded[r:r + h, r:r + w] = cur
    top = np.arange(nby) * block_size
    left = np.arange(nbx) * block_size

    candidates = _candidate_offsets(r)
    sads = np.empty((len(candidates), nby, nbx), dtype=np.int64)
    big = np.iinfo(np.int64).max
    for i, (dx, dy) in enumerate(candidates):
        shifted = padded[r + dy:r + dy + hc, r + dx:r + dx + wc]
        sad = np.abs(ref - shifted).reshape(nby, block_size, nbx, block_size).sum(axis=(1, 3))
        ok_y = (top + dy >= 0) & (top + dy + block_size <= h)
        ok_x = (left + dx >= 0) & (left + dx + block_size <= w)
        sads[i] = np.where(ok_y[:, None] & ok_x[None, :], sad, big)

    best = np.argmin(sads, axis=0)
    offsets = np.array(candidates, dtype=np.int64)
    return MotionField(nbx, nby, block_size, offsets[best])


def estimate_sequence_motion(gray_frames, block_size=DEFAULT_BLOCK_SIZE,
                             search_range=DEFAULT_SEARCH_RANGE) -> list[MotionField]:
    return [estimate_motion(gray_frames[t], gray_frames[t + 1], block_size, search_range)
            for t in range(len(gray_frames) - 1)]


def parse_motion_sidecar(path) -> list[MotionField]:
    """Read a motion sidecar file.

    Each frame starts with ``MF t blocks_x blocks_y block_size`` followed by
    ``blocks_y`` rows of ``blocks_x`` space-separated ``dx,dy`` pairs. Blank
    lines are ignored.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise SidecarError(f"{path}: cannot read ({exc.strerror})") from None

    fields = []
    i = 0
    n = len(lines)

    def next_line():
        nonlocal i
        while i < n and not lines[i].strip():
            i += 1
        if i >= n:
            return None, None
        i += 1
        return i, lines[i - 1].split()

    while True:
        lineno, tokens = next_line()
        if tokens is None:
            break
        if len(tokens) != 5 or tokens[0] != "MF":
            raise SidecarError(f"{path}:{lineno}: malformed header {' '.join(tokens)!r}")
        try:
            t, bx, by, bs = (int(v) for v in tokens[1:])
        except ValueError:
            raise SidecarError(f"{path}:{lineno}: non-integer header field") from None
        if bx <= 0 or by <= 0 or bs <= 0:
            raise SidecarError(f"{path}:{lineno}: header sizes must be positive")
        if t != len(fields):
            raise SidecarError(
                f"{path}:{lineno}: frame index {t} out of sequence (expected {len(fields)})"
            )
        vectors = np.zeros((by, bx, 2), dtype=np.int64)
        for row in range(by):
            lineno, tokens = next_line()
            if tokens is None:
                raise SidecarError(f"{path}: unexpected end of file in frame {t}, row {row}")
            if tokens[0] == "MF":
                raise SidecarError(f"{path}:{lineno}: frame {t} has {row} rows, expected {by}")
            if len(tokens) != bx:
                raise SidecarError(
                    f"{path}:{lineno}: expected {bx} vectors, found {len(tokens)}"
                )
            for col, tok in enumerate(tokens):
                parts = tok.split(",")
                try:
                    if len(parts) != 2:
                        raise ValueError
                    vectors[row, col] = (int(parts[0]), int(parts[1]))
                except ValueError:
                    raise SidecarError(
                        f"{path}:{lineno}: invalid vector {tok!r} in column {col + 1}"
                    ) from None
        fields.append(MotionField(bx, by, bs, vectors))
    return fields


def write_motion_sidecar(path, fields: Sequence[MotionField]) -> None:
    out = []
    for t, f in enumerate(fields):
        out.append(f"MF {t} {f.blocks_x} {f.blocks_y} {f.block_size}")
        for row in f.vectors:
            out.append(" ".join(f"{dx},{dy}" for dx, dy in row))
    Path(path).write_text("\n".join(out) + "\n")


def select_interest_points(field: MotionField, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Centers of blocks whose motion magnitude is at least ``tau``.

    Returns an (n, 2) integer array of (x, y) in row-major block order. The
    center of block (row, col) is (col * bs + bs // 2, row * bs + bs // 2).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    mag = np.sqrt((field.vectors.astype(np.float64) ** 2).sum(axis=-1))
    rows, cols = np.nonzero(mag >= tau)
    half = field.block_size // 2
    return np.stack([cols * field.block_size + half, rows * field.block_size + half],
                    axis=1).astype(np.int64)


def _window_inside(pts, width, height, half):
    return ((pts[:, 0] - half >= 0) & (pts[:, 1] - half >= 0)
            & (pts[:, 0] + half <= width) & (pts[:, 1] + half <= height))


def _lookup(field: MotionField, pts: np.ndarray):
    """Vectors of the blocks containing ``pts`` and a mask of points inside the grid."""
    bs = field.block_size
    bx = pts[:, 0] // bs
    by = pts[:, 1] // bs
    inside = (bx >= 0) & (by >= 0) & (bx < field.blocks_x) & (by < field.blocks_y)
    vec = np.zeros_like(pts)
    vec[inside] = field.vectors[by[inside], bx[inside]]
    return vec, inside


def build_trajectories(fields: Sequence[MotionField], frame_dims, stride: int = DEFAULT_STRIDE,
                       tau: float = DEFAULT_TAU, traj_len: int = 15,
                       window: int = 32) -> list[Trajectory]:
    """Chain block vectors from interest points into fixed-length trajectories.

    A trajectory starts at every interest point of frames 0, stride,
    2*stride, ... that still have ``traj_len - 1`` transitions ahead. Each
    step adds the vector of the block containing the current point.
    Trajectories whose ``window`` x ``window`` support leaves the frame at
    any step are dropped. Output is ordered by start frame, then by
    row-major position of the starting block.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    width, height = frame_dims
    half = window // 2
    steps = traj_len - 1
    out = []
    for start in range(0, len(fields) - steps + 1, stride):
        pts = select_interest_points(fields[start], tau)
        if len(pts) == 0:
            continue
        track = np.empty((len(pts), traj_len, 2), dtype=np.int64)
        track[:, 0] = pts
        alive = _window_inside(pts, width, height, half)
        for t in range(steps):
            vec, inside = _lookup(fields[start + t], track[:, t])
            # vectors are integral, so rounding after each step is the identity
            track[:, t + 1] = track[:, t] + vec
            alive &= inside & _window_inside(track[:, t + 1], width, height, half)
        for k in np.nonzero(alive)[0]:
            out.append(Trajectory(start, track[k].copy(), True))
    return out


def validate_trajectory(traj: Trajectory, fields: Sequence[MotionField], frame_dims,
                        window: int = 32) -> list[str]:
    """Re-check the chaining and in-bounds invariants; returns a list of violations."""
    width, height = frame_dims
    half = window // 2
    problems = []
    pts = np.asarray(traj.points)
    for t in range(len(pts)):
        x, y = int(pts[t, 0]), int(pts[t, 1])
        if x - half < 0 or y - half < 0 or x + half > width or y + half > height:
            problems.append(f"frame {traj.start_frame + t}: window at ({x},{y}) out of bounds")
        if t + 1 < len(pts):
            idx = traj.start_frame + t
            if idx >= len(fields):
                problems.append(f"frame {idx}: no motion field")
                continue
            f = fields[idx]
            bx, by = x // f.block_size, y // f.block_size
            if not (0 <= bx < f.blocks_x and 0 <= by < f.blocks_y):
                problems.append(f"frame {idx}: point ({x},{y}) outside block grid")
                continue
            dx, dy = f.vectors[by, bx]
            if (int(pts[t + 1, 0]), int(pts[t + 1, 1])) != (x + dx, y + dy):
                problems.append(f"frame {idx}: chain broken at ({x},{y})")
    return problems


def dense_flow(field: MotionField, width: int, height: int) -> np.ndarray:
    """Per-pixel (dx, dy) by replicating each block vector over its block.

    Pixels in trailing partial blocks take the nearest block's vector.
    Returns an (height, width, 2) float64 array.
    """
    bs = field.block_size
    by = np.minimum(np.arange(height) // bs, field.blocks_y - 1)
    bx = np.minimum(np.arange(width) // bs, field.blocks_x - 1)
    return field.vectors[by[:, None], bx[None, :]].astype(np.float64)
