"""Trajectory-aligned local descriptors: HOG, HOF, MBHx, MBHy and HODG.

Every descriptor is computed over a window x window x traj_len volume that
follows the trajectory, split into an nx x ny x nt grid of cells. Each
cell contributes one histogram; histograms are concatenated in (t, y, x,
bin) order and every temporal slice is l2-normalized on its own.

HODG bins the orientations of depth-image gradients, weighted by their
magnitude, exactly like HOG does for the gray image. Gradients use the
central difference kernel [1, 0, -1] along each axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .motion import MotionField, Trajectory, dense_flow

CHANNELS = ("hog", "hof", "mbhx", "mbhy", "hodg")
FLOW_CHANNELS = ("hof", "mbhx", "mbhy")
PIPELINES = {
    "rgb-trio": ("hog", "hof", "mbhx", "mbhy"),
    "hodg": ("hodg",),
    "combined": CHANNELS,
}

_EDGE_SNAP = 1e-9


@dataclass(frozen=True)
class DescriptorConfig:
    window: int = 32
    traj_len: int = 15
    grid: tuple = (2, 2, 3)  # (nx, ny, nt)
    orient_bins: int = 8
    hof_bins: int = 9
    epsilon_zero_flow: float = 0.4

    def __post_init__(self):
        nx, ny, nt = self.grid
        if min(nx, ny, nt) < 1:
            raise ValueError("grid entries must be positive")
        if self.window % nx or self.window % ny or self.traj_len % nt:
            raise ValueError(
                f"window {self.window} / traj_len {self.traj_len} not divisible by grid {self.grid}"
            )
        if not 2 <= self.orient_bins <= 360:
            raise ValueError("orient_bins must be in [2, 360]")
        if not 3 <= self.hof_bins <= 361:
            raise ValueError("hof_bins must be in [3, 361] (orientation bins + zero-motion bin)")
        if self.epsilon_zero_flow < 0:
            raise ValueError("epsilon_zero_flow must be >= 0")
        if self.window % 2:
            raise ValueError("window must be even")

    @property
    def cell(self) -> tuple[int, int, int]:
        nx, ny, nt = self.grid
        return self.window // nx, self.window // ny, self.traj_len // nt

    @property
    def n_cells(self) -> int:
        nx, ny, nt = self.grid
        return nx * ny * nt

    def bins(self, channel: str) -> int:
        return self.hof_bins if channel == "hof" else self.orient_bins

    def length(self, channel: str) -> int:
        return self.n_cells * self.bins(channel)


@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    orientation: np.ndarray  # degrees in [0, 360)

    @property
    def width(self) -> int:
        return self.gx.shape[-1]

    @property
    def height(self) -> int:
        return self.gx.shape[-2]


@dataclass
class TrajectoryDescriptor:
    hog: Optional[np.ndarray]
    hof: Optional[np.ndarray]
    mbhx: Optional[np.ndarray]
    mbhy: Optional[np.ndarray]
    hodg: Optional[np.ndarray]
    start_frame: int
    mean_position: tuple[float, float]

    def channel(self, name: str) -> Optional[np.ndarray]:
        return getattr(self, name)


@dataclass
class DescriptorSet:
    """Descriptors of all trajectories of one sequence, one matrix per channel."""

    channels: dict[str, np.ndarray]
    start_frames: np.ndarray
    mean_positions: np.ndarray
    config: DescriptorConfig = field(default_factory=DescriptorConfig)

    def __len__(self):
        return len(self.start_frames)

    def __getitem__(self, i) -> TrajectoryDescriptor:
        vals = {c: (self.channels[c][i] if c in self.channels else None) for c in CHANNELS}
        return TrajectoryDescriptor(
            start_frame=int(self.start_frames[i]),
            mean_position=(float(self.mean_positions[i, 0]), float(self.mean_positions[i, 1])),
            **vals,
        )


def spatial_gradients(image, invalid_mask=None) -> GradientField:
    """Central-difference gradients of a scalar image (or a stack of images).

    gx(x, y) = v(x+1, y) - v(x-1, y) and gy(x, y) = v(x, y+1) - v(x, y-1).
    The one-pixel border gets zero gradient. When ``invalid_mask`` is given,
    every pixel whose 3x3 neighborhood touches an invalid sample is zeroed.
    """
    v = np.asarray(image, dtype=np.float64)
    if v.ndim < 2 or v.shape[-1] < 3 or v.shape[-2] < 3:
        raise ValueError(f"image too small for gradients: {v.shape}")
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[..., 1:-1, 1:-1] = v[..., 1:-1, 2:] - v[..., 1:-1, :-2]
    gy[..., 1:-1, 1:-1] = v[..., 2:, 1:-1] - v[..., :-2, 1:-1]
    if invalid_mask is not None:
        bad = np.asarray(invalid_mask, dtype=bool)
        touched = bad.copy()
        touched[..., 1:, :] |= bad[..., :-1, :]
        touched[..., :-1, :] |= bad[..., 1:, :]
        spread = touched.copy()
        spread[..., :, 1:] |= touched[..., :, :-1]
        spread[..., :, :-1] |= touched[..., :, 1:]
        gx[spread] = 0.0
        gy[spread] = 0.0
    magnitude = np.hypot(gx, gy)
    orientation = np.degrees(np.arctan2(gy, gx)) % 360.0
    orientation[orientation >= 360.0] -= 360.0
    orientation[magnitude == 0] = 0.0
    return GradientField(gx, gy, magnitude, orientation)


def orientation_bins(orientation, bins: int) -> np.ndarray:
    """Hard bin index floor(orientation / (360 / bins)) mod bins.

    Positions within 1e-9 of a bin edge are snapped onto the edge so that
    round-off from atan2 cannot push an exact 45-degree multiple into the
    neighbouring bin.
    """
    pos = np.asarray(orientation, dtype=np.float64) / (360.0 / bins)
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) < _EDGE_SNAP, near, pos)
    return np.floor(pos).astype(np.int64) % bins


def orientation_histogram(magnitude, orientation, bins: int = 8) -> np.ndarray:
    """Magnitude-weighted hard-assignment orientation histogram."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    magnitude = np.ravel(np.asarray(magnitude, dtype=np.float64))
    idx = np.ravel(orientation_bins(orientation, bins))
    return np.bincount(idx, weights=magnitude, minlength=bins)


def _hof_bins_and_weights(dx, dy, bins, epsilon):
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    mag = np.hypot(dx, dy)
    still = mag < epsilon
    orient = np.degrees(np.arctan2(dy, dx)) % 360.0
    idx = np.where(still, bins - 1, orientation_bins(orient, bins - 1))
    weight = np.where(still, 1.0, mag)
    return idx, weight


def hof_histogram(dx, dy, bins: int = 9, epsilon: float = 0.4) -> np.ndarray:
    """Flow-orientation histogram with a trailing zero-motion bin.

    Flows shorter than ``epsilon`` add weight 1 to the last bin; the rest
    are binned over ``bins - 1`` orientations, weighted by flow magnitude.
    """
    idx, weight = _hof_bins_and_weights(dx, dy, bins, epsilon)
    return np.bincount(np.ravel(idx), weights=np.ravel(weight), minlength=bins)


def normalize_slices(desc: np.ndarray, nt: int) -> np.ndarray:
    """l2-normalize each of the ``nt`` temporal slices of (n, D) descriptors."""
    n = desc.shape[0]
    sl = desc.reshape(n, nt, -1)
    norms = np.sqrt((sl * sl).sum(axis=-1, keepdims=True))
    out = np.divide(sl, norms, out=np.zeros_like(sl), where=norms > 0)
    return out.reshape(n, -1)


def dense_flow_stack(fields: Sequence[MotionField], width: int, height: int) -> np.ndarray:
    return np.stack([dense_flow(f, width, height) for f in fields])


def prepare_planes(channels: Iterable[str], cfg: DescriptorConfig, gray=None, depth=None,
                   flow=None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-pixel (bin index, weight) planes for each requested channel.

    ``gray`` and ``depth`` are (T, H, W) stacks; ``flow`` is a (T-1, H, W, 2)
    dense flow stack. Only the inputs needed by ``channels`` are required.
    """
    planes = {}
    for ch in channels:
        if ch == "hog":
            if gray is None:
                raise ValueError("hog needs gray frames")
            g = spatial_gradients(gray)
        elif ch == "hodg":
            if depth is None:
                raise ValueError("hodg needs depth frames")
            depth = np.asarray(depth)
            g = spatial_gradients(depth, invalid_mask=depth == 0)
        elif ch == "hof":
            if flow is None:
                raise ValueError("hof needs flow")
            idx, weight = _hof_bins_and_weights(flow[..., 0], flow[..., 1], cfg.hof_bins,
                                                cfg.epsilon_zero_flow)
            planes[ch] = (idx.astype(np.int16), weight)
            continue
        elif ch in ("mbhx", "mbhy"):
            if flow is None:
                raise ValueError(f"{ch} needs flow")
            g = spatial_gradients(flow[..., 0 if ch == "mbhx" else 1])
        else:
            raise ValueError(f"unknown channel {ch!r}")
        # small bin indices keep the gathered planes cache friendly
        planes[ch] = (orientation_bins(g.orientation, cfg.orient_bins).astype(np.int16),
                      g.magnitude)
    return planes


def _cell_map(cfg: DescriptorConfig, frames: int) -> np.ndarray:
    nx, ny, _ = cfg.grid
    cx, cy, ct = cfg.cell
    t = np.arange(frames)[:, None, None] // ct
    y = np.arange(cfg.window)[None, :, None] // cy
    x = np.arange(cfg.window)[None, None, :] // cx
    return (t * ny + y) * nx + x


def accumulate(planes: dict, trajectories: Sequence[Trajectory], cfg: DescriptorConfig,
               chunk: int = 128) -> dict[str, np.ndarray]:
    """Histogram every trajectory volume; returns slice-normalized (n, D) matrices.

    Flow channels use the trajectory's own ``traj_len - 1`` transitions, so
    the last frame of the volume carries no flow samples.
    """
    n = len(trajectories)
    nt = cfg.grid[2]
    out = {ch: np.zeros((n, cfg.length(ch))) for ch in planes}
    if n == 0:
        return out
    half = cfg.window // 2
    offs = np.arange(cfg.window) - half
    for lo in range(0, n, chunk):
        batch = trajectories[lo:lo + chunk]
        pts = np.stack([tr.points for tr in batch])  # (J, L, 2)
        starts = np.array([tr.start_frame for tr in batch])
        for ch, (bins_plane, weight_plane) in planes.items():
            frames = cfg.traj_len - 1 if ch in FLOW_CHANNELS else cfg.traj_len
            fidx = starts[:, None] + np.arange(frames)[None, :]
            if fidx.max() >= bins_plane.shape[0]:
                raise DataError(
                    f"{ch}: trajectory needs frame {fidx.max()}, only {bins_plane.shape[0]} available"
                )
            rows = pts[:, :frames, 1, None] + offs  # (J, F, W)
            cols = pts[:, :frames, 0, None] + offs
            sel = (fidx[:, :, None, None], rows[:, :, :, None], cols[:, :, None, :])
            nbins = cfg.bins(ch)
            cell = _cell_map(cfg, frames)
            flat = (np.arange(len(batch))[:, None, None, None] * cfg.n_cells + cell) * nbins
            flat = flat + bins_plane[sel]
            hist = np.bincount(flat.ravel(), weights=weight_plane[sel].ravel(),
                               minlength=len(batch) * cfg.n_cells * nbins)
            out[ch][lo:lo + len(batch)] = hist.reshape(len(batch), -1)
    return {ch: normalize_slices(m, nt) for ch, m in out.items()}


def _check_trajectory(tr: Trajectory, cfg: DescriptorConfig, n_frames: int, width: int,
                      height: int) -> None:
    if not tr.valid:
        raise DataError("invalid trajectory")
    pts = np.asarray(tr.points)
    if pts.shape != (cfg.traj_len, 2):
        raise DataError(f"trajectory has shape {pts.shape}, expected ({cfg.traj_len}, 2)")
    if tr.start_frame < 0 or tr.start_frame + cfg.traj_len > n_frames:
        raise DataError(
            f"trajectory frames {tr.start_frame}..{tr.start_frame + cfg.traj_len - 1} "
            f"out of range for {n_frames} frames"
        )
    half = cfg.window // 2
    if (pts[:, 0].min() - half < 0 or pts[:, 1].min() - half < 0
            or pts[:, 0].max() + half > width or pts[:, 1].max() + half > height):
        raise DataError("trajectory window leaves the frame")


def extract_descriptors(trajectories: Sequence[Trajectory], cfg: DescriptorConfig = None,
                        gray=None, depth=None, fields: Optional[Sequence[MotionField]] = None,
                        channels: Sequence[str] = CHANNELS, flow=None) -> DescriptorSet:
    """Compute the requested channels for every trajectory of one sequence."""
    cfg = cfg or DescriptorConfig()
    ref = gray if gray is not None else depth
    if ref is None:
        raise ValueError("need gray or depth frames")
    n_frames, height, width = np.shape(ref)[:3]
    for tr in trajectories:
        _check_trajectory(tr, cfg, n_frames, width, height)
    if flow is None and any(c in FLOW_CHANNELS for c in channels):
        if fields is None:
            raise ValueError("flow channels need motion fields")
        flow = dense_flow_stack(fields, width, height)
    planes = prepare_planes(channels, cfg, gray=gray, depth=depth, flow=flow)
    mats = accumulate(planes, trajectories, cfg)
    starts = np.array([tr.start_frame for tr in trajectories], dtype=np.int64)
    means = np.array([tr.mean_position for tr in trajectories], dtype=np.float64).reshape(-1, 2)
    return DescriptorSet(mats, starts, means, cfg)


def extract_trajectory_descriptor(traj: Trajectory, gray, depth,
                                  fields: Sequence[MotionField],
                                  cfg: DescriptorConfig = None) -> TrajectoryDescriptor:
    """All five descriptors of a single trajectory."""
    return extract_descriptors([traj], cfg, gray=gray, depth=depth, fields=fields)[0]


# -- binary dump ---------------------------------------------------------------

_DUMP_MAGIC = b"HODG1"


def write_descriptor_dump(path, dset: DescriptorSet) -> None:
    """Little-endian dump; absent channels are written with length 0."""
    lengths = [dset.channels[c].shape[1] if c in dset.channels else 0 for c in CHANNELS]
    n = len(dset)
    rec = np.dtype([("start", "<u4"), ("mx", "<f4"), ("my", "<f4")]
                   + [(c, "<f4", (L,)) for c, L in zip(CHANNELS, lengths) if L])
    arr = np.zeros(n, dtype=rec)
    arr["start"] = dset.start_frames
    arr["mx"] = dset.mean_positions[:, 0]
    arr["my"] = dset.mean_positions[:, 1]
    for c, L in zip(CHANNELS, lengths):
        if L:
            arr[c] = dset.channels[c]
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack("<5I", *lengths))
        fh.write(arr.tobytes())


def read_descriptor_dump(path, cfg: DescriptorConfig = None) -> DescriptorSet:
    blob = Path(path).read_bytes()
    if blob[:5] != _DUMP_MAGIC:
        if blob[:4] == _DUMP_MAGIC[:4]:
            raise DataError(f"{path}: unsupported descriptor dump version {blob[4:5]!r}")
        raise DataError(f"{path}: not a descriptor dump")
    if len(blob) < 29:
        raise DataError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", blob, 5)
    lengths = struct.unpack_from("<5I", blob, 9)
    rec = np.dtype([("start", "<u4"), ("mx", "<f4"), ("my", "<f4")]
                   + [(c, "<f4", (L,)) for c, L in zip(CHANNELS, lengths) if L])
    if len(blob) - 29 != n * rec.itemsize:
        raise DataError(f"{path}: payload size does not match {n} records")
    arr = np.frombuffer(blob, dtype=rec, count=n, offset=29)
    chans = {c: arr[c].astype(np.float64).reshape(n, L)
             for c, L in zip(CHANNELS, lengths) if L}
    means = np.stack([arr["mx"], arr["my"]], axis=1).astype(np.float64)
    return DescriptorSet(chans, arr["start"].astype(np.int64), means, cfg or DescriptorConfig())
