"""Reading and writing synchronized RGB + depth frame sequences.

RGB frames are binary PPM (P6, maxval 255); depth frames are binary PGM
(P5, maxval 65535, big-endian samples) holding millimeters, with 0 marking
a missing measurement. Sample values are never rescaled on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError

TRAJ_LEN = 15
MIN_SIDE = 48

_WHITESPACE = b" \t\n\r\v\f"


class MediaError(DataError):
    """Malformed or unreadable frame file."""

    def __init__(self, path, message, offset=None):
        self.path = str(path)
        self.offset = offset
        where = f"{self.path}" if offset is None else f"{self.path} @ byte {offset}"
        super().__init__(f"{where}: {message}")


class ManifestError(DataError):
    pass


@dataclass(frozen=True)
class RgbFrame:
    width: int
    height: int
    data: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.data.shape != (self.height, self.width, 3) or self.data.dtype != np.uint8:
            raise ValueError(
                f"RgbFrame data must be uint8 of shape {(self.height, self.width, 3)}, "
                f"got {self.data.dtype} {self.data.shape}"
            )


@dataclass(frozen=True)
class DepthFrame:
    width: int
    height: int
    data: np.ndarray  # (height, width) uint16, millimeters

    def __post_init__(self):
        if self.data.shape != (self.height, self.width) or self.data.dtype != np.uint16:
            raise ValueError(
                f"DepthFrame data must be uint16 of shape {(self.height, self.width)}, "
                f"got {self.data.dtype} {self.data.shape}"
            )


@dataclass
class SequenceManifest:
    frame_count: int
    rgb_paths: list[Path]
    depth_paths: list[Path]
    label: Optional[str] = None
    fps_nominal: Optional[float] = None
    width: int = 0
    height: int = 0
    motion_path: Optional[Path] = None
    source: Optional[Path] = field(default=None, compare=False)


def _parse_header(path, blob: bytes, magic: bytes):
    """Return (width, height, maxval, payload_offset) of a binary netpbm file."""
    if blob[:2] != magic:
        raise MediaError(path, f"expected magic {magic.decode()}, found {blob[:2]!r}", 0)
    pos = 2
    values = []
    while len(values) < 3:
        # whitespace and comments may precede each header token
        while pos < len(blob):
            if blob[pos] in _WHITESPACE:
                pos += 1
            elif blob[pos:pos + 1] == b"#":
                end = blob.find(b"\n", pos)
                pos = len(blob) if end < 0 else end + 1
            else:
                break
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MediaError(path, "malformed header: expected an unsigned integer", start)
        values.append(int(blob[start:pos]))
    if pos >= len(blob) or blob[pos] not in _WHITESPACE:
        raise MediaError(path, "malformed header: missing whitespace after maxval", pos)
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise MediaError(path, f"malformed header: non-positive size {width}x{height}", 2)
    return width, height, maxval, pos + 1


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise MediaError(path, "file not found") from None
    except OSError as exc:
        raise MediaError(path, f"cannot read: {exc.strerror}") from None


def load_rgb_frame(path) -> RgbFrame:
    blob = _read_bytes(path)
    width, height, maxval, offset = _parse_header(path, blob, b"P6")
    if maxval != 255:
        raise MediaError(path, f"maxval must be 255, got {maxval}", offset - 1)
    need = width * height * 3
    if len(blob) - offset < need:
        raise MediaError(
            path, f"truncated payload: need {need} bytes, have {len(blob) - offset}", len(blob)
        )
    data = np.frombuffer(blob, dtype=np.uint8, count=need, offset=offset)
    return RgbFrame(width, height, data.reshape(height, width, 3).copy())


def load_depth_frame(path) -> DepthFrame:
    blob = _read_bytes(path)
    width, height, maxval, offset = _parse_header(path, blob, b"P5")
    if maxval != 65535:
        raise MediaError(path, f"maxval must be 65535, got {maxval}", offset - 1)
    need = width * height * 2
    if len(blob) - offset < need:
        raise MediaError(
            path, f"truncated payload: need {need} bytes, have {len(blob) - offset}", len(blob)
        )
    data = np.frombuffer(blob, dtype=">u2", count=width * height, offset=offset)
    return DepthFrame(width, height, data.astype(np.uint16).reshape(height, width))


def write_rgb_frame(path, frame: RgbFrame) -> None:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(frame.data, dtype=np.uint8).tobytes())


def write_depth_frame(path, frame: DepthFrame) -> None:
    header = f"P5\n{frame.width} {frame.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + frame.data.astype(">u2").tobytes())


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion, round(0.299 R + 0.587 G + 0.114 B), rounding half up.

    Accepts one frame (H, W, 3) or a stack (..., H, W, 3); returns float64.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.floor(luma + 0.5)


def open_sequence(manifest_path) -> SequenceManifest:
    """Parse and validate a sequence manifest.

    Frame paths are resolved relative to the manifest's directory. Every
    referenced file must exist, and the first RGB/depth pair is decoded to
    check that both channels share one resolution.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"{manifest_path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{manifest_path}: manifest must be a JSON object")
    for key in ("frame_count", "rgb", "depth"):
        if key not in doc:
            raise ManifestError(f"{manifest_path}: missing field {key!r}")

    base = manifest_path.parent
    rgb = [base / p for p in doc["rgb"]]
    depth = [base / p for p in doc["depth"]]
    count = doc["frame_count"]
    if not isinstance(count, int) or len(rgb) != count or len(depth) != count:
        raise ManifestError(
            f"{manifest_path}: list-length mismatch (frame_count={count}, "
            f"rgb={len(rgb)}, depth={len(depth)})"
        )
    if count < TRAJ_LEN:
        raise ManifestError(
            f"{manifest_path}: sequence shorter than trajectory length ({count} < {TRAJ_LEN})"
        )
    for p in rgb + depth:
        if not p.is_file():
            raise ManifestError(f"{manifest_path}: referenced file missing: {p}")

    motion = base / doc["motion"] if doc.get("motion") else None
    if motion is not None and not motion.is_file():
        raise ManifestError(f"{manifest_path}: motion sidecar missing: {motion}")

    first_rgb = load_rgb_frame(rgb[0])
    first_depth = load_depth_frame(depth[0])
    if (first_rgb.width, first_rgb.height) != (first_depth.width, first_depth.height):
        raise ManifestError(
            f"{manifest_path}: dimension mismatch between RGB "
            f"{first_rgb.width}x{first_rgb.height} and depth "
            f"{first_depth.width}x{first_depth.height}"
        )
    if first_rgb.width < MIN_SIDE or first_rgb.height < MIN_SIDE:
        raise ManifestError(
            f"{manifest_path}: frames {first_rgb.width}x{first_rgb.height} are smaller "
            f"than the {MIN_SIDE}x{MIN_SIDE} minimum"
        )
    return SequenceManifest(
        frame_count=count,
        rgb_paths=rgb,
        depth_paths=depth,
        label=doc.get("label"),
        fps_nominal=doc.get("fps"),
        width=first_rgb.width,
        height=first_rgb.height,
        motion_path=motion,
        source=manifest_path,
    )


def write_manifest(path, rgb_paths, depth_paths, label=None, fps=None, motion=None) -> None:
    """Write a manifest whose frame paths are stored relative to its directory."""
    path = Path(path)
    base = path.parent
    doc = {
        "frame_count": len(rgb_paths),
        "rgb": [os.path.relpath(p, base) for p in rgb_paths],
        "depth": [os.path.relpath(p, base) for p in depth_paths],
    }
    if label is not None:
        doc["label"] = label
    if fps is not None:
        doc["fps"] = fps
    if motion is not None:
        doc["motion"] = os.path.relpath(motion, base)
    path.write_text(json.dumps(doc, indent=1) + "\n")


def iter_frames(seq: SequenceManifest) -> Iterator[tuple[RgbFrame, DepthFrame]]:
    for i, (rp, dp) in enumerate(zip(seq.rgb_paths, seq.depth_paths)):
        rgb = load_rgb_frame(rp)
        depth = load_depth_frame(dp)
        if (rgb.width, rgb.height) != (seq.width, seq.height) or (
            depth.width, depth.height
        ) != (seq.width, seq.height):
            raise ManifestError(f"frame {i}: dimensions differ from the first frame pair")
        yield rgb, depth


def load_sequence(seq: SequenceManifest) -> tuple[np.ndarray, np.ndarray]:
    """Load the whole sequence into (T, H, W, 3) uint8 and (T, H, W) uint16 stacks."""
    rgbs, depths = [], []
    for rgb, depth in iter_frames(seq):
        rgbs.append(rgb.data)
        depths.append(depth.data)
    return np.stack(rgbs), np.stack(depths)
