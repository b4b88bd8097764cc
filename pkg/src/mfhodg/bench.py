"""Frames-per-second measurement of descriptor extraction.

Frames are decoded into memory before timing. By default the motion fields
are also prepared up front, standing in for vectors that a compressed
stream carries for free; pass ``motion_source="estimate"`` to time block
matching as part of the run.
"""

from __future__ import annotations

import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import PipelineConfig
from .descriptors import FLOW_CHANNELS, PIPELINES, accumulate, dense_flow_stack, prepare_planes
from .errors import ConfigError
from .media_io import SequenceManifest, load_sequence, to_gray
from .motion import build_trajectories, estimate_sequence_motion
from .pipeline import motion_fields_for

STAGES = ("io", "motion", "descriptors")


@dataclass
class FpsReport:
    pipeline: str
    frames_processed: int
    wall_seconds: float
    fps: float
    stages: dict
    repeats: int = 1
    warmup: int = 0
    workers: int = 1
    motion_source: str = "precomputed"
    preload_seconds: float = 0.0
    trajectories: int = 0
    run_seconds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def table(self) -> str:
        rows = [f"pipeline        {self.pipeline}",
                f"frames          {self.frames_processed}",
                f"trajectories    {self.trajectories}",
                f"wall (median)   {self.wall_seconds:.4f} s over {self.repeats} runs",
                f"fps             {self.fps:.2f}"]
        rows += [f"  {name:<13} {self.stages[name]:.4f} s" for name in STAGES]
        rows.append(f"preload         {self.preload_seconds:.4f} s (not in fps)")
        return "\n".join(rows)


def fps_from(frames: int, seconds: float) -> float:
    return frames / seconds if seconds > 0 else float("inf")


def _one_run(rgb, depth, fields, channels, cfg: PipelineConfig, motion_source, workers,
             pool, hook):
    dcfg = cfg.descriptor_config()
    t0 = time.perf_counter()
    if hook is not None:
        hook()
    need_gray = "hog" in channels or motion_source == "estimate"
    gray = to_gray(rgb) if need_gray else None
    t1 = time.perf_counter()

    if motion_source == "estimate":
        fields = estimate_sequence_motion(gray, cfg.block_size, cfg.search_range)
    h, w = depth.shape[1:]
    trajs = build_trajectories(fields, (w, h), cfg.stride, cfg.tau, cfg.traj_len, cfg.window)
    t2 = time.perf_counter()

    flow = None
    if any(c in FLOW_CHANNELS for c in channels):
        flow = dense_flow_stack(fields, w, h)
    planes = prepare_planes(channels, dcfg, gray=gray, depth=depth, flow=flow)
    if pool is None or len(trajs) < 2:
        result = accumulate(planes, trajs, dcfg)
    else:
        step = -(-len(trajs) // workers)
        parts = [trajs[i:i + step] for i in range(0, len(trajs), step)]
        list(pool.map(lambda p: accumulate(planes, p, dcfg), parts))
        result = None
    del result  # null sink: outputs are discarded, never serialized
    t3 = time.perf_counter()
    return t3 - t0, {"io": t1 - t0, "motion": t2 - t1, "descriptors": t3 - t2}, len(trajs)


def measure_fps(sequence: SequenceManifest, pipeline: str = "hodg", repeats: int = 3,
                warmup: int = 1, workers: int = 1, config: Optional[PipelineConfig] = None,
                motion_source: str = "precomputed", frames=None,
                on_run: Optional[Callable[[int], None]] = None) -> FpsReport:
    """Median-of-``repeats`` extraction throughput over the whole sequence.

    ``frames`` may pass an already loaded ``(rgb, depth)`` pair to skip disk
    reads. ``on_run(i)`` is called at the start of every timed run (inside
    the timed region), which lets tests inject delays.
    """
    if pipeline not in PIPELINES:
        raise ConfigError(f"invalid pipeline {pipeline!r}; expected one of {sorted(PIPELINES)}")
    if repeats < 1 or warmup < 0 or workers < 1:
        raise ConfigError("repeats and workers must be >= 1, warmup >= 0")
    if motion_source not in ("precomputed", "estimate"):
        raise ConfigError(f"invalid motion source {motion_source!r}")
    cfg = config or PipelineConfig()
    channels = PIPELINES[pipeline]

    t0 = time.perf_counter()
    rgb, depth = frames if frames is not None else load_sequence(sequence)
    fields = None
    if motion_source == "precomputed":
        fields = motion_fields_for(sequence, to_gray(rgb), cfg)
    preload = time.perf_counter() - t0

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for _ in range(warmup):
            _one_run(rgb, depth, fields, channels, cfg, motion_source, workers, pool, None)
        runs = []
        for i in range(repeats):
            hook = (lambda i=i: on_run(i)) if on_run is not None else None
            runs.append(_one_run(rgb, depth, fields, channels, cfg, motion_source, workers,
                                 pool, hook))
    finally:
        if pool is not None:
            pool.shutdown()

    walls = [r[0] for r in runs]
    # lower median so the reported run is a real one and its stages add up
    median = statistics.median_low(walls)
    pick = walls.index(median)
    n_frames = len(depth)
    return FpsReport(
        pipeline=pipeline,
        frames_processed=n_frames,
        wall_seconds=median,
        fps=fps_from(n_frames, median),
        stages=runs[pick][1],
        repeats=repeats,
        warmup=warmup,
        workers=workers,
        motion_source=motion_source,
        preload_seconds=preload,
        trajectories=runs[pick][2],
        run_seconds=walls,
    )
