"""End-to-end driver: extract -> GMM codebooks -> Fisher vectors -> SVM -> mAP."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import classify, encoding
from .config import PipelineConfig, resolve_channels, save_config
from .descriptors import CHANNELS, DescriptorSet, extract_descriptors, write_descriptor_dump
from .errors import DataError, MfHodgError, StageError
from .media_io import SequenceManifest, load_sequence, open_sequence, to_gray
from .motion import build_trajectories, estimate_sequence_motion, parse_motion_sidecar

log = logging.getLogger(__name__)


@dataclass
class CorpusItem:
    name: str
    label: str
    split: str
    sequence: SequenceManifest
    descriptors: Optional[DescriptorSet] = None


def motion_fields_for(seq: SequenceManifest, gray, cfg: PipelineConfig):
    """Motion fields from the sequence's sidecar when present, else block matching."""
    if seq.motion_path is not None:
        fields = parse_motion_sidecar(seq.motion_path)
        if len(fields) < seq.frame_count - 1:
            raise DataError(
                f"{seq.motion_path}: {len(fields)} motion fields for {seq.frame_count} frames"
            )
        return fields[:seq.frame_count - 1]
    return estimate_sequence_motion(gray, cfg.block_size, cfg.search_range)


def extract_sequence(seq: SequenceManifest, cfg: PipelineConfig,
                     channels: Sequence[str] = CHANNELS) -> DescriptorSet:
    rgb, depth = load_sequence(seq)
    gray = to_gray(rgb)
    fields = motion_fields_for(seq, gray, cfg)
    trajs = build_trajectories(fields, (seq.width, seq.height), cfg.stride, cfg.tau,
                               cfg.traj_len, cfg.window)
    return extract_descriptors(trajs, cfg.descriptor_config(), gray=gray, depth=depth,
                               fields=fields, channels=channels)


def read_split(split_path) -> list[CorpusItem]:
    """Parse a split manifest ``{"train": [...], "test": [...]}``.

    Entries are either a sequence-manifest path or ``{"manifest": path,
    "label": name}``; a missing label falls back to the sequence's own.
    """
    split_path = Path(split_path)
    try:
        doc = json.loads(split_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{split_path}: cannot read split manifest ({exc})") from None
    items = []
    for part in ("train", "test"):
        if part not in doc:
            raise DataError(f"{split_path}: missing {part!r} list")
        for entry in doc[part]:
            if isinstance(entry, str):
                entry = {"manifest": entry}
            path = split_path.parent / entry["manifest"]
            seq = open_sequence(path)
            label = entry.get("label") or seq.label
            if label is None:
                raise DataError(f"{path}: no label in split entry or sequence manifest")
            items.append(CorpusItem(str(entry["manifest"]), str(label), part, seq))
    if not any(it.split == "train" for it in items):
        raise DataError(f"{split_path}: empty training split")
    return items


def extract_corpus(items: list[CorpusItem], cfg: PipelineConfig,
                   channels: Sequence[str] = CHANNELS) -> list[CorpusItem]:
    for it in items:
        try:
            it.descriptors = extract_sequence(it.sequence, cfg, channels)
        except MfHodgError as exc:
            raise StageError(f"extract {it.name}", exc) from exc
        log.info("%s: %d trajectories", it.name, len(it.descriptors))
    return items


def _encode(item: CorpusItem, channels, books, pcas):
    fvs = []
    for ch in channels:
        X = item.descriptors.channels[ch]
        if ch in pcas:
            X = pcas[ch].apply(X)
        fvs.append(encoding.fisher_encode(books[ch], X, channel=ch))
    return encoding.concat_channels(fvs)


def classify_corpus(items: list[CorpusItem], cfg: PipelineConfig,
                    channels: Optional[Sequence[str]] = None,
                    out_dir=None) -> classify.EvalReport:
    """Train codebooks and the SVM on the train split, then evaluate on the test split."""
    channels = tuple(channels or cfg.channel_list)
    train = [it for it in items if it.split == "train"]
    test = [it for it in items if it.split == "test"]
    out = Path(out_dir) if out_dir is not None else None

    books, pcas = {}, {}
    for ch in channels:
        try:
            X = np.vstack([it.descriptors.channels[ch] for it in train])
            if cfg.pca_dim is not None:
                pcas[ch] = encoding.fit_pca(X, cfg.pca_dim, cfg.gmm_seed, cfg.gmm_subsample, ch)
                X = pcas[ch].apply(X)
            books[ch] = encoding.train_gmm(X, cfg.K, cfg.gmm_seed, cfg.gmm_max_iter,
                                           cfg.variance_floor, subsample=cfg.gmm_subsample,
                                           channel=ch)
        except MfHodgError as exc:
            raise StageError(f"train-gmm {ch}", exc) from exc

    def encode_all(part):
        rows = []
        for it in part:
            try:
                rows.append(_encode(it, channels, books, pcas))
            except MfHodgError as exc:
                raise StageError(f"encode {it.name}", exc) from exc
        return np.array(rows)

    Xtr = encode_all(train)
    ytr = [it.label for it in train]
    try:
        model = classify.train_svm(Xtr, ytr, cfg.C, cfg.svm_seed, cfg.svm_epochs, cfg.svm_tol)
    except MfHodgError as exc:
        raise StageError("train-svm", exc) from exc
    if not test:
        raise StageError("eval", DataError("empty test split"))
    Xte = encode_all(test)
    yte = [it.label for it in test]
    try:
        report = classify.evaluate(model, Xte, yte)
    except MfHodgError as exc:
        raise StageError("eval", exc) from exc

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_config(out / "config.json", cfg)
        for ch in channels:
            encoding.save_codebook(out / f"codebook_{ch}.json", books[ch])
            if ch in pcas:
                encoding.save_pca(out / f"pca_{ch}.json", pcas[ch])
        label_ids = {c: i for i, c in enumerate(model.classes)}
        encoding.write_fv_dump(out / "fv_train.bin", Xtr, [label_ids[y] for y in ytr])
        encoding.write_fv_dump(out / "fv_test.bin", Xte, [label_ids.get(y, 65535) for y in yte])
        classify.save_model(out / "model.json", model)
        classify.save_report(out / "report.json", report)
        (out / "report.txt").write_text(report.table(f"MF({'+'.join(channels)})") + "\n")
    return report


def run_pipeline(cfg: PipelineConfig, split_manifest, out_dir=None) -> classify.EvalReport:
    """Full pipeline over a split manifest; artifacts go to ``out_dir`` when given."""
    channels = resolve_channels(cfg.channels)
    try:
        items = read_split(split_manifest)
    except MfHodgError as exc:
        raise StageError("load", exc) from exc
    extract_corpus(items, cfg, channels)
    if out_dir is not None:
        ddir = Path(out_dir) / "descriptors"
        ddir.mkdir(parents=True, exist_ok=True)
        for it in items:
            write_descriptor_dump(ddir / (it.name.replace("/", "_") + ".bin"), it.descriptors)
    return classify_corpus(items, cfg, channels, out_dir)
