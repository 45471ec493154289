"""Clip manifest tooling: 2-second segmentation, face cropping, 4:1 splitting.

Sources are described by JSON metadata; clips are JSON-lines records.  All
writers are byte-deterministic, and unknown manifest fields survive a
read/write round trip verbatim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLIP_FPS = 25.0
CLIP_SECONDS = 2.0
CLIP_FRAMES = int(CLIP_FPS * CLIP_SECONDS)  # 50

_RECORD_FIELDS = ("source_id", "start_frame", "end_frame", "fps", "crop_box",
                  "landmark_path", "beats_path", "frames_path", "split")


@dataclass
class SourceMeta:
    """One source video's metadata, with face boxes at keyframes."""

    source_id: str
    duration_s: float
    fps: float
    width: int
    height: int
    face_bboxes: list[tuple[int, tuple[int, int, int, int]]] = field(default_factory=list)

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"SourceMeta {self.source_id}: duration must be positive")
        for frame, (x, y, w, h) in self.face_bboxes:
            if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise ValueError(
                    f"SourceMeta {self.source_id}: bbox {(x, y, w, h)} at frame {frame} "
                    f"outside {self.width}x{self.height}")

    @classmethod
    def from_json_dict(cls, d: dict) -> "SourceMeta":
        boxes = [(int(f), tuple(int(v) for v in box)) for f, box in d.get("face_bboxes", [])]
        return cls(source_id=d["source_id"], duration_s=float(d["duration_s"]),
                   fps=float(d["fps"]), width=int(d["width"]), height=int(d["height"]),
                   face_bboxes=boxes)

    def to_json_dict(self) -> dict:
        return {"source_id": self.source_id, "duration_s": self.duration_s, "fps": self.fps,
                "width": self.width, "height": self.height,
                "face_bboxes": [[f, list(b)] for f, b in self.face_bboxes]}


@dataclass
class ClipRecord:
    """One 2-second clip at 25 fps, with asset paths relative to a data root."""

    source_id: str
    start_frame: int
    end_frame: int
    fps: float = CLIP_FPS
    crop_box: tuple[int, int, int, int] = (0, 0, 0, 0)
    landmark_path: str = ""
    beats_path: str = ""
    frames_path: str = ""
    split: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.crop_box = tuple(int(v) for v in self.crop_box)
        if self.fps != CLIP_FPS:
            raise ValueError(f"ClipRecord {self.source_id}: fps must be {CLIP_FPS}, got {self.fps}")
        if self.end_frame - self.start_frame != CLIP_FRAMES:
            raise ValueError(
                f"ClipRecord {self.source_id}: clips span {CLIP_FRAMES} frames, got "
                f"[{self.start_frame}, {self.end_frame})")
        if self.split not in ("", "train", "test"):
            raise ValueError(f"ClipRecord {self.source_id}: bad split {self.split!r}")

    @property
    def clip_id(self) -> str:
        return f"{self.source_id}_{self.start_frame:06d}"

    def to_json_dict(self) -> dict:
        d = {
            "source_id": self.source_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "fps": self.fps,
            "crop_box": list(self.crop_box),
            "landmark_path": self.landmark_path,
            "beats_path": self.beats_path,
            "frames_path": self.frames_path,
            "split": self.split,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClipRecord":
        d = dict(d)
        known = {k: d.pop(k) for k in _RECORD_FIELDS if k in d}
        return cls(**known, extra=d)


# -- operations ---------------------------------------------------------------------


def segment_clips(meta: SourceMeta, ratio: float = 0.8) -> list[ClipRecord]:
    """Non-overlapping 50-frame windows; the trailing remainder is dropped.

    Each clip's crop box comes from the latest face keyframe at or before
    its start (the first keyframe if none precede it).
    """
    if meta.fps != CLIP_FPS:
        raise ValueError(
            f"segment_clips: {meta.source_id} has fps {meta.fps}; resample to {CLIP_FPS} upstream")
    total_frames = int(meta.duration_s * CLIP_FPS)
    records = []
    for i in range(total_frames // CLIP_FRAMES):
        start = i * CLIP_FRAMES
        box = bbox_for_frame(meta, start)
        crop = crop_box(box, meta.width, meta.height, ratio=ratio) if box else (0, 0, 0, 0)
        cid = f"{meta.source_id}_{start:06d}"
        records.append(ClipRecord(
            source_id=meta.source_id, start_frame=start, end_frame=start + CLIP_FRAMES,
            crop_box=crop,
            landmark_path=f"{meta.source_id}/{cid}_landmarks.csv",
            beats_path=f"{meta.source_id}/{cid}_beats.txt",
            frames_path=f"{meta.source_id}/{cid}.sgtf",
        ))
    return records


def bbox_for_frame(meta: SourceMeta, frame: int):
    if not meta.face_bboxes:
        return None
    chosen = meta.face_bboxes[0][1]
    for key, box in sorted(meta.face_bboxes):
        if key <= frame:
            chosen = box
        else:
            break
    return chosen


def crop_box(face_bbox: tuple[int, int, int, int], frame_w: int, frame_h: int,
             ratio: float = 0.8) -> tuple[int, int, int, int]:
    """Square crop around the face, face occupying `ratio` of the crop side.

    Centered on the bbox center with side max(bw, bh)/ratio, shifted inside
    the frame; the side shrinks only when it exceeds the frame itself.
    """
    bx, by, bw, bh = face_bbox
    if bw <= 0 or bh <= 0:
        raise ValueError(f"crop_box: degenerate face bbox {face_bbox}")
    if not 0 < ratio <= 1:
        raise ValueError(f"crop_box: ratio must be in (0, 1], got {ratio}")
    side = int(round(max(bw, bh) / ratio))
    side = min(side, frame_w, frame_h)
    cx = bx + bw / 2.0
    cy = by + bh / 2.0
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = min(max(x0, 0), frame_w - side)
    y0 = min(max(y0, 0), frame_h - side)
    return (x0, y0, side, side)


def split_dataset(records: list[ClipRecord], seed: int,
                  train_parts: int = 4, test_parts: int = 1) -> list[ClipRecord]:
    """Assign train/test labels by subject, as close to the ratio as sources allow.

    All clips of one source land in the same split (no identity leakage).
    Sources are shuffled with the seed, accumulated into train up to the
    clip-count target; the boundary source stays in train only if that is
    at least as close to the target.
    """
    if not records:
        raise ValueError("split_dataset: empty record list")
    order: list[str] = []
    by_source: dict[str, list[ClipRecord]] = {}
    for rec in records:
        if rec.source_id not in by_source:
            by_source[rec.source_id] = []
            order.append(rec.source_id)
        by_source[rec.source_id].append(rec)
    rng = np.random.default_rng(seed)
    shuffled = [order[i] for i in rng.permutation(len(order))]
    target = len(records) * train_parts / (train_parts + test_parts)
    train_sources: set[str] = set()
    count = 0
    taken = []
    for sid in shuffled:
        if count >= target:
            break
        train_sources.add(sid)
        taken.append(sid)
        count += len(by_source[sid])
    if taken and abs(count - target) > abs(count - len(by_source[taken[-1]]) - target):
        train_sources.discard(taken[-1])
    out = []
    for rec in records:
        label = "train" if rec.source_id in train_sources else "test"
        out.append(ClipRecord(
            source_id=rec.source_id, start_frame=rec.start_frame, end_frame=rec.end_frame,
            fps=rec.fps, crop_box=rec.crop_box, landmark_path=rec.landmark_path,
            beats_path=rec.beats_path, frames_path=rec.frames_path, split=label,
            extra=dict(rec.extra)))
    return out


# -- manifest I/O -----------------------------------------------------------------------


def write_manifest(path, records: list[ClipRecord]) -> None:
    """JSON-lines, one record per line, canonical field order."""
    lines = [json.dumps(rec.to_json_dict()) for rec in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path) -> list[ClipRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
        try:
            records.append(ClipRecord.from_json_dict(obj))
        except (TypeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad record: {exc}") from None
    return records


def write_sources(path, sources: list[SourceMeta]) -> None:
    lines = [json.dumps(s.to_json_dict()) for s in sources]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_sources(path) -> list[SourceMeta]:
    sources = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
        try:
            sources.append(SourceMeta.from_json_dict(obj))
        except (TypeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad source: {exc}") from None
    return sources
