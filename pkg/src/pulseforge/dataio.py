"""Clip storage, manifests and window slicing.

Clip directory layout::

    meta.json   {"fps", "width", "height", "frames", "clip_id", "hr_gt"?}
    frames.bin  uint8 RGB, interleaved, row-major, frame-major
    bvp.bin     float32 little-endian, one sample per frame (present iff labelled)
"""
from __future__ import annotations

import json
import queue
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import CorruptFileError
from .signals import PulseTrace

SPLITS = ("train", "val", "test")


@dataclass
class VideoClip:
    frames: np.ndarray  # [N, H, W, 3] uint8
    fps: float
    clip_id: str = "clip"

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3 or f.shape[0] < 1:
            raise ValueError(f"frames must be [N>=1, H, W, 3], got {f.shape}")
        if f.dtype != np.uint8:
            raise ValueError(f"frames must be uint8, got {f.dtype}")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        self.frames = f

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class LabeledClip:
    clip: VideoClip
    bvp: PulseTrace | None = None
    hr_gt: float | None = None
    saturated: bool = False

    def __post_init__(self):
        if self.bvp is not None and len(self.bvp) != len(self.clip):
            raise ValueError(f"bvp has {len(self.bvp)} samples for {len(self.clip)} frames")

    @property
    def fps(self) -> float:
        return self.clip.fps


def store_clip(directory: str | Path, item: LabeledClip) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    clip = item.clip
    n, h, w, _ = clip.frames.shape
    meta = {"fps": clip.fps, "width": w, "height": h, "frames": n, "clip_id": clip.clip_id}
    if item.hr_gt is not None:
        meta["hr_gt"] = item.hr_gt
    if item.bvp is not None:
        meta["has_bvp"] = True
    (d / "frames.bin").write_bytes(np.ascontiguousarray(clip.frames).tobytes())
    if item.bvp is not None:
        (d / "bvp.bin").write_bytes(item.bvp.samples.astype("<f4").tobytes())
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_clip(directory: str | Path) -> LabeledClip:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
        n, h, w = int(meta["frames"]), int(meta["height"]), int(meta["width"])
        fps = float(meta["fps"])
    except FileNotFoundError as exc:
        raise CorruptFileError(f"{d}: missing meta.json") from exc
    except (KeyError, ValueError) as exc:
        raise CorruptFileError(f"{d}: bad meta.json ({exc})") from exc
    try:
        raw = (d / "frames.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CorruptFileError(f"{d}: missing frames.bin") from exc
    if len(raw) != n * h * w * 3:
        raise CorruptFileError(f"{d}: frames.bin has {len(raw)} bytes, expected {n * h * w * 3}")
    frames = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w, 3).copy()
    bvp = None
    bvp_path = d / "bvp.bin"
    labelled = meta.get("has_bvp", False) or "hr_gt" in meta
    if bvp_path.exists():
        braw = bvp_path.read_bytes()
        if len(braw) != 4 * n:
            raise CorruptFileError(f"{d}: bvp.bin has {len(braw)} bytes, expected {4 * n}")
        bvp = PulseTrace(np.frombuffer(braw, dtype="<f4").astype(np.float32), fps)
    elif labelled:
        raise CorruptFileError(f"{d}: labels declared but bvp.bin is missing")
    return LabeledClip(VideoClip(frames, fps, meta.get("clip_id", d.name)), bvp, meta.get("hr_gt"))


@dataclass
class ManifestEntry:
    path: str
    hr_gt: float | None
    split: str


@dataclass
class ClipManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def add(self, path: str, hr_gt: float | None, split: str) -> None:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        self.entries.append(ManifestEntry(path, hr_gt, split))

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_split(self, name: str) -> list[LabeledClip]:
        return [load_clip(self.resolve(e)) for e in self.split(name)]

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for e in self.entries:
            if e.path in seen and seen[e.path] != e.split:
                raise ValueError(f"{e.path} appears in splits {seen[e.path]} and {e.split}")
            seen[e.path] = e.split
            if not self.resolve(e).is_dir():
                raise FileNotFoundError(self.resolve(e))

    def to_json(self) -> str:
        return json.dumps([vars(e) for e in self.entries], indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> ClipManifest:
        path = Path(path)
        items = json.loads(path.read_text())
        m = cls(root=path.parent)
        for it in items:
            m.add(it["path"], it.get("hr_gt"), it["split"])
        return m


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells overlapping output cell i, weighted by overlap."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(j + 1, hi) - np.maximum(j, lo), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def to_model_frames(frames: np.ndarray, size: int) -> np.ndarray:
    """uint8 [N, H, W, 3] -> float32 [N, 3, size, size] in [0, 1], area-averaged."""
    f = np.asarray(frames, dtype=np.float32) / 255.0
    n, h, w, _ = f.shape
    if (h, w) != (size, size):
        ry = _area_matrix(h, size).astype(np.float32)
        rx = _area_matrix(w, size).astype(np.float32)
        f = np.einsum("yh,nhwc,xw->ncyx", ry, f, rx, optimize=True)
    else:
        f = f.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(f, dtype=np.float32)


def label_preprocess(bvp: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """First difference, then zero-mean unit-variance within the window."""
    b = np.asarray(bvp, dtype=np.float64)
    if len(b) < 2:
        raise ValueError("need at least 2 samples")
    d = np.diff(b)
    d = d - d.mean()
    return d / max(d.std(), eps)


def window_starts(length: int, window: int, stride: int) -> list[int]:
    if length < window:
        return []
    return [k * stride for k in range((length - window) // stride + 1)]


def make_windows(item: LabeledClip, window: int, stride: int, size: int):
    """Slice a clip into ``(frames [N, 3, size, size], labels [N])`` pairs.

    Window ``k`` covers frame indices ``[k * stride, k * stride + window)``.
    Labels are the raw bvp samples of those frames (None when unlabelled).
    """
    starts = window_starts(len(item.clip), window, stride)
    if not starts:
        warnings.warn(f"clip {item.clip.clip_id} has {len(item.clip)} frames, shorter than window {window}")
        return []
    frames = to_model_frames(item.clip.frames, size)
    out = []
    for s in starts:
        labels = None if item.bvp is None else item.bvp.samples[s:s + window]
        out.append((frames[s:s + window], labels))
    return out


def prefetch(items: Iterable, maxsize: int = 2) -> Iterator:
    """Produce ``items`` on a background thread through a bounded queue (order preserved)."""
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    done = object()
    errors: list[BaseException] = []

    def worker():
        try:
            for it in items:
                q.put(it)
        except BaseException as exc:  # re-raised in the consumer
            errors.append(exc)
        finally:
            q.put(done)

    th = threading.Thread(target=worker, daemon=True)
    th.start()
    while True:
        it = q.get()
        if it is done:
            break
        yield it
    th.join()
    if errors:
        raise errors[0]


def import_image_folder(image_dir: str | Path, ground_truth: str | Path, fps: float,
                        out_dir: str | Path, clip_id: str | None = None) -> LabeledClip:
    """Convert a folder of frame images plus a text ground truth into a clip directory.

    The ground-truth file's first line holds one pulse sample per frame
    (whitespace separated), as in UBFC-style datasets.
    """
    from PIL import Image

    from .signals import hr_fft

    paths = sorted(p for p in Path(image_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not paths:
        raise ValueError(f"no images found in {image_dir}")
    frames = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths])
    first = Path(ground_truth).read_text().strip().splitlines()[0]
    bvp = np.array([float(v) for v in first.split()], dtype=np.float64)
    if len(bvp) != len(frames):
        raise CorruptFileError(f"{len(bvp)} pulse samples for {len(frames)} frames")
    trace = PulseTrace(bvp, fps)
    try:
        hr = hr_fft(trace)
    except ValueError:
        hr = None
    item = LabeledClip(VideoClip(frames, fps, clip_id or Path(image_dir).name), trace, hr)
    store_clip(out_dir, item)
    return item
