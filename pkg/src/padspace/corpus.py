"""Corpus ingestion: CSV manifests, RIFF/WAVE reading and writing, resampling."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .exceptions import DataError

CANONICAL_RATE = 16000
SPLITS = ("train", "test")
MANIFEST_HEADER = ["path", "label", "split"]

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float64).reshape(-1)
        if x.size == 0:
            raise DataError("zero-length audio")
        if not np.all(np.isfinite(x)):
            raise DataError("audio contains non-finite samples")
        if np.max(np.abs(x)) > 1.0:
            raise DataError("audio samples outside [-1, 1]")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: str
    label: str | None
    split: str
    root: Path | None = field(default=None, compare=False, repr=False)

    @property
    def path(self) -> Path:
        """Clip location, resolved against the manifest's directory."""
        p = Path(self.clip_path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


class LabelRegistry:
    """Lexicographically ordered emotion labels with ids ``0..C-1``."""

    def __init__(self, labels=()):
        self.labels = tuple(sorted(set(labels)))
        self._ids = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self._ids

    def __eq__(self, other):
        return isinstance(other, LabelRegistry) and self.labels == other.labels

    def __repr__(self):
        return f"LabelRegistry({list(self.labels)!r})"

    def id_of(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise DataError(f"unknown label {label!r}; known: {', '.join(self.labels)}") from None

    def label_of(self, idx: int) -> str:
        return self.labels[idx]

    def encode(self, labels) -> np.ndarray:
        return np.array([self.id_of(lab) for lab in labels], dtype=np.int64)


def load_manifest(path) -> tuple[list[ManifestEntry], LabelRegistry]:
    """Read a ``path,label,split`` CSV manifest.

    Empty labels are kept as ``None`` so unlabeled clips can still be used
    for prediction. Relative clip paths resolve against the manifest's
    directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise DataError(f"manifest header must be {','.join(MANIFEST_HEADER)!r} in {path}")
    root = path.parent
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"expected 3 columns, got {len(row)} at line {lineno}")
        clip, label, split = row
        if not clip:
            raise DataError(f"empty path at line {lineno}")
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r} at line {lineno}")
        entries.append(ManifestEntry(clip, label or None, split, root))
    registry = LabelRegistry(e.label for e in entries if e.label is not None)
    return entries, registry


def format_manifest(entries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in entries:
        writer.writerow([e.clip_path, e.label or "", e.split])
    return buf.getvalue()


def write_manifest(path, entries):
    Path(path).write_text(format_manifest(entries), encoding="utf-8")


def _parse_fmt(chunk: bytes):
    if len(chunk) < 16:
        raise DataError("truncated fmt chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 26:
            raise DataError("truncated extensible fmt chunk")
        (tag,) = struct.unpack("<H", chunk[24:26])
    return tag, channels, rate, block_align, bits


def read_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file, downmixing to mono by channel mean."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DataError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            if len(body) < size:
                raise DataError(f"{path}: truncated file")
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise DataError(f"{path}: missing fmt chunk")
    if payload is None:
        raise DataError(f"{path}: truncated file (no data chunk)")

    tag, channels, rate, block_align, bits = fmt
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise DataError(f"{path}: unsupported codec (format tag {tag:#x}, {bits} bits)")
    if channels < 1 or block_align != channels * dtype.itemsize:
        raise DataError(f"{path}: inconsistent fmt chunk")
    if len(payload) % block_align:
        raise DataError(f"{path}: truncated file")
    if not payload:
        raise DataError("zero-length audio")

    frames = np.frombuffer(payload, dtype=dtype).astype(np.float64) * scale
    frames = frames.reshape(-1, channels).mean(axis=1)
    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        if not np.all(np.isfinite(frames)):
            raise DataError(f"{path}: non-finite float samples")
        frames = np.clip(frames, -1.0, 1.0)
    return AudioClip(frames, rate)


def write_wav(path, clip: AudioClip, fmt: str = "pcm16"):
    """Write a mono WAV file. ``fmt`` is ``"pcm16"`` or ``"float32"``."""
    if fmt == "pcm16":
        q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif fmt == "float32":
        q = clip.samples.astype("<f4")
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    payload = q.tobytes()
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Rational-ratio resampling with a Kaiser-windowed sinc filter."""
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate!r}")
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    y = resample_poly(clip.samples, up, down)
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate)


def to_canonical(clip: AudioClip) -> AudioClip:
    return resample(clip, CANONICAL_RATE)
