"""Objective evaluation: per-emotion pitch/energy/flux statistics, a synthetic
corpus with planted acoustic-emotion correlations, and dominance-separability
reports over fitted layouts."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CANONICAL_RATE, AudioClip, ManifestEntry, read_wav, resample, write_manifest, write_wav
from .exceptions import DataError
from .features import FrameConfig, pitch_yin, rms_energy, spectral_flux, stft_magnitude
from .reduction import AnchorTable, EmbeddingLayout

METRICS = ("pitch", "energy", "flux")
STATS_HEADER = ["group", "metric", "count", "mean", "std", "min", "median", "max"]
REPORT_SCHEMA_VERSION = 1

DOMINANCE_PAIRS = (("Angry", "Anxious"), ("Alert", "Surprise"), ("Relaxed", "Protected"))


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings for one emotion label."""

    label: str
    base_f0: float
    f0_jitter: float = 3.0
    amplitude: float = 0.5
    am_rate: float = 3.0
    switch_rate: float = 4.0
    tilt: float = 1.0
    duration: float = 1.0
    n_clips: int = 20

    def __post_init__(self):
        if not 80.0 <= self.base_f0 <= 400.0:
            raise ValueError(f"{self.label}: base_f0 must lie in [80, 400] Hz")
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"{self.label}: amplitude must lie in (0, 1]")
        if self.duration <= 0 or self.n_clips < 0:
            raise ValueError(f"{self.label}: duration must be > 0 and n_clips >= 0")


# Higher-arousal labels get higher pitch, more energy and faster timbre changes.
_DEFAULT_SYNTH = {
    "Excited": (280, 0.80, 6.0, 9.0, 0.6),
    "Surprise": (265, 0.70, 5.0, 8.0, 0.8),
    "Happy": (250, 0.65, 4.5, 7.0, 0.7),
    "Alert": (235, 0.60, 4.0, 6.0, 1.0),
    "Anxious": (215, 0.45, 7.0, 5.0, 1.4),
    "Relaxed": (190, 0.35, 1.5, 2.0, 1.6),
    "Neutral": (170, 0.40, 2.0, 3.0, 1.2),
    "Angry": (155, 0.55, 3.0, 4.0, 0.9),
    "Protected": (140, 0.30, 2.5, 2.5, 1.8),
    "Sad": (120, 0.25, 1.0, 1.5, 2.0),
}


def default_synth_specs(labels=None, n_clips: int = 20, duration: float = 1.0) -> list[SynthSpec]:
    labels = list(_DEFAULT_SYNTH) if labels is None else list(labels)
    out = []
    for lab in labels:
        if lab not in _DEFAULT_SYNTH:
            raise DataError(f"no default synth settings for {lab!r}")
        f0, amp, am, sw, tilt = _DEFAULT_SYNTH[lab]
        out.append(SynthSpec(lab, f0, 3.0, amp, am, sw, tilt, duration, n_clips))
    return out


def synthesize_clip(spec: SynthSpec, rng: np.random.Generator, sample_rate: int = CANONICAL_RATE) -> AudioClip:
    """One harmonic-stack clip: jittered f0, amplitude envelope, timbre switches."""
    n = int(round(spec.duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = spec.base_f0 + rng.normal(0.0, spec.f0_jitter)
    vib = spec.f0_jitter * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 + vib) / sample_rate

    n_harm = int(min(12, 7000.0 // (spec.base_f0 + 4 * spec.f0_jitter)))
    harm = np.arange(1, n_harm + 1)
    seg_len = max(1, int(round(sample_rate / spec.switch_rate)))
    n_seg = -(-n // seg_len)
    tilts = spec.tilt + rng.uniform(-0.5, 0.5, n_seg)
    weights = harm[None, :] ** -tilts[:, None]
    weights /= weights.sum(axis=1, keepdims=True)
    # crossfade segment weights over 5 ms to avoid clicks
    seg_idx = np.minimum(np.arange(n) // seg_len, n_seg - 1)
    pos = np.arange(n) % seg_len
    fade = max(1, int(0.005 * sample_rate))
    mix = np.clip(pos / fade, 0.0, 1.0)
    prev = np.maximum(seg_idx - 1, 0)
    w = weights[seg_idx] * mix[:, None] + weights[prev] * (1.0 - mix[:, None])
    tone = np.einsum("nh,nh->n", w, np.sin(phase[:, None] * harm[None, :]))

    env = 1.0 - 0.4 * (0.5 - 0.5 * np.cos(2 * np.pi * spec.am_rate * t + rng.uniform(0, 2 * np.pi)))
    ramp = min(n // 2, int(0.02 * sample_rate))
    edge = np.ones(n)
    edge[:ramp] = np.linspace(0.0, 1.0, ramp)
    edge[n - ramp:] = np.linspace(1.0, 0.0, ramp)
    x = spec.amplitude * env * edge * tone + rng.normal(0.0, 1e-3, n)
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate)


def generate_corpus(specs, out_dir, seed: int = 0, sample_rate: int = CANONICAL_RATE,
                    test_fraction: float = 0.2, manifest_name: str = "manifest.csv") -> Path:
    """Write WAVs plus a ``path,label,split`` manifest; returns the manifest path.

    Each label gets its own seeded stream, so adding a label does not change
    the clips of the others.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write corpus to {out}: {exc.strerror}") from None
    entries = []
    for spec in specs:
        if spec.n_clips == 0:
            continue
        key = [seed, *spec.label.encode("utf-8")]
        rng = np.random.default_rng(key)
        n_test = int(round(test_fraction * spec.n_clips))
        test_ids = set(rng.permutation(spec.n_clips)[:n_test].tolist())
        for i in range(spec.n_clips):
            name = f"{spec.label.lower()}_{i:03d}.wav"
            write_wav(out / name, synthesize_clip(spec, rng, sample_rate))
            entries.append(ManifestEntry(name, spec.label, "test" if i in test_ids else "train", out))
    manifest = out / manifest_name
    write_manifest(manifest, entries)
    return manifest


@dataclass(frozen=True)
class ClipMeasures:
    pitch: float  # mean voiced f0, NaN when no frame is voiced
    energy: float
    flux: float


def clip_measures(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> ClipMeasures:
    clip = resample(clip, CANONICAL_RATE)
    f0 = pitch_yin(clip, cfg).voiced_f0
    return ClipMeasures(
        float(f0.mean()) if f0.size else float("nan"),
        float(rms_energy(clip, cfg).mean()),
        float(spectral_flux(stft_magnitude(clip, cfg)).mean()),
    )


@dataclass
class EmotionStats:
    """Rows of (group, metric) summaries; ``None`` marks an absent statistic."""

    rows: list = field(default_factory=list)

    def get(self, group, metric) -> dict:
        for r in self.rows:
            if r["group"] == group and r["metric"] == metric:
                return r
        raise KeyError((group, metric))

    @property
    def groups(self):
        return list(dict.fromkeys(r["group"] for r in self.rows))


def _summary(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return {"count": 0, "mean": None, "std": None, "min": None, "median": None, "max": None}
    return {"count": int(v.size), "mean": float(v.mean()), "std": float(v.std()),
            "min": float(v[0]), "median": float(np.median(v)), "max": float(v[-1])}


def emotion_stats(measures, groups, only=None) -> EmotionStats:
    """Per-group statistics over per-clip means.

    ``measures`` and ``groups`` are parallel sequences. Values are sorted
    before reduction so the result does not depend on clip order. Pitch
    statistics use only clips with at least one voiced frame.
    """
    measures = list(measures)
    groups = list(groups)
    if not measures:
        raise DataError("no clips in corpus")
    if len(measures) != len(groups):
        raise DataError("need one group key per clip")
    wanted = sorted(set(groups)) if only is None else list(only)
    rows = []
    for g in wanted:
        members = [m for m, k in zip(measures, groups) if k == g]
        if not members:
            raise DataError(f"no clips in group {g!r}")
        for metric in METRICS:
            vals = [getattr(m, metric) for m in members]
            vals = [v for v in vals if np.isfinite(v)]
            rows.append({"group": g, "metric": metric, **_summary(vals)})
    return EmotionStats(rows)


def pad_octant(pad) -> str:
    """Sign bucket such as ``P+A-D+``; zero counts as positive."""
    return "".join(f"{ax}{'+' if v >= 0 else '-'}" for ax, v in zip("PAD", pad))


def corpus_stats(entries, grouping: str = "label", predictor=None, cfg: FrameConfig = FrameConfig(),
                 only=None) -> EmotionStats:
    """Load manifest clips and summarize them by label or by predicted PAD octant."""
    entries = list(entries)
    if not entries:
        raise DataError("no clips in corpus")
    clips = [read_wav(e.path) for e in entries]
    measures = [clip_measures(c, cfg) for c in clips]
    if grouping == "label":
        keys = [e.label or "(unlabeled)" for e in entries]
    elif grouping == "octant":
        if predictor is None:
            raise DataError("octant grouping needs a predictor bundle")
        pads = predictor.predict(predictor.embed_clips(clips))
        keys = [pad_octant(p) for p in pads]
    else:
        raise DataError(f"unknown grouping {grouping!r}; use 'label' or 'octant'")
    return emotion_stats(measures, keys, only)


def anchor_layout(anchors: AnchorTable | None = None) -> EmbeddingLayout:
    anchors = anchors if anchors is not None else AnchorTable()
    labels = anchors.labels
    return EmbeddingLayout(np.array([anchors[l] for l in labels]), labels)


def separability_report(layout) -> dict:
    """Centroid deltas for the dominance-contrast pairs, plus the Excited point.

    ``layout`` is an :class:`EmbeddingLayout` or a ``{label: (P, A, D)}``
    mapping of centroids.
    """
    cent = layout.centroids() if isinstance(layout, EmbeddingLayout) else dict(layout)
    pairs = []
    for first, second in DOMINANCE_PAIRS:
        for lab in (first, second):
            if lab not in cent:
                raise DataError(f"label {lab!r} missing from layout")
        delta = np.asarray(cent[first], dtype=float) - np.asarray(cent[second], dtype=float)
        mag = np.abs(delta)
        pairs.append({
            "first": first, "second": second,
            "delta": dict(zip("PAD", (float(v) for v in delta))),
            "dominance_positive": bool(delta[2] > 0),
            "dominance_largest": bool(mag[2] > 0 and mag[2] >= mag[0] and mag[2] >= mag[1]),
        })
    report = {"pairs": pairs, "excited": None}
    if "Excited" in cent:
        p, a, _ = (float(v) for v in cent["Excited"])
        report["excited"] = {"P": p, "A": a, "pa_magnitude": float(np.hypot(p, a))}
    return report


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6g}"


def _round6(v):
    if v is None or isinstance(v, (bool, int, str)):
        return v
    return float(f"{v:.6g}")


def _report_items(report: dict):
    for p in report["pairs"]:
        name = f"{p['first']}-{p['second']}"
        for ax in "PAD":
            yield name, f"d{ax}", p["delta"][ax]
        yield name, "dominance_positive", p["dominance_positive"]
        yield name, "dominance_largest", p["dominance_largest"]
    if report.get("excited"):
        for key in ("P", "A", "pa_magnitude"):
            yield "Excited", key, report["excited"][key]


def export_report(obj, path, fmt: str = "csv"):
    """Write EmotionStats or a separability report as CSV or JSON."""
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise DataError(f"unknown report format {fmt!r}")
    if isinstance(obj, EmotionStats):
        kind = "emotion_stats"
        if fmt == "csv":
            buf = io.StringIO()
            buf.write("# emotion_stats schema_version=1: per-clip means summarized per group; "
                      "pitch in Hz over voiced frames, energy as frame RMS, flux on "
                      "L1-normalized spectra; empty cells are absent statistics\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(STATS_HEADER)
            for r in obj.rows:
                w.writerow([r["group"], r["metric"]] + [_fmt(r[k]) for k in STATS_HEADER[2:]])
            text = buf.getvalue()
        else:
            rows = [{k: _round6(v) for k, v in r.items()} for r in obj.rows]
            text = json.dumps({"schema_version": REPORT_SCHEMA_VERSION, "kind": kind, "rows": rows},
                              indent=2) + "\n"
    else:
        kind = "separability"
        if fmt == "csv":
            buf = io.StringIO()
            buf.write("# separability schema_version=1: centroid deltas first-minus-second; "
                      "flags are 1/0\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["item", "quantity", "value"])
            for item, q, v in _report_items(obj):
                w.writerow([item, q, _fmt(v)])
            text = buf.getvalue()
        else:
            items = [{"item": i, "quantity": q, "value": _round6(v)} for i, q, v in _report_items(obj)]
            text = json.dumps({"schema_version": REPORT_SCHEMA_VERSION, "kind": kind,
                               "report": obj, "items": items}, indent=2) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write report {path}: {exc.strerror}") from None


def read_report(path):
    """Parse an exported report back: list of row dicts (CSV) or the JSON document."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return json.loads(text)
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
