"""Tri-modal sample containers, the TMDS binary dataset format, batching,
a planted-signal synthetic generator, and a JSON-manifest import adapter.

TMDS layout (all integers little-endian u32, strings UTF-8)::

    b"TMDS" | version | n_samples | d_t | d_a | d_v
    per sample:
        id_len | id bytes
        T_t | T_t*d_t f32 | T_a | T_a*d_a f32 | T_v | T_v*d_v f32
        label f64
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"TMDS"
VERSION = 1
LABEL_RANGE = (-3.0, 3.0)


class DatasetFormatError(ValueError):
    pass


@dataclass
class Sample:
    text: np.ndarray
    audio: np.ndarray
    visual: np.ndarray
    label: float
    id: str = ""

    def features(self) -> dict[str, np.ndarray]:
        return {"t": self.text, "a": self.audio, "v": self.visual}


def validate_sample(s: Sample, widths: tuple[int, int, int] | None = None) -> None:
    for name, x in (("text", s.text), ("audio", s.audio), ("visual", s.visual)):
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"sample {s.id!r}: {name} must be a non-empty (T, d) matrix, got {x.shape}")
    if widths is not None:
        got = (s.text.shape[1], s.audio.shape[1], s.visual.shape[1])
        if got != tuple(widths):
            raise ValueError(f"sample {s.id!r}: widths {got} != dataset widths {tuple(widths)}")
    if not LABEL_RANGE[0] <= s.label <= LABEL_RANGE[1]:
        raise ValueError(f"sample {s.id!r}: label {s.label} outside {LABEL_RANGE}")


def dataset_widths(samples: Sequence[Sample]) -> tuple[int, int, int]:
    if not samples:
        return (0, 0, 0)
    s = samples[0]
    return (s.text.shape[1], s.audio.shape[1], s.visual.shape[1])


# TMDS ----------------------------------------------------------------------


def dumps_dataset(samples: Sequence[Sample], widths: tuple[int, int, int] | None = None) -> bytes:
    widths = tuple(widths) if widths is not None else dataset_widths(samples)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<5I", VERSION, len(samples), *widths))
    for s in samples:
        validate_sample(s, widths)
        ident = s.id.encode("utf-8")
        buf.write(struct.pack("<I", len(ident)))
        buf.write(ident)
        for x in (s.text, s.audio, s.visual):
            buf.write(struct.pack("<I", x.shape[0]))
            buf.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        buf.write(struct.pack("<d", float(s.label)))
    return buf.getvalue()


def loads_dataset(blob: bytes) -> list[Sample]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DatasetFormatError(f"truncated dataset: needed {n} bytes at offset {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise DatasetFormatError("not a TMDS file (bad magic)")
    version, count, *widths = struct.unpack("<5I", take(20))
    if version != VERSION:
        raise DatasetFormatError(f"unsupported TMDS version {version}")
    samples = []
    for _ in range(count):
        (n_id,) = struct.unpack("<I", take(4))
        ident = bytes(take(n_id)).decode("utf-8")
        mats = []
        for w in widths:
            (rows,) = struct.unpack("<I", take(4))
            raw = np.frombuffer(take(4 * rows * w), dtype="<f4")
            mats.append(raw.reshape(rows, w).astype(np.float64))
        (label,) = struct.unpack("<d", take(8))
        s = Sample(mats[0], mats[1], mats[2], label, ident)
        try:
            validate_sample(s, tuple(widths))
        except ValueError as exc:
            raise DatasetFormatError(str(exc)) from exc
        samples.append(s)
    if pos != len(view):
        raise DatasetFormatError(f"{len(view) - pos} trailing bytes after last sample")
    return samples


def write_dataset(samples: Sequence[Sample], path: str | Path, widths: tuple[int, int, int] | None = None) -> None:
    blob = dumps_dataset(samples, widths)
    Path(path).write_bytes(blob)


def read_dataset(path: str | Path) -> list[Sample]:
    return loads_dataset(Path(path).read_bytes())


# batching --------------------------------------------------------------------


@dataclass
class Batch:
    """Zero-padded (B, T_max, d_m) feature blocks with boolean validity masks."""

    features: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]
    labels: np.ndarray
    ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def _pad(mats: Sequence[np.ndarray], min_len: int = 0) -> tuple[np.ndarray, np.ndarray]:
    T = max(min_len, max(m.shape[0] for m in mats))
    out = np.zeros((len(mats), T, mats[0].shape[1]))
    mask = np.zeros((len(mats), T), dtype=bool)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = True
    return out, mask


def collate(samples: Sequence[Sample], min_lengths: dict[str, int] | None = None) -> Batch:
    min_lengths = min_lengths or {}
    feats, masks = {}, {}
    for m, attr in (("t", "text"), ("a", "audio"), ("v", "visual")):
        feats[m], masks[m] = _pad([getattr(s, attr) for s in samples], min_lengths.get(m, 0))
    return Batch(feats, masks, np.array([s.label for s in samples], dtype=np.float64), [s.id for s in samples])


def make_batches(samples: Sequence[Sample], batch_size: int, seed: int = 0, shuffle: bool = True) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(samples))
    return [
        collate([samples[i] for i in order[lo : lo + batch_size]]) for lo in range(0, len(samples), batch_size)
    ]


# synthetic data --------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_samples: int = 200
    widths: tuple[int, int, int] = (12, 8, 10)
    weights: tuple[float, float, float] = (0.7, 0.15, 0.15)
    feature_noise: tuple[float, float, float] = (0.3, 0.5, 0.5)
    label_noise: float = 0.1
    len_ranges: tuple[tuple[int, int], ...] = ((4, 12), (8, 24), (6, 20))
    planted_fraction: float = 0.35
    # keyed mode: text announces which acoustic/visual rows carry the signal
    n_keys: int = 4
    key_strength: float = 3.0
    distractor_fraction: float = 0.35
    seed: int = 0
    pattern_seed: int = 1234


@dataclass
class PlantedPatterns:
    signal: list[np.ndarray]  # unit direction per modality
    keys: list[np.ndarray]  # (n_keys, width) per modality


def planted_patterns(spec: SyntheticSpec) -> PlantedPatterns:
    """Signal directions and key vectors; fixed by ``pattern_seed``, shared by every sample."""
    rng = np.random.default_rng(spec.pattern_seed)
    signal, keys = [], []
    for w in spec.widths:
        u = rng.standard_normal(w)
        signal.append(u / np.linalg.norm(u))
        k = rng.standard_normal((spec.n_keys, w))
        keys.append(k / np.linalg.norm(k, axis=1, keepdims=True) if spec.n_keys else k)
    return PlantedPatterns(signal, keys)


def generate_synthetic(spec: SyntheticSpec) -> list[Sample]:
    """Tri-modal sequences whose label is a weighted sum of per-modality latents.

    Each modality m carries a latent s_m ~ U(-3, 3) along a fixed direction
    u_m on a random subset of its time steps, over Gaussian background noise.
    The label is clip(sum_m w_m s_m + noise, -3, 3).

    Without keys (``n_keys = 0``) the planted rows are s_m * u_m * T / k, so
    the time average of a noise-free sequence is exactly s_m * u_m.

    With keys, every sample draws a key j. All text rows carry text key j.
    Acoustic/visual signal rows are s_m * u_m + key j; distractor rows are
    r * u_m + key j' with j' != j and r ~ U(-3, 3). Only the text tells
    which acoustic/visual rows to trust.
    """
    for lo, hi in spec.len_ranges:
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid length range [{lo}, {hi}]")
    if spec.n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    if spec.n_keys == 1:
        raise ValueError("keyed mode needs at least two keys (or 0 to disable)")
    pat = planted_patterns(spec)
    keyed = spec.n_keys > 0
    rng = np.random.default_rng(spec.seed)
    samples = []
    for i in range(spec.n_samples):
        latents = rng.uniform(-3.0, 3.0, size=3)
        key = int(rng.integers(spec.n_keys)) if keyed else -1
        mats = []
        for m in range(3):
            lo, hi = spec.len_ranges[m]
            T = int(rng.integers(lo, hi + 1))
            k = max(1, int(round(spec.planted_fraction * T)))
            perm = rng.permutation(T)
            steps = perm[:k]
            x = spec.feature_noise[m] * rng.standard_normal((T, spec.widths[m]))
            if not keyed:
                x[steps] += (latents[m] * T / k) * pat.signal[m]
            elif m == 0:
                x[steps] += latents[m] * pat.signal[m]
                x += spec.key_strength * pat.keys[m][key]
            else:
                x[steps] += latents[m] * pat.signal[m] + spec.key_strength * pat.keys[m][key]
                n_dis = min(T - k, int(round(spec.distractor_fraction * T)))
                for step in perm[k : k + n_dis]:
                    other = (key + int(rng.integers(1, spec.n_keys))) % spec.n_keys
                    x[step] += rng.uniform(-3.0, 3.0) * pat.signal[m] + spec.key_strength * pat.keys[m][other]
            # f32 storage precision, so TMDS round-trips are exact
            mats.append(x.astype(np.float32).astype(np.float64))
        label = float(np.dot(spec.weights, latents) + spec.label_noise * rng.standard_normal())
        label = float(np.clip(label, *LABEL_RANGE))
        samples.append(Sample(mats[0], mats[1], mats[2], label, f"syn-{spec.seed}-{i:06d}"))
    return samples


# JSON manifest import --------------------------------------------------------


def load_manifest(path: str | Path) -> list[Sample]:
    """Import samples listed in a JSON manifest.

    The manifest is a list of objects with ``id``, ``label``, ``text_path``,
    ``audio_path`` and ``visual_path``. Matrix paths are relative to the
    manifest and point at ``.npy`` files or whitespace-delimited text.
    """
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(entries, dict):
        entries = entries.get("samples", [])
    samples = []
    for e in entries:
        missing = {"id", "label", "text_path", "audio_path", "visual_path"} - set(e)
        if missing:
            raise DatasetFormatError(f"manifest entry {e.get('id')!r} is missing {sorted(missing)}")
        mats = [_load_matrix(path.parent / e[k]) for k in ("text_path", "audio_path", "visual_path")]
        s = Sample(mats[0], mats[1], mats[2], float(e["label"]), str(e["id"]))
        validate_sample(s, dataset_widths(samples) if samples else None)
        samples.append(s)
    return samples


def _load_matrix(p: Path) -> np.ndarray:
    arr = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, ndmin=2)
    return np.atleast_2d(np.asarray(arr, dtype=np.float64))


def split_samples(samples: Iterable[Sample], counts: Sequence[int]) -> list[list[Sample]]:
    samples = list(samples)
    out, lo = [], 0
    for c in counts:
        out.append(samples[lo : lo + c])
        lo += c
    return out
