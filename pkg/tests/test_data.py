import json
import struct

import numpy as np
import pytest

from tmrn.data import (
    DatasetFormatError,
    Sample,
    SyntheticSpec,
    collate,
    dumps_dataset,
    generate_synthetic,
    load_manifest,
    loads_dataset,
    make_batches,
    read_dataset,
    write_dataset,
)


def random_samples(n, seed=0, widths=(3, 2, 4)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mats = [rng.standard_normal((int(rng.integers(1, 6)), w)).astype(np.float32).astype(np.float64) for w in widths]
        out.append(Sample(*mats, float(rng.uniform(-3, 3)), f"s{i}"))
    return out


def assert_same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.id == y.id and x.label == y.label
        for m in ("text", "audio", "visual"):
            assert getattr(x, m).tobytes() == getattr(y, m).tobytes()


def test_round_trip_bit_exact(tmp_path):
    samples = random_samples(10)
    path = tmp_path / "d.tmds"
    write_dataset(samples, path)
    assert_same(read_dataset(path), samples)
    assert dumps_dataset(read_dataset(path)) == path.read_bytes()


def test_synthetic_round_trip():
    samples = generate_synthetic(SyntheticSpec(n_samples=20, seed=3))
    assert_same(loads_dataset(dumps_dataset(samples)), samples)


def test_empty_dataset(tmp_path):
    path = tmp_path / "e.tmds"
    write_dataset([], path, widths=(3, 2, 4))
    assert read_dataset(path) == []


def test_corrupt_magic():
    blob = bytearray(dumps_dataset(random_samples(2)))
    blob[:4] = b"XXXX"
    with pytest.raises(DatasetFormatError, match="magic"):
        loads_dataset(bytes(blob))


def test_bad_version():
    blob = bytearray(dumps_dataset(random_samples(2)))
    blob[4:8] = struct.pack("<I", 9)
    with pytest.raises(DatasetFormatError, match="version"):
        loads_dataset(bytes(blob))


def test_truncated_and_trailing():
    blob = dumps_dataset(random_samples(3))
    with pytest.raises(DatasetFormatError, match="truncated"):
        loads_dataset(blob[:-3])
    with pytest.raises(DatasetFormatError, match="trailing"):
        loads_dataset(blob + b"\0")


def test_width_inconsistency():
    samples = random_samples(2)
    samples[1].audio = np.zeros((2, 7))
    with pytest.raises(ValueError):
        dumps_dataset(samples)


def test_label_out_of_range():
    s = random_samples(1)[0]
    s.label = 3.5
    with pytest.raises(ValueError):
        dumps_dataset([s])


# batching -----------------------------------------------------------------------


def test_batch_sizes():
    assert [len(b) for b in make_batches(random_samples(5), 2, shuffle=False)] == [2, 2, 1]


def test_unshuffled_order():
    samples = random_samples(5)
    ids = [i for b in make_batches(samples, 2, shuffle=False) for i in b.ids]
    assert ids == [s.id for s in samples]


def test_shuffle_is_seeded():
    samples = random_samples(9)
    a = [b.ids for b in make_batches(samples, 4, seed=3)]
    b = [b.ids for b in make_batches(samples, 4, seed=3)]
    c = [b.ids for b in make_batches(samples, 4, seed=4)]
    assert a == b and a != c
    assert sorted(i for ids in a for i in ids) == sorted(s.id for s in samples)


def test_masks_and_zero_padding():
    samples = random_samples(4)
    batch = collate(samples)
    for m, attr in (("t", "text"), ("a", "audio"), ("v", "visual")):
        for i, s in enumerate(samples):
            L = getattr(s, attr).shape[0]
            assert batch.masks[m][i].sum() == L
            np.testing.assert_array_equal(batch.features[m][i, :L], getattr(s, attr))
            assert not batch.features[m][i, L:].any()


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        make_batches(random_samples(2), 0)


# synthetic generator ------------------------------------------------------------


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_samples=15, seed=9)
    assert dumps_dataset(generate_synthetic(spec)) == dumps_dataset(generate_synthetic(spec))


def test_synthetic_ranges():
    spec = SyntheticSpec(n_samples=300, seed=1, label_noise=2.0)
    samples = generate_synthetic(spec)
    assert all(-3 <= s.label <= 3 for s in samples)
    assert any(abs(s.label) == 3 for s in samples)
    for s in samples:
        for x, (lo, hi) in zip((s.text, s.audio, s.visual), spec.len_ranges):
            assert lo <= x.shape[0] <= hi


def test_degenerate_length_range():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(n_samples=2, len_ranges=((0, 3), (2, 4), (2, 4))))


def _text_probe(samples):
    X = np.array([np.append(s.text.mean(axis=0), 1.0) for s in samples])
    y = np.array([s.label for s in samples])
    return X, y


def test_planted_text_signal_is_recoverable():
    spec = SyntheticSpec(
        n_samples=400, weights=(0.7, 0.0, 0.0), feature_noise=(0.0, 0.0, 0.0), label_noise=0.0, n_keys=0, seed=2
    )
    X, y = _text_probe(generate_synthetic(spec))
    coef, *_ = np.linalg.lstsq(X[:300], y[:300], rcond=None)
    assert np.mean(np.abs(X[300:] @ coef - y[300:])) < 0.1


def test_zero_text_weight_carries_no_signal():
    spec = SyntheticSpec(n_samples=2000, weights=(0.0, 0.5, 0.5), seed=4)
    X, y = _text_probe(generate_synthetic(spec))
    coef, *_ = np.linalg.lstsq(X[:1500], y[:1500], rcond=None)
    probe = np.mean(np.abs(X[1500:] @ coef - y[1500:]))
    constant = np.mean(np.abs(y[1500:] - y[:1500].mean()))
    assert probe == pytest.approx(constant, rel=0.05)
    assert 0.7 < probe / y.std() < 1.05


def test_keyed_mode_needs_two_keys():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(n_samples=1, n_keys=1))


# manifest import ----------------------------------------------------------------


def test_manifest_import(tmp_path):
    rng = np.random.default_rng(0)
    t, a = rng.standard_normal((3, 2)), rng.standard_normal((4, 3))
    np.save(tmp_path / "t.npy", t)
    np.save(tmp_path / "a.npy", a)
    np.savetxt(tmp_path / "v.txt", [[1.0, 2.0], [3.0, 4.0]])
    (tmp_path / "m.json").write_text(
        json.dumps([{"id": "clip1", "label": -1.5, "text_path": "t.npy", "audio_path": "a.npy", "visual_path": "v.txt"}])
    )
    (s,) = load_manifest(tmp_path / "m.json")
    assert s.id == "clip1" and s.label == -1.5
    np.testing.assert_array_equal(s.text, t)
    np.testing.assert_array_equal(s.visual, [[1.0, 2.0], [3.0, 4.0]])


def test_manifest_missing_field(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps([{"id": "x", "label": 0.0}]))
    with pytest.raises(DatasetFormatError, match="missing"):
        load_manifest(tmp_path / "m.json")
