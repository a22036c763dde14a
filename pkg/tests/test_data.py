import hashlib

import numpy as np
import pytest

from foca.data import (
    BadMagicError,
    ManifestError,
    ManifestRecord,
    NonFiniteError,
    SizeMismatchError,
    decode_features,
    encode_features,
    load_dataset,
    make_folds,
    read_feature_file,
    validation_split,
    write_feature_file,
    write_manifest,
)
from foca.synth import generate, prototypes, synth_dataset


class TestFeatureFile:
    def test_round_trip_bit_exact(self, tmp_path):
        m = np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32)
        write_feature_file(tmp_path / "f.fmx", m)
        back = read_feature_file(tmp_path / "f.fmx")
        assert back.dtype == np.float32
        assert back.tobytes() == m.tobytes()

    def test_byte_length(self):
        raw = encode_features(np.zeros((2, 3)))
        assert len(raw) == 4 + 4 + 4 + 24 == 36
        assert raw[:12] == b"FMX1\x02\x00\x00\x00\x03\x00\x00\x00"

    def test_bad_magic(self):
        raw = bytearray(encode_features(np.ones((2, 2))))
        raw[3:4] = b"2"
        with pytest.raises(BadMagicError):
            decode_features(bytes(raw))

    def test_truncated(self):
        raw = encode_features(np.ones((2, 2)))
        with pytest.raises(SizeMismatchError):
            decode_features(raw[:-1])
        with pytest.raises(SizeMismatchError):
            decode_features(raw[:7])
        with pytest.raises(SizeMismatchError):
            decode_features(raw + b"\x00")

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            encode_features(np.array([[1.0, np.nan]]))
        raw = bytearray(encode_features(np.ones((1, 2))))
        raw[12:16] = np.array([np.inf], dtype="<f4").tobytes()
        with pytest.raises(NonFiniteError):
            decode_features(bytes(raw))

    def test_errors_are_distinct(self):
        assert len({BadMagicError, SizeMismatchError, NonFiniteError}) == 3
        assert not issubclass(BadMagicError, SizeMismatchError)


def _write_set(tmp_path, labels, dims=(4, 5), ids=None):
    n = len(labels)
    rng = np.random.default_rng(1)
    write_feature_file(tmp_path / "a.fmx", rng.standard_normal((n, dims[0])))
    write_feature_file(tmp_path / "v.fmx", rng.standard_normal((n, dims[1])))
    ids = ids or [f"id{i}" for i in range(n)]
    write_manifest(
        tmp_path / "m.csv", [ManifestRecord(ids[i], labels[i], "a.fmx", i, "v.fmx", i) for i in range(n)]
    )
    return tmp_path / "m.csv"


class TestManifest:
    def test_load(self, tmp_path):
        ds = load_dataset(_write_set(tmp_path, ["y", "x", "y"]))
        assert ds.classes == ["x", "y"]
        assert ds.labels.tolist() == [1, 0, 1]
        assert ds.audio.shape == (3, 4) and ds.visual.shape == (3, 5)
        assert ds.index_of("id2") == 2

    def test_duplicate_id(self, tmp_path):
        with pytest.raises(ManifestError, match="duplicate"):
            load_dataset(_write_set(tmp_path, ["a", "b"], ids=["s", "s"]))

    def test_single_label(self, tmp_path):
        with pytest.raises(ManifestError, match="at least 2"):
            load_dataset(_write_set(tmp_path, ["a", "a"]))

    def test_missing_row(self, tmp_path):
        path = _write_set(tmp_path, ["a", "b"])
        write_manifest(path, [ManifestRecord("s", "a", "a.fmx", 5, "v.fmx", 0)])
        with pytest.raises(ManifestError, match="out of range"):
            load_dataset(path)

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,label\n")
        with pytest.raises(ManifestError):
            load_dataset(tmp_path / "m.csv")


def _check_folds(folds, labels, k):
    labels = np.asarray(labels)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(len(labels)))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for lab in np.unique(labels):
        share = (labels == lab).sum() / k
        for f in folds:
            assert abs((labels[f] == lab).sum() - share) < 1


class TestFolds:
    def test_divisible(self):
        labels = np.repeat(np.arange(10), 10)
        folds = make_folds(labels, 5, seed=3)
        for f in folds:
            assert np.bincount(labels[f], minlength=10).tolist() == [2] * 10

    def test_uneven(self):
        labels = np.array([0] * 27 + [1] * 26)
        folds = make_folds(labels, 5, seed=0)
        assert sorted(len(f) for f in folds) == [10, 10, 11, 11, 11]
        _check_folds(folds, labels, 5)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_label_sets(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(5, 30, rng.integers(2, 6))
        labels = rng.permutation(np.repeat(np.arange(len(counts)), counts))
        _check_folds(make_folds(labels, 5, seed=seed), labels, 5)

    def test_deterministic(self):
        labels = np.repeat(np.arange(4), 9)
        a, b = make_folds(labels, 5, seed=7), make_folds(labels, 5, seed=7)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = make_folds(labels, 5, seed=8)
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_too_few_names_label(self):
        with pytest.raises(ValueError, match="rare"):
            make_folds([0] * 10 + [1] * 4, 5, names=["common", "rare"])

    def test_validation_split(self):
        idx = np.arange(100, 150)
        tr, va = validation_split(idx, 0.1, seed=0)
        assert len(va) == 5 and len(tr) == 45
        assert sorted(np.concatenate([tr, va]).tolist()) == idx.tolist()


def nearest_prototype(x, protos):
    d = ((x[:, None, :] - protos[None, :, :]) ** 2).sum(-1)
    return d.argmin(1)


class TestSynth:
    def test_noiseless_structure(self):
        labels, audio, visual, names = generate(3, noise_sigma=0.0, seed=5)
        assert len(names) == 10 and names[0] == "c0-0" and names[1] == "c0-1"
        for lab in range(10):
            rows_a, rows_v = audio[labels == lab], visual[labels == lab]
            assert (rows_a == rows_a[0]).all() and (rows_v == rows_v[0]).all()
        proto_a = np.stack([audio[labels == lab][0] for lab in range(10)])
        proto_v = np.stack([visual[labels == lab][0] for lab in range(10)])
        for p in range(5):
            assert np.array_equal(proto_v[2 * p], proto_v[2 * p + 1])
        assert len({row.tobytes() for row in proto_a}) == 10

    def test_nearest_prototype_oracle(self):
        leaves, pa, pv = prototypes((5, 2), 32, 32, seed=9)
        labels, audio, visual, _ = generate(20, noise_sigma=0.0, seed=9)
        assert (nearest_prototype(audio.astype(float), pa) == labels).mean() == 1.0
        # ties between siblings go to the first one
        assert (nearest_prototype(visual.astype(float), pv) == labels).mean() == 0.5

    def test_bytes_deterministic(self, tmp_path):
        digests = []
        for sub in ("a", "b"):
            synth_dataset(tmp_path / sub, 4, seed=11)
            digests.append(
                [hashlib.sha256((tmp_path / sub / f).read_bytes()).hexdigest() for f in ("audio.fmx", "image.fmx", "manifest.csv")]
            )
        assert digests[0] == digests[1]
        synth_dataset(tmp_path / "c", 4, seed=12)
        assert hashlib.sha256((tmp_path / "c" / "audio.fmx").read_bytes()).hexdigest() != digests[0][0]

    def test_loads_back(self, tmp_path):
        ds = load_dataset(synth_dataset(tmp_path, 3, d_audio=16, d_visual=20, seed=0))
        assert len(ds) == 30 and ds.n_classes == 10
        assert ds.audio.shape == (30, 16) and ds.visual.shape == (30, 20)

    @pytest.mark.parametrize(
        "kw", [{"d_audio": 8}, {"noise_sigma": -1.0}, {"tree_depth": 3}, {"branching": (5, 1)}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            generate(2, **kw)
