import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fake_manifest, tone
from oracles import chi_square_uniform_ok, dft_peak_hz
from pseudovc.audio import Waveform, normalize_peak, read_wav, resample, write_wav
from pseudovc.corpus import (
    MANIFEST_KEYS,
    Layout,
    Manifest,
    SamplingStats,
    SplitSpec,
    UtteranceRecord,
    ingest_corpus,
    read_manifest,
    sample_other_utterance,
    split_manifest,
    write_manifest,
)


def _write_tree(root, speakers=2, files=3, rate=16000):
    for s in range(speakers):
        for f in range(files):
            write_wav(root / f"spk{s}" / f"spk{s}_{f}.wav", Waveform(tone(200 + 50 * f, 1600, rate), rate))


class TestWaveform:
    def test_rejects_empty_and_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(0), 16000)
        with pytest.raises(ValueError):
            Waveform(np.zeros(10), 0)

    def test_wav_roundtrip_is_16bit(self, tmp_path):
        w = Waveform(tone(440, 800), 16000)
        write_wav(tmp_path / "a.wav", w)
        back = read_wav(tmp_path / "a.wav")
        assert back.rate == 16000
        np.testing.assert_allclose(back.samples, w.samples, atol=1.0 / 32768 + 1e-7)

    def test_stereo_is_averaged(self, tmp_path):
        from scipy.io import wavfile

        data = np.stack([np.full(100, 1000, np.int16), np.full(100, 3000, np.int16)], axis=1)
        wavfile.write(tmp_path / "s.wav", 8000, data)
        np.testing.assert_allclose(read_wav(tmp_path / "s.wav").samples, 2000 / 32768, rtol=1e-6)

    def test_normalize_peak_only_scales_down(self):
        loud = normalize_peak(Waveform(np.array([0.1, -1.0, 0.2]), 16000), 0.95)
        assert np.max(np.abs(loud.samples)) == pytest.approx(0.95)
        quiet = Waveform(np.array([0.1, -0.5, 0.2]), 16000)
        assert normalize_peak(quiet, 0.95) == quiet


class TestResample:
    def test_length_24k_to_16k(self):
        w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 24000), 24000)
        assert len(resample(w, 16000)) == 16000

    def test_identity(self):
        w = Waveform(tone(300, 1000), 16000)
        assert resample(w, 16000) == w

    def test_tone_frequency_preserved(self):
        w = resample(Waveform(tone(440, 4800, 24000), 24000), 16000)
        assert abs(dft_peak_hz(w.samples, 16000) - 440) <= 16000 / len(w)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(Waveform(tone(300, 100), 16000), 0)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(100, 5000), r2=st.sampled_from([8000, 16000, 22050, 24000, 48000]))
    def test_roundtrip_duration(self, n, r2):
        w = Waveform(np.random.default_rng(n).uniform(-0.5, 0.5, n), 16000)
        assert abs(len(resample(resample(w, r2), 16000)) - n) <= 2


class TestIngest:
    def test_counts(self, tmp_path):
        _write_tree(tmp_path)
        m = ingest_corpus(tmp_path)
        assert len(m) == 6
        assert sorted(m.speakers) == ["spk0", "spk1"]

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_corpus(tmp_path / "nope")

    def test_empty_dir_fails_on_use(self, tmp_path):
        m = ingest_corpus(tmp_path)
        assert len(m) == 0
        with pytest.raises(ValueError):
            m.require_nonempty("training")

    def test_unreadable_file_skipped(self, tmp_path):
        _write_tree(tmp_path, 1, 2)
        (tmp_path / "spk0" / "broken.wav").write_bytes(b"not a wav")
        m = ingest_corpus(tmp_path)
        assert len(m) == 2
        assert m.skipped == ("spk0/broken.wav",)

    def test_deterministic_bytes(self, tmp_path):
        _write_tree(tmp_path / "c")
        write_manifest(ingest_corpus(tmp_path / "c"), tmp_path / "c" / "a.jsonl")
        write_manifest(ingest_corpus(tmp_path / "c"), tmp_path / "c" / "b.jsonl")
        assert (tmp_path / "c" / "a.jsonl").read_bytes() == (tmp_path / "c" / "b.jsonl").read_bytes()

    def test_metadata_layout(self, tmp_path):
        _write_tree(tmp_path, 1, 2)
        (tmp_path / "meta.tsv").write_text("path\tspeaker_id\nspk0/spk0_0.wav\talice\nspk0/spk0_1.wav\tbob\n")
        m = ingest_corpus(tmp_path, Layout("metadata", metadata="meta.tsv"))
        assert sorted(m.speakers) == ["alice", "bob"]

    def test_prepared_corpus_is_hop_aligned_and_bounded(self, prepared):
        for r in prepared.records:
            w = prepared.load(r)
            assert w.rate == 16000 and len(w) % 320 == 0
            assert np.max(np.abs(w.samples)) <= 0.95 + 1e-4


class TestManifest:
    def test_roundtrip(self, prepared):
        write_manifest(prepared, prepared.root / "roundtrip.jsonl")
        assert read_manifest(prepared.root / "roundtrip.jsonl") == prepared

    def test_roundtrip_from_parent_dir(self, tmp_path):
        _write_tree(tmp_path / "audio", 1, 2)
        m = ingest_corpus(tmp_path / "audio")
        write_manifest(m, tmp_path / "m.jsonl")
        back = read_manifest(tmp_path / "m.jsonl")
        assert [r.path for r in back.records] == ["audio/spk0/spk0_0.wav", "audio/spk0/spk0_1.wav"]
        assert back.load(back.records[0]) == m.load(m.records[0])

    def test_manifest_below_audio_rejected(self, tmp_path):
        _write_tree(tmp_path / "audio", 1, 1)
        with pytest.raises(ValueError):
            write_manifest(ingest_corpus(tmp_path / "audio"), tmp_path / "elsewhere" / "m.jsonl")

    def test_keys_exact(self, prepared):
        write_manifest(prepared, prepared.root / "keys.jsonl")
        first = json.loads((prepared.root / "keys.jsonl").read_text().splitlines()[0])
        assert list(first) == list(MANIFEST_KEYS)

    def test_duplicate_id_rejected(self):
        r = UtteranceRecord("a", "s", "s/a.wav", 16000, 10)
        with pytest.raises(ValueError):
            Manifest("/x", [r, r])

    def test_record_validation(self):
        with pytest.raises(ValueError):
            UtteranceRecord("a", "s", "s/a.wav", 16000, 0)
        with pytest.raises(ValueError):
            UtteranceRecord("a", "s", "s/a.wav", 16000, 10, split="dev")


class TestSplit:
    def test_explicit_lists(self):
        m = fake_manifest(2, 3)
        spec = SplitSpec(lists={"test": ["s00_000"], "val": ["s01_002"]})
        out = split_manifest(m, spec)
        assert out["s00_000"].split == "test"
        assert out["s01_002"].split == "val"
        assert sum(r.split == "train" for r in out.records) == 4

    def test_missing_ids_listed(self):
        with pytest.raises(ValueError, match="ghost"):
            split_manifest(fake_manifest(1, 2), SplitSpec(lists={"test": ["ghost"]}))

    def test_fractions_deterministic(self):
        m = fake_manifest(5, 20)
        a = split_manifest(m, SplitSpec(fractions=(0.9, 0.05, 0.05)), seed=3)
        b = split_manifest(m, SplitSpec(fractions=(0.9, 0.05, 0.05)), seed=3)
        assert a == b
        assert Counter(r.split for r in a.records) == {"train": 90, "val": 5, "test": 5}

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            split_manifest(fake_manifest(1, 2), SplitSpec(fractions=(0.5, 0.2, 0.2)))


class TestSampleOther:
    def test_forced_choice(self):
        m = fake_manifest(1, 2)
        assert sample_other_utterance(m, "s00", "s00_000", np.random.default_rng(0)).utterance_id == "s00_001"

    def test_single_utterance_fallback(self):
        m = fake_manifest(1, 1)
        stats = SamplingStats()
        r = sample_other_utterance(m, "s00", "s00_000", np.random.default_rng(0), stats)
        assert r.utterance_id == "s00_000"
        assert stats.fallbacks == 1

    def test_unknown_speaker(self):
        with pytest.raises(ValueError):
            sample_other_utterance(fake_manifest(1, 2), "nobody", "x", np.random.default_rng(0))

    def test_uniform_chi_square(self):
        m = fake_manifest(1, 6)
        rng = np.random.default_rng(7)
        draws = Counter(sample_other_utterance(m, "s00", "s00_000", rng).utterance_id for _ in range(10_000))
        assert "s00_000" not in draws and len(draws) == 5
        assert chi_square_uniform_ok(list(draws.values()))

    def test_same_speaker_and_reproducible(self):
        m = fake_manifest(3, 4)
        seq = lambda: [sample_other_utterance(m, "s01", "s01_000", np.random.default_rng(1)).utterance_id for _ in range(5)]  # noqa: E731
        assert seq() == seq()
        rng = np.random.default_rng(2)
        assert all(sample_other_utterance(m, "s01", "s01_001", rng).speaker_id == "s01" for _ in range(200))
