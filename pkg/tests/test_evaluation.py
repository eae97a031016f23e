import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from conftest import fake_manifest, tone
from oracles import levenshtein
from pseudovc.asr import MockASR
from pseudovc.audio import Waveform
from pseudovc.config import AudioConfig, ModelConfig
from pseudovc.evaluation import (
    REPORT_COLUMNS,
    build_eval_set,
    bootstrap_ci,
    diversity,
    edit_distance,
    evaluate,
    pick_targets,
    project_embeddings,
    read_report,
    secs,
    wer,
    write_diversity,
    write_projection,
    write_report,
)
from pseudovc.model import VCModel
from pseudovc.model.backends import ToySpeakerBackend


class TestEvalSet:
    def test_full_size(self):
        m = fake_manifest(52, 10)
        targets = [f"s{i:02d}" for i in range(12)]
        pairs = build_eval_set(m, 400, targets, np.random.default_rng(0))
        assert len(pairs) == 4800
        assert len({p.source_id for p in pairs}) == 400
        assert all(m[p.source_id].speaker_id not in targets for p in pairs)
        for t in targets:
            refs = {p.reference_id for p in pairs if p.target_speaker_id == t}
            assert len(refs) == 1 and m[refs.pop()].speaker_id == t

    def test_single(self):
        assert len(build_eval_set(fake_manifest(2, 1), 1, ["s00"], np.random.default_rng(0))) == 1

    def test_deterministic(self):
        m = fake_manifest(6, 4)
        assert build_eval_set(m, 5, ["s01", "s02"], np.random.default_rng(3)) == build_eval_set(m, 5, ["s01", "s02"], np.random.default_rng(3))

    def test_too_few_sources(self):
        with pytest.raises(ValueError, match="need 10"):
            build_eval_set(fake_manifest(3, 2), 10, ["s00"], np.random.default_rng(0))

    def test_unknown_target(self):
        with pytest.raises(ValueError, match="unknown"):
            build_eval_set(fake_manifest(3, 2), 1, ["zz"], np.random.default_rng(0))

    def test_pick_targets(self):
        t = pick_targets(fake_manifest(5, 1), 2, np.random.default_rng(0))
        assert len(set(t)) == 2
        with pytest.raises(ValueError):
            pick_targets(fake_manifest(2, 1), 2, np.random.default_rng(0))


class _AxisBackend:
    """Embeds a waveform as a unit axis chosen by the sign of its first sample."""

    def embed(self, w):
        return np.array([1.0, 0.0]) if w.samples[0] >= 0 else np.array([0.0, 1.0])


class TestSecs:
    spk = ToySpeakerBackend(AudioConfig(), 32, seed=1234)

    def test_self_similarity(self):
        w = Waveform(tone(180), 16000)
        assert secs(w, w, self.spk) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric(self):
        a = Waveform(tone(180), 16000)
        b = Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, 16000), 16000)
        assert abs(secs(a, b, self.spk) - secs(b, a, self.spk)) < 1e-9

    def test_orthogonal(self):
        a = Waveform(np.full(100, 0.1), 16000)
        b = Waveform(np.full(100, -0.1), 16000)
        assert secs(a, b, _AxisBackend()) == 0.0


class TestWer:
    def test_one_substitution(self):
        assert wer([["a", "x", "c"]], [["a", "b", "c"]]) == pytest.approx(1 / 3)

    def test_empty_hypothesis(self):
        assert wer([[]], [["a", "b"]]) == 1.0

    def test_exact(self):
        assert wer([["a"], ["b", "c"]], [["a"], ["b", "c"]]) == 0.0

    def test_corpus_level(self):
        assert wer([["x"], ["a", "b", "c"]], [["a"], ["a", "b", "c"]]) == pytest.approx(1 / 4)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            wer([["a"]], [[]])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            wer([["a"]], [["a"], ["b"]])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
    def test_matches_oracle(self, h, r):
        assert edit_distance(h, r) == levenshtein(h, r)


class TestProjection:
    def _clusters(self, n=15, k=3, d=32, seed=0):
        rng = np.random.default_rng(seed)
        centres = rng.standard_normal((k, d)) * 5
        x = np.concatenate([c + rng.standard_normal((n, d)) * 0.5 for c in centres])
        return x, np.repeat(np.arange(k), n)

    def test_shape_and_determinism(self):
        x, _ = self._clusters()
        a = project_embeddings(x, seed=1, n_iter=300)
        assert a.shape == (45, 2)
        np.testing.assert_array_equal(a, project_embeddings(x, seed=1, n_iter=300))

    def test_clusters_stay_separated(self):
        x, labels = self._clusters()
        assert silhouette_score(project_embeddings(x, seed=0, n_iter=500), labels) > 0.5

    def test_tiny_sets(self):
        assert project_embeddings(np.eye(3), n_iter=250).shape == (3, 2)
        with pytest.raises(ValueError):
            project_embeddings(np.ones((1, 4)))

    def test_files(self, tmp_path):
        write_projection(np.zeros((3, 2)), ["real", "real", "pseudo"], tmp_path)
        lines = (tmp_path / "coords.tsv").read_text().splitlines()
        assert lines[0] == "label\tx\ty" and len(lines) == 4
        assert (tmp_path / "scatter.png").stat().st_size > 0


class TestStatistics:
    def test_diversity(self):
        assert diversity([[0, 0], [3, 4]]) == 5.0
        assert diversity([[1, 2]]) == 0.0

    def test_write_diversity(self, tmp_path):
        v = write_diversity({"a": [np.zeros(2), np.ones(2)]}, tmp_path / "d.tsv")
        assert v["a"] == pytest.approx(np.sqrt(2))
        assert (tmp_path / "d.tsv").read_text().splitlines()[1].startswith("a\t2\t")

    def test_bootstrap_contains_mean(self):
        x = np.random.default_rng(0).normal(0.7, 0.1, 200)
        lo, hi = bootstrap_ci(x, 500, np.random.default_rng(1))
        assert lo < x.mean() < hi


class TestEvaluate:
    def test_end_to_end_report(self, prepared, raw_corpus, tmp_path):
        transcripts = dict(line.split("\t", 1) for line in (raw_corpus / "transcripts.tsv").read_text().splitlines() if line)
        model = VCModel(ModelConfig(), AudioConfig(), seed=0).eval()
        pairs = build_eval_set(prepared, 2, [sorted(prepared.speakers)[0]], np.random.default_rng(0))
        client = MockASR(transcripts, fail_first={pairs[0].source_id: 99})
        report = evaluate(model, prepared, pairs, tmp_path, client, transcripts, retries=1, n_bootstrap=50, sleep=lambda _: None)
        write_report(report, tmp_path)
        rows = read_report(tmp_path / "report.csv")
        assert tuple(rows[0]) == REPORT_COLUMNS and len(rows) == 2
        assert rows[0]["wer_contribution"] == "" and float(rows[1]["wer_contribution"]) == 0.0
        assert report.asr_failed == [f"{pairs[0].source_id}->{pairs[0].target_speaker_id}"]
        summary = (tmp_path / "summary.txt").read_text()
        assert "WER (corpus-level): 0.0000" in summary and "failures excluded from WER: 1" in summary
        assert all((tmp_path / p.converted_path).is_file() for p in report.pairs)

    def test_missing_transcript(self, prepared, tmp_path):
        pairs = build_eval_set(prepared, 1, [sorted(prepared.speakers)[0]], np.random.default_rng(0))
        model = VCModel(ModelConfig(), AudioConfig(), seed=0).eval()
        with pytest.raises(ValueError, match="transcript"):
            evaluate(model, prepared, pairs, tmp_path, MockASR({}), {})
