import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import tone
from pseudovc.audio import Waveform, read_wav, write_wav
from pseudovc.cli import main
from pseudovc.pseudo import read_pseudo_manifest

FAST = [
    "teacher.total_steps=3",
    "train.total_steps=3",
    "train.n_pseudo=2",
    "perturb.n_variants=2",
    "eval.n_sources=2",
    "eval.bootstrap=20",
    "tsne.n_iter=250",
]


def _args(ws, corpus, *extra):
    return ["--set", f"workdir={ws}", "--set", f"corpus.root={corpus}"] + [x for kv in FAST + list(extra) for x in ("--set", kv)]


def _latest(ws, stage):
    return Path((ws / "latest" / stage).read_text().strip())


@pytest.fixture(scope="module")
def pipeline(raw_corpus, tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    for stage in ("prepare", "train-teacher", "gen-pseudo", "train", "eval", "tsne"):
        assert main([stage] + _args(ws, raw_corpus)) == 0, stage
    return ws


class TestErrors:
    def test_bad_override(self, tmp_path, capsys):
        assert main(["prepare", "--set", "train.alpha=1.5", "--set", f"workdir={tmp_path}"]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "config" and any("alpha" in p for p in err["problems"])

    def test_train_without_pseudo(self, raw_corpus, tmp_path, capsys):
        assert main(["prepare"] + _args(tmp_path, raw_corpus)) == 0
        capsys.readouterr()
        assert main(["train"] + _args(tmp_path, raw_corpus)) == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "missing_prerequisite" and "gen-pseudo" in err["path"]

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["prepare", "--set", f"workdir={tmp_path}", "--set", f"corpus.root={tmp_path / 'nope'}"]) == 2
        assert "nope" in json.loads(capsys.readouterr().err)["path"]

    def test_eval_without_anything(self, tmp_path):
        assert main(["eval", "--set", f"workdir={tmp_path}"]) == 2


class TestPipeline:
    def test_run_dirs_hold_config(self, pipeline):
        for stage in ("prepare", "train-teacher", "gen-pseudo", "train", "eval", "tsne"):
            run = _latest(pipeline, stage)
            assert run.name.startswith(stage + "-")
            assert yaml.safe_load((run / "config.yaml").read_text())["train"]["n_pseudo"] == 2

    def test_pseudo_counts(self, pipeline):
        root = _latest(pipeline, "gen-pseudo")
        sets = read_pseudo_manifest(root / "pseudo.jsonl", n_expected=2, root=root)
        assert sets and all(len(s) == 2 for s in sets)

    def test_checkpoints(self, pipeline):
        assert (_latest(pipeline, "train-teacher") / "checkpoint.pt").is_file()
        assert (_latest(pipeline, "train") / "checkpoint.pt").is_file()
        assert (_latest(pipeline, "train") / "metrics.csv").is_file()

    def test_eval_outputs(self, pipeline):
        run = _latest(pipeline, "eval")
        assert (run / "report.csv").is_file()
        assert "SECS mean" in (run / "summary.txt").read_text()

    def test_tsne_outputs(self, pipeline):
        run = _latest(pipeline, "tsne")
        labels = {line.split("\t")[0] for line in (run / "coords.tsv").read_text().splitlines()[1:]}
        assert {"real", "sr", "pseudo"} <= labels
        assert (run / "scatter.png").is_file() and (run / "diversity.tsv").is_file()

    def test_convert(self, pipeline, raw_corpus, tmp_path):
        src, ref, out = tmp_path / "src.wav", tmp_path / "ref.wav", tmp_path / "out.wav"
        write_wav(src, Waveform(tone(200, 22050, 22050), 22050))
        write_wav(ref, Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, 8000).astype(np.float32), 16000))
        assert main(["convert", "--source", str(src), "--reference", str(ref), "--output", str(out)] + _args(pipeline, raw_corpus)) == 0
        w = read_wav(out)
        assert w.rate == 16000 and len(w) == 16000

    def test_resume_train(self, pipeline, raw_corpus):
        ck = _latest(pipeline, "train") / "checkpoint.pt"
        assert main(["train", "--resume", str(ck)] + _args(pipeline, raw_corpus, "train.total_steps=4")) == 0
