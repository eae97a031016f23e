import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent))

from pseudovc.config import AudioConfig, ModelConfig  # noqa: E402
from pseudovc.corpus import Manifest, UtteranceRecord, ingest_corpus, prepare_corpus  # noqa: E402
from pseudovc.synth import make_corpus  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def raw_corpus(tmp_path_factory):
    """4 speakers x 4 utterances at 24 kHz, with transcripts."""
    return make_corpus(tmp_path_factory.mktemp("raw16"), n_speakers=4, n_utterances=4, seed=0)


@pytest.fixture(scope="session")
def prepared(raw_corpus, tmp_path_factory):
    return prepare_corpus(ingest_corpus(raw_corpus), tmp_path_factory.mktemp("prep16"), 16000, 320)


@pytest.fixture(scope="session")
def small_prepared(tmp_path_factory):
    """The 8-utterance corpus used for convergence-style checks."""
    raw = make_corpus(tmp_path_factory.mktemp("raw8"), n_speakers=4, n_utterances=2, seed=0)
    return prepare_corpus(ingest_corpus(raw), tmp_path_factory.mktemp("prep8"), 16000, 320)


@pytest.fixture
def audio_cfg():
    return AudioConfig()


@pytest.fixture
def toy_cfg():
    return ModelConfig()


def fake_manifest(n_speakers, n_utts, root="/nonexistent"):
    """Manifest whose files need not exist (for sampling-only logic)."""
    recs = [
        UtteranceRecord(f"s{s:02d}_{u:03d}", f"s{s:02d}", f"s{s:02d}/s{s:02d}_{u:03d}.wav", 16000, 16000)
        for s in range(n_speakers)
        for u in range(n_utts)
    ]
    return Manifest(root, recs)


def tone(freq, n=16000, rate=16000, amp=0.5):
    t = np.arange(n) / rate
    return (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)
