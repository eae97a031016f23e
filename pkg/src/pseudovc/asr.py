"""Speech recognition clients used by the WER metric.

Three interchangeable clients share one method, ``recognize(key, wave)``:
an HTTP service client, a local Whisper adapter and a deterministic mock.
``key`` identifies the utterance (the mock looks transcripts up by it).
"""

from __future__ import annotations

import io
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "PSEUDOVC_ASR_ENDPOINT"
NORMALIZATION = "lowercase; punctuation stripped; whitespace collapsed"

_PUNCT = re.compile(r"[^\w\s']|_")


def normalize_text(text: str) -> list[str]:
    """Lowercase, strip punctuation and split on whitespace."""
    text = _PUNCT.sub(" ", text.lower()).replace("'", "")
    return text.split()


class TransientASRError(RuntimeError):
    """Failure worth retrying (timeouts, 5xx, dropped connections)."""


class MockASR:
    """Returns stored transcripts, optionally corrupted in a known way.

    ``substitute_every=k`` replaces every k-th word with ``<sub>``;
    ``fail_first`` maps a key to the number of transient failures raised
    before it succeeds.
    """

    def __init__(self, transcripts: dict[str, str], substitute_every: int = 0, fail_first: dict[str, int] | None = None):
        self.transcripts = dict(transcripts)
        self.substitute_every = substitute_every
        self._failures = dict(fail_first or {})
        self.calls = 0

    def recognize(self, key: str, wave: Waveform) -> str:
        self.calls += 1
        if self._failures.get(key, 0) > 0:
            self._failures[key] -= 1
            raise TransientASRError(f"simulated timeout for {key}")
        words = self.transcripts[key].split()
        k = self.substitute_every
        if k:
            words = ["<sub>" if (i + 1) % k == 0 else w for i, w in enumerate(words)]
        return " ".join(words)


def _wav_bytes(wave: Waveform) -> bytes:
    from scipy.io import wavfile

    buf = io.BytesIO()
    pcm = np.round(np.clip(wave.samples, -1.0, 1.0) * 32767).astype(np.int16)
    wavfile.write(buf, wave.rate, pcm)
    return buf.getvalue()


class HttpASR:
    """POSTs 16-bit WAV bytes; expects a JSON body with a ``text`` field."""

    def __init__(self, endpoint: str = "", timeout: float = 30.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise ValueError(f"no ASR endpoint configured (set eval.asr.endpoint or ${ENDPOINT_ENV})")
        self.timeout = timeout

    def recognize(self, key: str, wave: Waveform) -> str:
        req = urllib.request.Request(self.endpoint, data=_wav_bytes(wave), headers={"Content-Type": "audio/wav", "X-Utterance-Id": key})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code >= 500:
                raise TransientASRError(str(exc)) from exc
            raise
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransientASRError(str(exc)) from exc
        return str(body["text"])


class WhisperASR:
    """Local Whisper through ``transformers`` (optional dependency)."""

    def __init__(self, model_name: str = "openai/whisper-large-v3"):
        try:
            from transformers import pipeline
        except ImportError as exc:  # pragma: no cover - optional
            raise ImportError("WhisperASR needs the 'pretrained' extra (transformers)") from exc
        self._pipe = pipeline("automatic-speech-recognition", model=model_name)

    def recognize(self, key: str, wave: Waveform) -> str:  # pragma: no cover - needs weights
        return self._pipe({"raw": wave.samples, "sampling_rate": wave.rate})["text"]


def make_client(cfg, transcripts: dict[str, str] | None = None):
    if cfg.kind == "mock":
        if transcripts is None:
            raise ValueError("mock ASR needs ground-truth transcripts")
        return MockASR(transcripts)
    if cfg.kind == "http":
        return HttpASR(cfg.endpoint, cfg.timeout)
    if cfg.kind == "whisper":
        return WhisperASR()
    raise ValueError(f"unknown ASR kind {cfg.kind!r}")


@dataclass
class TranscriptionResult:
    tokens: list[list[str] | None]
    failed: list[str] = field(default_factory=list)


def transcribe(
    batch: list[tuple[str, Waveform]],
    client,
    retries: int = 3,
    backoff: float = 0.5,
    max_concurrency: int = 1,
    sleep=time.sleep,
) -> TranscriptionResult:
    """Normalized token sequences in input order; ``None`` where retries ran out."""

    def one(item):
        key, wave = item
        for attempt in range(retries + 1):
            try:
                return normalize_text(client.recognize(key, wave))
            except TransientASRError as exc:
                if attempt == retries:
                    logger.warning("ASR gave up on %s after %d attempts: %s", key, attempt + 1, exc)
                    return None
                sleep(backoff * 2**attempt)
        return None

    if max_concurrency > 1:
        with ThreadPoolExecutor(max_concurrency) as pool:
            tokens = list(pool.map(one, batch))
    else:
        tokens = [one(item) for item in batch]
    failed = [key for (key, _), t in zip(batch, tokens) if t is None]
    return TranscriptionResult(tokens, failed)
