from .backends import BackendUnavailable, align_frames, backend_digest, content_backend, speaker_backend
from .core import (
    CheckpointError,
    VCModel,
    bottleneck,
    convert,
    decode,
    discriminate,
    extract_content,
    file_digest,
    flow_forward,
    flow_inverse,
    load_model,
    posterior_encode,
    read_checkpoint,
    save_checkpoint,
    speaker_embed,
)
from .networks import GaussianSeq

__all__ = [
    "BackendUnavailable",
    "CheckpointError",
    "GaussianSeq",
    "VCModel",
    "align_frames",
    "backend_digest",
    "bottleneck",
    "content_backend",
    "convert",
    "decode",
    "discriminate",
    "extract_content",
    "file_digest",
    "flow_forward",
    "flow_inverse",
    "load_model",
    "posterior_encode",
    "read_checkpoint",
    "save_checkpoint",
    "speaker_backend",
    "speaker_embed",
]
