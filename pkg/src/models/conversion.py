"""Conversion-stage models: embeddings, synthesizer config, requests and provenance"""

from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional

import numpy as np

from src.errors import ShapeError, ValidationError
from src.models.features import MelSpectrogram
from src.models.utterance import UtteranceRecord, Waveform


def _as_vector(values, name: str) -> np.ndarray:
    vector = np.asarray(values)
    if vector.dtype not in (np.float32, np.float64):
        vector = vector.astype(np.float32)
    if vector.ndim != 1 or vector.shape[0] == 0:
        raise ShapeError(f'{name} must be a non-empty 1-D vector, got shape {vector.shape}')
    if not np.all(np.isfinite(vector)):
        raise ValidationError(f'{name} contains non-finite values')
    return vector


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    source_utterance_id: str

    def __post_init__(self):
        self.vector = _as_vector(self.vector, 'speaker embedding')

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass
class ProsodyEmbedding:
    vector: np.ndarray
    source_utterance_id: Optional[str] = None

    def __post_init__(self):
        self.vector = _as_vector(self.vector, 'prosody embedding')

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass
class SynthesizerConfig:
    """Transformer seq2seq mel synthesizer"""
    bnf_dim: int = 256
    speaker_dim: int = 256
    prosody_dim: int = 128
    mel_dim: int = 80
    model_dim: int = 256
    encoder_layers: int = 4
    decoder_layers: int = 4
    attention_heads: int = 4
    feedforward_dim: int = 1024
    prenet_dim: int = 256
    dropout_rate: float = 0.1
    prosody_conv_channels: int = 32
    prosody_conv_layers: int = 3
    prosody_gru_units: int = 128
    stop_threshold: float = 0.5
    max_decode_frames: int = 2000

    def __post_init__(self):
        if self.mel_dim != 80:
            raise ValidationError(f'mel_dim must be 80, got {self.mel_dim}')
        if self.model_dim % self.attention_heads != 0:
            raise ValidationError('model_dim must be divisible by attention_heads')
        if self.max_decode_frames < 1:
            raise ValidationError('max_decode_frames must be >= 1')
        if not 0.0 < self.stop_threshold < 1.0:
            raise ValidationError('stop_threshold must be in (0, 1)')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'SynthesizerConfig':
        return cls(**data)


@dataclass
class SynthesisResult:
    mel: MelSpectrogram
    stop_logits: np.ndarray
    stop_frame: Optional[int]  # None when decoding hit max_decode_frames
    truncated: bool = False


@dataclass
class Provenance:
    """Which utterance fed each model branch"""
    bnf: str
    prosody: str
    speaker: str
    bnf_speaker: Optional[str] = None
    speaker_speaker: Optional[str] = None
    checkpoints: Dict[str, Optional[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'Provenance':
        return cls(**data)


@dataclass
class ConversionRequest:
    l2_utterance: UtteranceRecord
    l1_reference: UtteranceRecord
    output_path: Optional[str] = None


@dataclass
class ConversionResult:
    waveform: Waveform
    mel: MelSpectrogram
    provenance: Provenance
    truncated: bool = False
    artifacts: List[str] = field(default_factory=list)


@dataclass
class SynthStepReport:
    """Loss and wiring of one synthesizer training step"""
    loss: float
    mel_loss: float
    stop_loss: float
    provenance: Provenance

    def to_dict(self) -> dict:
        data = asdict(self)
        data['provenance'] = self.provenance.to_dict()
        return data
