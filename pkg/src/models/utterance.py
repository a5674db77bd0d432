"""Corpus models: manifest records, data splits and waveforms"""

from dataclasses import dataclass, asdict, field
from typing import List, Set

import numpy as np

from src.errors import ValidationError

SPLIT_TAGS = ('train', 'dev', 'test', 'heldout')


@dataclass
class UtteranceRecord:
    """One manifest line: an utterance and where its audio lives"""
    utterance_id: str
    speaker_id: str
    native_language: str
    transcript: str
    audio_path: str
    sample_rate: int
    split: str  # 'train', 'dev', 'test', 'heldout'

    def __post_init__(self):
        if not self.utterance_id:
            raise ValidationError('utterance_id must be non-empty')
        if not self.audio_path:
            raise ValidationError(f'{self.utterance_id}: audio_path must be non-empty')
        if isinstance(self.sample_rate, bool) or not isinstance(self.sample_rate, int) \
                or self.sample_rate <= 0:
            raise ValidationError(
                f'{self.utterance_id}: sample_rate must be a positive integer, got {self.sample_rate!r}'
            )
        if self.split not in SPLIT_TAGS:
            raise ValidationError(
                f'{self.utterance_id}: split must be one of {SPLIT_TAGS}, got {self.split!r}'
            )

    def to_dict(self) -> dict:
        """Convert record to dictionary"""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'UtteranceRecord':
        """Create record from dictionary"""
        return cls(**data)


@dataclass
class DataSplits:
    """Train/dev/held-out partition of a manifest"""
    train: List[UtteranceRecord] = field(default_factory=list)
    dev: List[UtteranceRecord] = field(default_factory=list)
    heldout: List[UtteranceRecord] = field(default_factory=list)
    heldout_speakers: Set[str] = field(default_factory=set)

    def seen_speakers(self) -> Set[str]:
        return {r.speaker_id for r in self.train} | {r.speaker_id for r in self.dev}

    def to_dict(self) -> dict:
        return {
            'train': [r.to_dict() for r in self.train],
            'dev': [r.to_dict() for r in self.dev],
            'heldout': [r.to_dict() for r in self.heldout],
            'heldout_speakers': sorted(self.heldout_speakers),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'DataSplits':
        return cls(
            train=[UtteranceRecord.from_dict(r) for r in data.get('train', [])],
            dev=[UtteranceRecord.from_dict(r) for r in data.get('dev', [])],
            heldout=[UtteranceRecord.from_dict(r) for r in data.get('heldout', [])],
            heldout_speakers=set(data.get('heldout_speakers', [])),
        )


@dataclass
class Waveform:
    """Mono audio samples at a fixed sample rate"""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValidationError(f'waveform must be 1-D, got shape {self.samples.shape}')
        if self.sample_rate <= 0:
            raise ValidationError(f'sample_rate must be positive, got {self.sample_rate}')
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError('waveform contains non-finite samples')

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        """Duration in seconds"""
        return self.num_samples / self.sample_rate
