"""Objective-evaluation result models"""

from dataclasses import dataclass, asdict, field
from typing import Dict, List

import numpy as np

from src.errors import ValidationError


@dataclass
class MelCepstra:
    values: np.ndarray  # frames x (order + 1)
    order: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.order < 1:
            raise ValidationError(f'cepstral order must be >= 1, got {self.order}')
        if self.values.ndim != 2 or self.values.shape[1] != self.order + 1:
            raise ValidationError(
                f'cepstra must have shape (frames, {self.order + 1}), got {self.values.shape}'
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError('cepstra contain non-finite values')

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])


@dataclass
class Alignment:
    """Monotone DTW path as (i, j) pairs from (0, 0) to the end"""
    path: List[tuple]
    total_cost: float

    @property
    def length(self) -> int:
        return len(self.path)


@dataclass
class MCDResult:
    mcd_db: float
    aligned_frames: int
    path_length: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WERResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    wer_percent: float

    @classmethod
    def from_counts(cls, substitutions: int, deletions: int, insertions: int,
                    ref_words: int) -> 'WERResult':
        if ref_words < 1:
            raise ValidationError('reference must contain at least one word')
        errors = substitutions + deletions + insertions
        return cls(substitutions, deletions, insertions, ref_words, 100.0 * errors / ref_words)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CentroidReport:
    distances: Dict[str, float] = field(default_factory=dict)
    mean: float = 0.0
    std: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricRecord:
    """One line of a metric report"""
    utterance_id: str
    speaker_id: str
    metric: str
    value: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricRecord':
        return cls(**data)
