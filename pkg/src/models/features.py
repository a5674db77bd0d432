"""Feature-track models: frame sequences and their fixed geometries"""

from dataclasses import dataclass, asdict, field, replace
from typing import ClassVar, Dict, List, Optional, Tuple

import numpy as np

from src.errors import ShapeError, ValidationError

DEFAULT_TV_CHANNELS = ['LA', 'LP', 'TBCL', 'TBCD', 'TTCL', 'TTCD']
PPG_ROW_TOLERANCE = 1e-4


@dataclass
class FrameSequence:
    """Rate-stamped (num_frames x num_channels) array"""
    values: np.ndarray
    frame_rate: float
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError(
                f'{type(self).__name__} needs a 2-D array, got shape {self.values.shape}'
            )
        if not self.frame_rate > 0:
            raise ValidationError(f'frame_rate must be positive, got {self.frame_rate}')
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f'{type(self).__name__} contains non-finite values')

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.values.shape[1])

    def truncate(self, num_frames: int) -> 'FrameSequence':
        """Keep the first num_frames frames, preserving the subtype"""
        return replace(self, values=self.values[:num_frames])

    def describe(self) -> dict:
        return {
            'type': type(self).__name__,
            'frames': self.num_frames,
            'channels': self.num_channels,
            'frame_rate': self.frame_rate,
        }


@dataclass
class MelSpectrogram(FrameSequence):
    """80-channel log-mel spectrogram at 100 Hz (10 ms hop)"""
    NUM_CHANNELS: ClassVar[int] = 80
    FRAME_RATE: ClassVar[float] = 100.0

    def __post_init__(self):
        super().__post_init__()
        if self.num_channels != self.NUM_CHANNELS:
            raise ShapeError(f'mel spectrogram needs 80 channels, got {self.num_channels}')
        if self.frame_rate != self.FRAME_RATE:
            raise ValidationError(f'mel spectrogram must be 100 Hz, got {self.frame_rate}')


@dataclass
class UpstreamEmbedding(FrameSequence):
    """Self-supervised speech embeddings (1024-dim at 50 Hz by default)"""


@dataclass
class PosteriorgramTrack(FrameSequence):
    """Per-frame senone posteriors; every row is a probability distribution"""

    def __post_init__(self):
        super().__post_init__()
        if self.num_frames == 0:
            return
        if self.values.min() < 0:
            raise ValidationError('posteriorgram has negative entries')
        deviation = np.abs(self.values.sum(axis=1, dtype=np.float64) - 1.0).max()
        if deviation > PPG_ROW_TOLERANCE:
            raise ValidationError(
                f'posteriorgram rows must sum to 1 (max deviation {deviation:.2e})'
            )


@dataclass
class TractVariableTrack(FrameSequence):
    """Articulatory tract-variable trajectories, one channel per TV"""
    channel_names: List[str] = field(default_factory=lambda: list(DEFAULT_TV_CHANNELS))

    def __post_init__(self):
        super().__post_init__()
        if self.num_channels != len(self.channel_names):
            raise ShapeError(
                f'tract-variable track has {self.num_channels} channels '
                f'but {len(self.channel_names)} channel names'
            )


@dataclass
class TvNormalizationStats:
    """Per-channel training min/max and the tanh-safe target range"""
    minimum: List[float]
    maximum: List[float]
    target_range: Tuple[float, float] = (-0.95, 0.95)
    channel_names: List[str] = field(default_factory=lambda: list(DEFAULT_TV_CHANNELS))

    def __post_init__(self):
        lo, hi = self.target_range
        if not -1.0 < lo < hi < 1.0:
            raise ValidationError(f'target_range must lie inside (-1, 1), got {self.target_range}')
        self.target_range = (float(lo), float(hi))
        if len(self.minimum) != len(self.maximum) or len(self.minimum) != len(self.channel_names):
            raise ShapeError('normalization stats need one min and max per channel')
        for name, lo_c, hi_c in zip(self.channel_names, self.minimum, self.maximum):
            if not hi_c > lo_c:
                raise ValidationError(f'degenerate tract-variable channel {name}: max == min')

    @classmethod
    def from_tracks(cls, tracks: List[TractVariableTrack],
                    target_range: Tuple[float, float] = (-0.95, 0.95)) -> 'TvNormalizationStats':
        """Compute stats over training-split tracks"""
        if not tracks:
            raise ValidationError('need at least one track to compute normalization stats')
        stacked = np.concatenate([t.values for t in tracks], axis=0).astype(np.float64)
        if stacked.shape[0] == 0:
            raise ValidationError('training tracks contain no frames')
        return cls(
            minimum=stacked.min(axis=0).tolist(),
            maximum=stacked.max(axis=0).tolist(),
            target_range=target_range,
            channel_names=list(tracks[0].channel_names),
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data['target_range'] = list(self.target_range)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'TvNormalizationStats':
        data = dict(data)
        data['target_range'] = tuple(data.get('target_range', (-0.95, 0.95)))
        return cls(**data)


@dataclass
class FeatureGeometry:
    """Channel counts and frame rates expected from each provider"""
    upstream_dim: int = 1024
    upstream_rate: float = 50.0
    ppg_dim: int = 5816
    ppg_rate: float = 100.0
    tv_dim: int = 6
    tv_rate: float = 100.0
    tv_channel_names: List[str] = field(default_factory=lambda: list(DEFAULT_TV_CHANNELS))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'FeatureGeometry':
        return cls(**data)


@dataclass
class MelAnalysisConfig:
    """STFT/mel parameters: 25 ms window, 10 ms hop at 16 kHz"""
    sample_rate: int = 16000
    win_length: int = 400
    hop_length: int = 160
    n_mels: int = 80
    fmin: float = 0.0
    fmax: Optional[float] = 8000.0
    log_floor: float = 1e-10

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'MelAnalysisConfig':
        return cls(**data)
