"""Acoustic-model configuration, outputs and loss bookkeeping"""

from dataclasses import dataclass, asdict
from typing import Optional

from src.errors import ShapeError, ValidationError
from src.models.features import (
    FrameSequence,
    PosteriorgramTrack,
    TractVariableTrack,
    UpstreamEmbedding,
)

VARIANT_ALPHAS = {
    'ppg_only': 0.0,
    'combined': 0.4,
    'tv_only': 1.0,
}


@dataclass
class AcousticModelConfig:
    """Shared BiLSTM trunk + PPG/TV heads"""
    input_dim: int = 1024
    bilstm_hidden: int = 256
    num_bilstm_layers: int = 2
    upsample_factor: int = 2
    dropout_rate: float = 0.2
    bnf_dim: int = 256
    ppg_dim: int = 5816
    tv_dim: int = 6

    def __post_init__(self):
        for name in ('input_dim', 'bilstm_hidden', 'num_bilstm_layers',
                     'upsample_factor', 'bnf_dim', 'ppg_dim', 'tv_dim'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValidationError(f'{name} must be a positive integer, got {value!r}')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError(f'dropout_rate must be in [0, 1), got {self.dropout_rate}')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'AcousticModelConfig':
        return cls(**data)


@dataclass
class LossWeights:
    """alpha weights the TV loss, (1 - alpha) the PPG loss"""
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f'alpha must be in [0, 1], got {self.alpha}')

    @classmethod
    def for_variant(cls, name: str) -> 'LossWeights':
        if name not in VARIANT_ALPHAS:
            raise ValidationError(
                f'unknown variant "{name}", expected one of {sorted(VARIANT_ALPHAS)}'
            )
        return cls(alpha=VARIANT_ALPHAS[name])


@dataclass
class CombinedLossReport:
    tv_loss: float
    ppg_loss: float
    combined: float
    alpha: float

    @classmethod
    def from_parts(cls, tv_loss: float, ppg_loss: float, weights: LossWeights) -> 'CombinedLossReport':
        tv_loss, ppg_loss = float(tv_loss), float(ppg_loss)
        return cls(
            tv_loss=tv_loss,
            ppg_loss=ppg_loss,
            combined=weights.alpha * tv_loss + (1.0 - weights.alpha) * ppg_loss,
            alpha=weights.alpha,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BottleneckFeatures:
    """Trunk activations tapped after the shared fully connected layer"""
    values: FrameSequence
    source_utterance_id: Optional[str] = None

    @property
    def num_frames(self) -> int:
        return self.values.num_frames

    @property
    def dim(self) -> int:
        return self.values.num_channels


@dataclass
class MultiTaskOutput:
    ppg_logits: FrameSequence
    tv_estimates: FrameSequence
    bnf: BottleneckFeatures

    def __post_init__(self):
        frames = {self.ppg_logits.num_frames, self.tv_estimates.num_frames, self.bnf.num_frames}
        if len(frames) != 1:
            raise ShapeError(f'multi-task heads disagree on frame count: {sorted(frames)}')

    @property
    def num_frames(self) -> int:
        return self.ppg_logits.num_frames


@dataclass
class AcousticExample:
    """One training segment: upstream input with paired PPG/TV targets"""
    utterance_id: str
    upstream: UpstreamEmbedding
    ppg_target: PosteriorgramTrack
    tv_target: TractVariableTrack

    def __post_init__(self):
        if self.ppg_target.num_frames != self.tv_target.num_frames:
            raise ShapeError(
                f'{self.utterance_id}: PPG and TV targets differ in length '
                f'({self.ppg_target.num_frames} vs {self.tv_target.num_frames})'
            )
