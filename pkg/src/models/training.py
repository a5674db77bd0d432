"""Training models: optimizer/schedule specs, early stopping, history, grids"""

import math
from dataclasses import dataclass, asdict, field
from typing import List, Optional

from src.errors import ValidationError


@dataclass
class OptimizerSpec:
    algorithm: str = 'adam'
    learning_rate: float = 1e-4
    batch_size: int = 8
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.algorithm.lower() != 'adam':
            raise ValidationError(f'only the adam optimizer is supported, got {self.algorithm}')
        if not self.learning_rate > 0:
            raise ValidationError(f'learning_rate must be positive, got {self.learning_rate}')
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValidationError(f'batch_size must be >= 1, got {self.batch_size}')
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['betas'] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'OptimizerSpec':
        return cls(**data)


@dataclass
class ScheduleSpec:
    """Exponential decay applied once per epoch"""
    kind: str = 'exponential'
    decay_factor: float = 0.5

    def __post_init__(self):
        if self.kind != 'exponential':
            raise ValidationError(f'only exponential decay is supported, got {self.kind}')
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValidationError(f'decay_factor must be in (0, 1], got {self.decay_factor}')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'ScheduleSpec':
        return cls(**data)


@dataclass
class EarlyStopState:
    best_val_loss: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    patience: int = 6
    epoch: int = -1  # last epoch observed

    def __post_init__(self):
        if self.patience < 0:
            raise ValidationError(f'patience must be >= 0, got {self.patience}')


@dataclass
class EpochRecord:
    """One line of the training history"""
    epoch: int
    train_loss: float
    val_loss: float
    tv_loss: float
    ppg_loss: float
    lr: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'EpochRecord':
        return cls(**data)


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, record: EpochRecord):
        self.epochs.append(record)

    @property
    def val_losses(self) -> List[float]:
        return [e.val_loss for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            'epochs': [e.to_dict() for e in self.epochs],
            'best_epoch': self.best_epoch,
            'stopped_early': self.stopped_early,
        }


@dataclass
class GridSearchSpace:
    alpha_grid: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0])
    lr_grid: List[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 3e-4])
    batch_grid: List[int] = field(default_factory=lambda: [4, 8, 12, 16])

    def __post_init__(self):
        for name in ('alpha_grid', 'lr_grid', 'batch_grid'):
            if not getattr(self, name):
                raise ValidationError(f'{name} must be non-empty')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'GridSearchSpace':
        return cls(**data)


@dataclass
class AlphaCandidate:
    """Dev-set metrics of one alpha in the grid"""
    alpha: float
    tv_ppmc: float
    ppg_rmse: float
    score: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlphaSelectionReport:
    candidates: List[AlphaCandidate]
    selected_alpha: float

    def to_dict(self) -> dict:
        return {
            'candidates': [c.to_dict() for c in self.candidates],
            'selected_alpha': self.selected_alpha,
        }


@dataclass
class HyperparameterCandidate:
    learning_rate: float
    batch_size: int
    best_val_loss: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HyperparameterReport:
    candidates: List[HyperparameterCandidate]
    selected_learning_rate: float
    selected_batch_size: int

    def to_dict(self) -> dict:
        return {
            'candidates': [c.to_dict() for c in self.candidates],
            'selected_learning_rate': self.selected_learning_rate,
            'selected_batch_size': self.selected_batch_size,
        }
