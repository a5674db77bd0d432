"""Pipeline configuration: one JSON document parsed into nested dataclasses"""

import json
import logging
import os
from dataclasses import dataclass, asdict, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from src.errors import ConfigError, FacError
from src.models.acoustic import AcousticModelConfig
from src.models.conversion import SynthesizerConfig
from src.models.features import FeatureGeometry, MelAnalysisConfig
from src.models.training import OptimizerSpec, ScheduleSpec

logger = logging.getLogger(__name__)

CACHE_DIR_ENV = 'FAC_CACHE_DIR'
PROVIDER_ROLES = ('upstream', 'ppg', 'tv', 'speaker', 'vocoder', 'transcriber')


@dataclass
class ProviderSpec:
    """Which provider implementation serves a role, and its weights"""
    id: str = 'mock'
    checkpoint: Optional[str] = None
    options: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'ProviderSpec':
        return cls(**data)


def _default_providers() -> Dict[str, ProviderSpec]:
    return {
        'upstream': ProviderSpec('mock'),
        'ppg': ProviderSpec('mock-softmax'),
        'tv': ProviderSpec('mock-sine'),
        'speaker': ProviderSpec('mock-linear'),
        'vocoder': ProviderSpec('mock-sine'),
        'transcriber': ProviderSpec('mock-echo'),
    }


@dataclass
class CorpusConfig:
    manifest: Optional[str] = None
    heldout_speakers: List[str] = field(default_factory=lambda: ['NJS', 'TXHC', 'YKWK', 'ZHAA'])
    l1_speaker: str = 'BDL'
    segment_seconds: float = 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'CorpusConfig':
        return cls(**data)


@dataclass
class CheckpointConfig:
    acoustic_model: Optional[str] = None
    synthesizer: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'CheckpointConfig':
        return cls(**data)


@dataclass
class PipelineConfig:
    seed: int = 0
    variant: str = 'combined'
    patience: int = 6
    max_epochs: int = 100
    ppg_target_form: str = 'soft'  # 'soft' posteriors or 'hard' one-hot senones
    tv_target_range: List[float] = field(default_factory=lambda: [-0.95, 0.95])
    num_workers: int = 0
    output_dir: str = 'runs'
    geometry: FeatureGeometry = field(default_factory=FeatureGeometry)
    mel: MelAnalysisConfig = field(default_factory=MelAnalysisConfig)
    acoustic_model: AcousticModelConfig = field(default_factory=AcousticModelConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    synthesizer: SynthesizerConfig = field(default_factory=SynthesizerConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    checkpoints: CheckpointConfig = field(default_factory=CheckpointConfig)
    providers: Dict[str, ProviderSpec] = field(default_factory=_default_providers)

    _SECTIONS = {
        'geometry': FeatureGeometry,
        'mel': MelAnalysisConfig,
        'acoustic_model': AcousticModelConfig,
        'optimizer': OptimizerSpec,
        'schedule': ScheduleSpec,
        'synthesizer': SynthesizerConfig,
        'corpus': CorpusConfig,
        'checkpoints': CheckpointConfig,
    }

    @property
    def cache_dir(self) -> Optional[str]:
        return os.getenv(CACHE_DIR_ENV) or None

    def validate(self) -> 'PipelineConfig':
        """Cross-field checks; raises ConfigError naming the first bad field"""
        if self.variant not in ('ppg_only', 'tv_only', 'combined'):
            raise ConfigError('variant', f'unknown variant "{self.variant}"')
        if self.patience < 0:
            raise ConfigError('patience', 'must be >= 0')
        if self.max_epochs < 1:
            raise ConfigError('max_epochs', 'must be >= 1')
        if self.ppg_target_form not in ('soft', 'hard'):
            raise ConfigError('ppg_target_form', 'must be "soft" or "hard"')
        lo, hi = self.tv_target_range
        if not -1.0 < lo < hi < 1.0:
            raise ConfigError('tv_target_range', 'must lie strictly inside (-1, 1)')
        am, geo = self.acoustic_model, self.geometry
        if am.input_dim != geo.upstream_dim:
            raise ConfigError('acoustic_model.input_dim', 'must equal geometry.upstream_dim')
        if am.ppg_dim != geo.ppg_dim:
            raise ConfigError('acoustic_model.ppg_dim', 'must equal geometry.ppg_dim')
        if am.tv_dim != geo.tv_dim or len(geo.tv_channel_names) != geo.tv_dim:
            raise ConfigError('acoustic_model.tv_dim', 'must equal geometry.tv_dim and the channel-name count')
        if geo.upstream_rate * am.upsample_factor != geo.ppg_rate:
            raise ConfigError('acoustic_model.upsample_factor',
                              'upstream_rate x upsample_factor must equal the target frame rate')
        if self.synthesizer.bnf_dim != am.bnf_dim:
            raise ConfigError('synthesizer.bnf_dim', 'must equal acoustic_model.bnf_dim')
        if self.corpus.segment_seconds <= 0:
            raise ConfigError('corpus.segment_seconds', 'must be positive')
        if self.mel.win_length < 1 or self.mel.hop_length < 1:
            raise ConfigError('mel', 'window and hop must be positive')
        if self.mel.sample_rate / self.mel.hop_length != 100:
            raise ConfigError('mel.hop_length', 'hop must give a 100 Hz frame rate')
        missing = [role for role in PROVIDER_ROLES if role not in self.providers]
        if missing:
            raise ConfigError(f'providers.{missing[0]}', 'provider role is not configured')
        return self

    def to_dict(self) -> dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == 'providers':
                data[f.name] = {role: spec.to_dict() for role, spec in value.items()}
            elif hasattr(value, 'to_dict'):
                data[f.name] = value.to_dict()
            else:
                data[f.name] = list(value) if isinstance(value, tuple) else value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'PipelineConfig':
        """Parse and validate; every failure surfaces as ConfigError(field)"""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], 'unknown configuration key')
        kwargs = {}
        for key, value in data.items():
            section = cls._SECTIONS.get(key)
            try:
                if section is not None:
                    if not isinstance(value, dict):
                        raise ConfigError(key, 'must be an object')
                    kwargs[key] = section.from_dict(value)
                elif key == 'providers':
                    providers = _default_providers()
                    providers.update({role: ProviderSpec.from_dict(spec) for role, spec in value.items()})
                    kwargs[key] = providers
                else:
                    kwargs[key] = value
            except ConfigError:
                raise
            except (FacError, TypeError, ValueError) as e:
                raise ConfigError(key, str(e)) from e
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> 'PipelineConfig':
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError('config', f'file not found: {config_path}')
        try:
            with open(config_path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError('config', f'invalid JSON in {config_path}: {e}') from e
        config = cls.from_dict(data)
        logger.debug('loaded pipeline config from %s', config_path)
        return config

    def save(self, path):
        config_path = Path(path)
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
