"""Provider interfaces for the pretrained components

Every large pretrained model (upstream embedder, PPG extractor, speech inversion,
speaker encoder, vocoder, ASR) sits behind one of these interfaces. A provider
must be initialized before use; calls on an uninitialized provider raise
ProviderStateError, and any failure inside the provider is re-raised as
ProviderError carrying the utterance/branch context.

Providers that are not safe for concurrent calls set ``single_consumer = True``;
their calls are serialized with a lock.
"""

import logging
import threading
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional, Tuple, Type, Union

import numpy as np

from src.errors import FacError, ProviderError, ProviderStateError, ValidationError
from src.models.features import MelSpectrogram
from src.models.utterance import UtteranceRecord, Waveform

logger = logging.getLogger(__name__)


class Provider(ABC):
    role = ''
    provider_id = 'base'
    single_consumer = False
    max_concurrency: Optional[int] = None

    def __init__(self, checkpoint: Optional[str] = None, **options):
        self.checkpoint = checkpoint
        self.options = options
        self._initialized = False
        self._lock = threading.Lock()

    @property
    def initialized(self) -> bool:
        return self._initialized

    def initialize(self) -> 'Provider':
        """Load weights (if any) and mark the provider ready"""
        if not self._initialized:
            self._load()
            self._initialized = True
            logger.debug('initialized %s provider %s', self.role, self.provider_id)
        return self

    def _load(self):
        pass

    def invoke(self, fn: Callable, *args, utterance_id: Optional[str] = None,
               branch: Optional[str] = None):
        """Run fn under the provider's state and concurrency contract"""
        if not self._initialized:
            raise ProviderStateError(f'{self.role} provider "{self.provider_id}" is not initialized')
        try:
            if self.single_consumer:
                with self._lock:
                    return fn(*args)
            return fn(*args)
        except FacError:
            raise
        except Exception as e:
            logger.warning('%s provider %s failed: %s', self.role, self.provider_id, e)
            raise ProviderError(self.provider_id, str(e), utterance_id=utterance_id,
                                branch=branch) from e

    def describe(self) -> dict:
        return {
            'role': self.role,
            'id': self.provider_id,
            'checkpoint': self.checkpoint,
            'single_consumer': self.single_consumer,
        }


class FrameProvider(Provider):
    """Provider emitting a (frames x channels) track at a nominal rate"""
    frame_rate: float = 100.0
    edge_behavior = 'floor'  # how a partial trailing frame is treated

    def extract(self, wave: Waveform, utterance_id: Optional[str] = None) -> np.ndarray:
        return self.invoke(self._extract, wave, utterance_id=utterance_id, branch=self.role)

    @abstractmethod
    def _extract(self, wave: Waveform) -> np.ndarray:
        ...


class UpstreamProvider(FrameProvider):
    role = 'upstream'
    frame_rate = 50.0


class PpgProvider(FrameProvider):
    role = 'ppg'


class TvProvider(FrameProvider):
    role = 'tv'


class SpeakerEncoderProvider(Provider):
    role = 'speaker'
    dim = 256
    accepts = 'mel'  # 'mel' or 'waveform'

    def embed(self, source: Union[Waveform, MelSpectrogram],
              record: Optional[UtteranceRecord] = None) -> np.ndarray:
        utterance_id = record.utterance_id if record is not None else None
        return self.invoke(self._embed, source, record, utterance_id=utterance_id, branch='speaker')

    @abstractmethod
    def _embed(self, source, record: Optional[UtteranceRecord]) -> np.ndarray:
        ...

    def parameters(self):
        """Trainable tensors, if the encoder has any"""
        return iter(())


class VocoderProvider(Provider):
    role = 'vocoder'
    sample_rate = 16000
    hop_length = 160

    def vocode(self, mel: MelSpectrogram) -> np.ndarray:
        return self.invoke(self._vocode, mel, branch='vocoder')

    @abstractmethod
    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        ...


class TranscriberProvider(Provider):
    role = 'transcriber'
    max_concurrency = 4

    def transcribe(self, wave: Waveform, record: Optional[UtteranceRecord] = None) -> str:
        utterance_id = record.utterance_id if record is not None else None
        return self.invoke(self._transcribe, wave, record, utterance_id=utterance_id,
                           branch='transcriber')

    @abstractmethod
    def _transcribe(self, wave: Waveform, record: Optional[UtteranceRecord]) -> str:
        ...


PROVIDER_REGISTRY: Dict[Tuple[str, str], Type[Provider]] = {}


def register_provider(cls: Type[Provider]) -> Type[Provider]:
    """Class decorator adding a provider under (role, provider_id)"""
    PROVIDER_REGISTRY[(cls.role, cls.provider_id)] = cls
    return cls


def create_provider(role: str, provider_id: str, checkpoint: Optional[str] = None,
                    initialize: bool = True, **options) -> Provider:
    """Instantiate (and by default initialize) a registered provider"""
    # mock providers register on import
    import src.providers.mock  # noqa: F401

    cls = PROVIDER_REGISTRY.get((role, provider_id))
    if cls is None:
        known = sorted(pid for r, pid in PROVIDER_REGISTRY if r == role)
        raise ValidationError(f'unknown {role} provider "{provider_id}"; known: {known}')
    provider = cls(checkpoint=checkpoint, **options)
    return provider.initialize() if initialize else provider
