"""Conversion Service - Synthesizer training (A/B/C wiring) and reference-based accent conversion"""

import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit
from torch.optim.lr_scheduler import ExponentialLR

from src.errors import (
    ProviderError,
    ShapeError,
    TrainingDivergenceError,
    ValidationError,
    WiringError,
)
from src.models.acoustic import BottleneckFeatures
from src.models.conversion import (
    ConversionRequest,
    ConversionResult,
    ProsodyEmbedding,
    Provenance,
    SpeakerEmbedding,
    SynthesisResult,
    SynthesizerConfig,
    SynthStepReport,
)
from src.models.features import FrameSequence, MelSpectrogram
from src.models.training import EarlyStopState, OptimizerSpec, ScheduleSpec
from src.models.utterance import UtteranceRecord, Waveform
from src.networks.prosody_encoder import ProsodyReferenceEncoder
from src.networks.synthesizer import MelSynthesizerNetwork
from src.providers.base import SpeakerEncoderProvider, VocoderProvider, create_provider
from src.services import acoustic_service, corpus_service, feature_cache
from src.services.acoustic_service import AcousticModel
from src.services.feature_service import FeatureService
from src.services.trainer_service import STOP, early_stop_update

logger = logging.getLogger(__name__)

TEACHER_FORCED = 'teacher_forced'
AUTOREGRESSIVE = 'autoregressive'
CONFIG_FILE = 'config.json'
PARAMETERS_FILE = 'parameters.pt'
PROVENANCE_SUFFIX = '.provenance.json'


class Synthesizer:
    """Prosody encoder + seq2seq mel synthesizer, the trainable half of the conversion stage"""

    def __init__(self, config: SynthesizerConfig, seed: int = 0):
        self.config = config
        # Seeded weights without touching the caller's global RNG
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.network = MelSynthesizerNetwork(config)
            self.prosody_encoder = ProsodyReferenceEncoder(config)
        self.metadata = {'init_seed': seed}

    def trainable_parameters(self) -> List[torch.nn.Parameter]:
        return list(self.prosody_encoder.parameters()) + list(self.network.parameters())

    def train(self):
        self.network.train()
        self.prosody_encoder.train()

    def eval(self):
        self.network.eval()
        self.prosody_encoder.eval()

    def encode_prosody(self, mel: FrameSequence, utterance_id: Optional[str] = None) -> ProsodyEmbedding:
        return encode_prosody(mel, self, utterance_id)

    def synthesize(self, bnf: BottleneckFeatures, speaker: SpeakerEmbedding, prosody: ProsodyEmbedding,
                   mode: str = AUTOREGRESSIVE, target_mel: Optional[MelSpectrogram] = None) -> SynthesisResult:
        return synthesize(bnf, speaker, prosody, self, mode, target_mel)

    def save_checkpoint(self, directory, training: Optional[dict] = None) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / CONFIG_FILE, 'w') as f:
            json.dump({'synthesizer': self.config.to_dict(),
                       'training': {**self.metadata, **(training or {})}}, f, indent=2)
        torch.save({
            'synthesizer': self.network.state_dict(),
            'prosody_encoder': self.prosody_encoder.state_dict(),
        }, out / PARAMETERS_FILE)
        logger.info('saved synthesizer checkpoint to %s', out)
        return out

    @classmethod
    def load_checkpoint(cls, directory) -> 'Synthesizer':
        source, document, state = acoustic_service.read_checkpoint(directory, 'synthesizer')
        with acoustic_service.checkpoint_errors('synthesizer', source):
            synthesizer = cls(SynthesizerConfig.from_dict(document['synthesizer']))
            synthesizer.network.load_state_dict(state['synthesizer'])
            synthesizer.prosody_encoder.load_state_dict(state['prosody_encoder'])
        synthesizer.metadata = {**document.get('training', {}), 'checkpoint': str(source)}
        return synthesizer


def _mel_tensor(mel: FrameSequence) -> torch.Tensor:
    return torch.as_tensor(np.asarray(mel.values), dtype=torch.float32).unsqueeze(0)


def encode_prosody(mel: FrameSequence, synthesizer: Synthesizer,
                   utterance_id: Optional[str] = None) -> ProsodyEmbedding:
    """Fixed-length prosody vector from a (non-empty) log-mel"""
    if mel.num_frames == 0:
        raise ValidationError('cannot encode prosody from an empty mel spectrogram')
    if mel.num_channels != MelSpectrogram.NUM_CHANNELS:
        raise ShapeError(f'prosody encoder expects 80 mel channels, got {mel.num_channels}')
    synthesizer.prosody_encoder.eval()
    with torch.no_grad():
        vector = synthesizer.prosody_encoder(_mel_tensor(mel))[0].numpy()
    return ProsodyEmbedding(vector, utterance_id or mel.metadata.get('utterance_id'))


def encode_speaker(utterance: Union[Waveform, FrameSequence], provider: SpeakerEncoderProvider,
                   record: Optional[UtteranceRecord] = None,
                   utterance_id: Optional[str] = None) -> SpeakerEmbedding:
    """Speaker vector from the frozen pretrained encoder"""
    with torch.no_grad():
        vector = provider.embed(utterance, record)
    source = utterance_id or (record.utterance_id if record is not None else 'unknown')
    embedding = SpeakerEmbedding(vector, source)
    if embedding.dim != provider.dim:
        raise ShapeError(f'speaker encoder "{provider.provider_id}" returned {embedding.dim} dims, '
                         f'declared {provider.dim}')
    return embedding


def check_dims(bnf: BottleneckFeatures, speaker: SpeakerEmbedding, prosody: Optional[ProsodyEmbedding],
               config: SynthesizerConfig):
    if bnf.dim != config.bnf_dim:
        raise ShapeError(f'BNF dim {bnf.dim} does not match synthesizer bnf_dim {config.bnf_dim}')
    if speaker.dim != config.speaker_dim:
        raise ShapeError(f'speaker dim {speaker.dim} does not match synthesizer speaker_dim {config.speaker_dim}')
    if prosody is not None and prosody.dim != config.prosody_dim:
        raise ShapeError(f'prosody dim {prosody.dim} does not match synthesizer prosody_dim {config.prosody_dim}')
    if bnf.num_frames == 0:
        raise ValidationError('cannot synthesize from zero BNF frames')


def _first_stop(stop_logits: np.ndarray, threshold: float) -> Optional[int]:
    fired = np.flatnonzero(expit(stop_logits) > threshold)
    return int(fired[0]) if fired.size else None


def synthesize(bnf: BottleneckFeatures, speaker: SpeakerEmbedding, prosody: ProsodyEmbedding,
               synthesizer: Synthesizer, mode: str = AUTOREGRESSIVE,
               target_mel: Optional[FrameSequence] = None) -> SynthesisResult:
    """Teacher-forced (exact target length) or autoregressive (stop head / frame cap) synthesis"""
    config = synthesizer.config
    check_dims(bnf, speaker, prosody, config)
    bnf_t = torch.as_tensor(np.asarray(bnf.values.values), dtype=torch.float32).unsqueeze(0)
    spk_t = torch.as_tensor(speaker.vector, dtype=torch.float32).unsqueeze(0)
    pros_t = torch.as_tensor(prosody.vector, dtype=torch.float32).unsqueeze(0)
    metadata = {'bnf_source': bnf.source_utterance_id or '', 'mode': mode}
    synthesizer.network.eval()

    if mode == TEACHER_FORCED:
        if target_mel is None:
            raise ValidationError('teacher-forced synthesis needs a target mel')
        if target_mel.num_frames == 0:
            raise ValidationError('teacher-forced synthesis needs a non-empty target mel')
        if target_mel.num_channels != config.mel_dim:
            raise ShapeError(f'target mel has {target_mel.num_channels} channels, expected {config.mel_dim}')
        with torch.no_grad():
            mel, stop = synthesizer.network(bnf_t, spk_t, pros_t, _mel_tensor(target_mel))
        stop_logits = stop[0].numpy()
        return SynthesisResult(MelSpectrogram(mel[0].numpy(), MelSpectrogram.FRAME_RATE, metadata),
                               stop_logits, _first_stop(stop_logits, config.stop_threshold))

    if mode != AUTOREGRESSIVE:
        raise ValidationError(f'unknown synthesis mode "{mode}"')
    mel, stop, stop_frame = synthesizer.network.infer(bnf_t, spk_t, pros_t, config.max_decode_frames,
                                                      config.stop_threshold)
    truncated = stop_frame is None
    if truncated:
        logger.warning('decoding hit max_decode_frames=%d without a stop; output truncated',
                       config.max_decode_frames)
    return SynthesisResult(MelSpectrogram(mel[0].numpy(), MelSpectrogram.FRAME_RATE, metadata),
                           stop[0].numpy(), stop_frame, truncated)


def vocode(mel: FrameSequence, provider: VocoderProvider) -> Waveform:
    """Mel -> waveform at the vocoder's native rate"""
    if mel.num_channels != MelSpectrogram.NUM_CHANNELS:
        raise ShapeError(f'vocoder expects 80 mel channels, got {mel.num_channels}')
    if not isinstance(mel, MelSpectrogram):
        mel = MelSpectrogram(mel.values, mel.frame_rate, dict(mel.metadata))
    samples = provider.vocode(mel)
    return Waveform(np.asarray(samples, dtype=np.float32), provider.sample_rate)


class BnfExtractor:
    """Upstream embeddings of a record through the frozen acoustic model"""

    def __init__(self, features: FeatureService, acoustic_model: AcousticModel, bnf_dir: Optional[str] = None):
        self.features = features
        self.acoustic_model = acoustic_model
        self.bnf_dir = Path(bnf_dir) if bnf_dir else None

    def extract(self, record: UtteranceRecord, wave: Optional[Waveform] = None) -> BottleneckFeatures:
        if self.bnf_dir is not None:
            cached = self.bnf_dir / f'{record.utterance_id}{feature_cache.CACHE_SUFFIX}'
            if cached.exists():
                return BottleneckFeatures(feature_cache.read_feature_cache(cached), record.utterance_id)
        embeddings = self.features.upstream(record, wave)
        bnf = acoustic_service.extract_bnf(embeddings, self.acoustic_model)
        bnf.source_utterance_id = record.utterance_id
        return bnf


def check_training_pair(utterance_a: UtteranceRecord, utterance_c: UtteranceRecord):
    """A feeds BNF and prosody, C (same speaker, different utterance) feeds the speaker encoder"""
    if utterance_a.utterance_id == utterance_c.utterance_id:
        raise WiringError(f'speaker utterance must differ from the content utterance ({utterance_a.utterance_id})')
    if utterance_a.speaker_id != utterance_c.speaker_id:
        raise WiringError(f'speaker utterance {utterance_c.utterance_id} ({utterance_c.speaker_id}) is not from '
                          f'speaker {utterance_a.speaker_id}')


class SynthesizerTrainer:
    """Trains prosody encoder + synthesizer; the acoustic model and speaker encoder stay frozen"""

    def __init__(self, synthesizer: Synthesizer, bnf_extractor: BnfExtractor,
                 speaker_provider: SpeakerEncoderProvider, features: FeatureService,
                 optimizer: Optional[OptimizerSpec] = None, schedule: Optional[ScheduleSpec] = None,
                 seed: int = 0, patience: int = 6, max_epochs: int = 100):
        self.synthesizer = synthesizer
        self.bnf_extractor = bnf_extractor
        self.speaker_provider = speaker_provider
        self.features = features
        self.optimizer_spec = optimizer or OptimizerSpec()
        self.schedule = schedule or ScheduleSpec()
        self.seed = seed
        self.patience = patience
        self.max_epochs = max_epochs
        self.optimizer = torch.optim.Adam(self.synthesizer.trainable_parameters(),
                                          lr=self.optimizer_spec.learning_rate,
                                          betas=self.optimizer_spec.betas, eps=self.optimizer_spec.eps)
        self._inputs: Dict[str, tuple] = {}

    def _speaker(self, record: UtteranceRecord) -> SpeakerEmbedding:
        wave = self.features.load_waveform(record)
        source = self.features.mel(record, wave) if self.speaker_provider.accepts == 'mel' else wave
        return encode_speaker(source, self.speaker_provider, record)

    def _step_inputs(self, utterance_a: UtteranceRecord, utterance_c: UtteranceRecord):
        check_training_pair(utterance_a, utterance_c)
        bnf = self.bnf_extractor.extract(utterance_a)
        mel = self.features.mel(utterance_a)
        speaker = self._speaker(utterance_c)
        check_dims(bnf, speaker, None, self.synthesizer.config)
        provenance = Provenance(
            bnf=utterance_a.utterance_id,
            prosody=utterance_a.utterance_id,
            speaker=speaker.source_utterance_id,
            bnf_speaker=utterance_a.speaker_id,
            speaker_speaker=utterance_c.speaker_id,
        )
        return bnf, mel, speaker, provenance

    def _losses(self, bnf: BottleneckFeatures, mel: FrameSequence, speaker: SpeakerEmbedding):
        target = _mel_tensor(mel)
        prosody = self.synthesizer.prosody_encoder(target)
        predicted, stop_logits = self.synthesizer.network(
            torch.as_tensor(np.asarray(bnf.values.values), dtype=torch.float32).unsqueeze(0),
            torch.as_tensor(speaker.vector, dtype=torch.float32).unsqueeze(0),
            prosody,
            target,
        )
        stop_target = torch.zeros_like(stop_logits)
        stop_target[:, -1] = 1.0
        mel_loss = F.l1_loss(predicted, target)
        stop_loss = F.binary_cross_entropy_with_logits(stop_logits, stop_target)
        return mel_loss + stop_loss, mel_loss, stop_loss

    def train_step(self, utterance_a: UtteranceRecord, utterance_c: UtteranceRecord) -> SynthStepReport:
        """One update: L1 mel reconstruction of A plus stop loss"""
        bnf, mel, speaker, provenance = self._step_inputs(utterance_a, utterance_c)
        self.synthesizer.train()
        self.optimizer.zero_grad()
        loss, mel_loss, stop_loss = self._losses(bnf, mel, speaker)
        if not torch.isfinite(loss):
            raise TrainingDivergenceError(f'synthesizer loss is {loss.item()} on {utterance_a.utterance_id}')
        loss.backward()
        self.optimizer.step()
        return SynthStepReport(loss.item(), mel_loss.item(), stop_loss.item(), provenance)

    def evaluate_pair(self, utterance_a: UtteranceRecord, utterance_c: UtteranceRecord) -> float:
        bnf, mel, speaker, _ = self._step_inputs(utterance_a, utterance_c)
        self.synthesizer.eval()
        with torch.no_grad():
            loss, _, _ = self._losses(bnf, mel, speaker)
        return loss.item()

    def fit(self, train: List[UtteranceRecord], dev: Optional[List[UtteranceRecord]] = None) -> List[dict]:
        """Epochs over freshly sampled (A, C) pairs; early stopping on dev loss when dev is given"""
        if not train:
            raise ValidationError('synthesizer training needs training utterances')
        torch.manual_seed(self.seed)
        scheduler = ExponentialLR(self.optimizer, gamma=self.schedule.decay_factor)
        state = EarlyStopState(patience=self.patience)
        best = self._snapshot()
        history = []
        for epoch in range(self.max_epochs):
            lr = self.optimizer.param_groups[0]['lr']
            pairs = corpus_service.sample_training_pairs(train, seed=self.seed + epoch)
            if not pairs:
                raise ValidationError('no speaker has two or more training utterances')
            reports = [self.train_step(a, c) for a, c in pairs]
            train_loss = float(np.mean([r.loss for r in reports]))
            entry = {'epoch': epoch, 'train_loss': train_loss, 'lr': lr,
                     'mel_loss': float(np.mean([r.mel_loss for r in reports])),
                     'stop_loss': float(np.mean([r.stop_loss for r in reports]))}
            val_loss = train_loss
            if dev:
                dev_pairs = corpus_service.sample_training_pairs(dev, seed=self.seed)
                if dev_pairs:
                    val_loss = float(np.mean([self.evaluate_pair(a, c) for a, c in dev_pairs]))
            entry['val_loss'] = val_loss
            history.append(entry)
            logger.info('synth epoch %d: train %.4f val %.4f lr %.3g', epoch, train_loss, val_loss, lr)
            state, decision = early_stop_update(state, val_loss)
            if state.best_epoch == epoch:
                best = self._snapshot()
            if decision == STOP:
                break
            scheduler.step()
        self._restore(best)
        self.synthesizer.metadata.update({'best_epoch': state.best_epoch, 'epochs_run': len(history)})
        return history

    def _snapshot(self) -> dict:
        return {
            'synthesizer': copy.deepcopy(self.synthesizer.network.state_dict()),
            'prosody_encoder': copy.deepcopy(self.synthesizer.prosody_encoder.state_dict()),
        }

    def _restore(self, snapshot: dict):
        self.synthesizer.network.load_state_dict(snapshot['synthesizer'])
        self.synthesizer.prosody_encoder.load_state_dict(snapshot['prosody_encoder'])


def build_speaker_provider(config) -> SpeakerEncoderProvider:
    spec = config.providers['speaker']
    options = {'dim': config.synthesizer.speaker_dim, **spec.options}
    return create_provider('speaker', spec.id, checkpoint=spec.checkpoint, **options)


def build_vocoder(config) -> VocoderProvider:
    spec = config.providers['vocoder']
    options = {'sample_rate': config.mel.sample_rate, 'hop_length': config.mel.hop_length, **spec.options}
    return create_provider('vocoder', spec.id, checkpoint=spec.checkpoint, **options)


@contextmanager
def _branch(name: str, utterance_id: Optional[str]):
    """Re-tag provider failures with the conversion branch they happened in"""
    try:
        yield
    except ProviderError as e:
        raise ProviderError(e.provider_id, str(e.__cause__ or e), utterance_id=utterance_id, branch=name) from e


def provenance_path(output_path) -> Path:
    out = Path(output_path)
    return out.with_name(out.stem + PROVENANCE_SUFFIX)


class ConversionPipeline:
    """Reference-based conversion: BNFs from the L1 reference, prosody and voice from the L2 utterance"""

    def __init__(self, features: FeatureService, bnf_extractor, synthesizer,
                 speaker_provider: SpeakerEncoderProvider, vocoder: VocoderProvider,
                 l1_speaker: Optional[str] = None, checkpoints: Optional[Dict[str, Optional[str]]] = None):
        self.features = features
        self.bnf_extractor = bnf_extractor
        self.synthesizer = synthesizer
        self.speaker_provider = speaker_provider
        self.vocoder = vocoder
        self.l1_speaker = l1_speaker
        self.checkpoints = checkpoints or {}

    @classmethod
    def from_config(cls, config, l1_speaker: Optional[str] = None) -> 'ConversionPipeline':
        """Wire providers and checkpoints named in a PipelineConfig

        Missing checkpoints fall back to seeded, untrained models so the wiring can be exercised.
        """
        features = FeatureService.from_config(config)
        checkpoints = config.checkpoints
        if checkpoints.acoustic_model:
            acoustic_model = acoustic_service.load_checkpoint(checkpoints.acoustic_model)
        else:
            logger.warning('no acoustic model checkpoint configured; using an untrained model')
            acoustic_model = AcousticModel(config.acoustic_model).initialize(config.seed)
        if checkpoints.synthesizer:
            synthesizer = Synthesizer.load_checkpoint(checkpoints.synthesizer)
        else:
            logger.warning('no synthesizer checkpoint configured; using an untrained synthesizer')
            synthesizer = Synthesizer(config.synthesizer, seed=config.seed)
        return cls(
            features=features,
            bnf_extractor=BnfExtractor(features, acoustic_model),
            synthesizer=synthesizer,
            speaker_provider=build_speaker_provider(config),
            vocoder=build_vocoder(config),
            l1_speaker=l1_speaker,
            checkpoints=checkpoints.to_dict(),
        )

    def convert(self, request: ConversionRequest) -> ConversionResult:
        l2, l1 = request.l2_utterance, request.l1_reference
        if corpus_service.normalize_transcript(l2.transcript) != corpus_service.normalize_transcript(l1.transcript):
            raise ValidationError(f'transcripts of {l2.utterance_id} and reference {l1.utterance_id} differ')
        if self.l1_speaker and l1.speaker_id != self.l1_speaker:
            raise WiringError(f'reference {l1.utterance_id} is from {l1.speaker_id}, '
                              f'expected L1 speaker {self.l1_speaker}')

        l2_wave = self.features.load_waveform(l2)
        l1_wave = self.features.load_waveform(l1)
        with _branch('bnf', l1.utterance_id):
            bnf = self.bnf_extractor.extract(l1, l1_wave)
        with _branch('prosody', l2.utterance_id):
            l2_mel = self.features.mel(l2, l2_wave)
            prosody = self.synthesizer.encode_prosody(l2_mel, l2.utterance_id)
        with _branch('speaker', l2.utterance_id):
            source = l2_mel if self.speaker_provider.accepts == 'mel' else l2_wave
            speaker = encode_speaker(source, self.speaker_provider, l2)
        with _branch('synthesizer', l2.utterance_id):
            synthesis = self.synthesizer.synthesize(bnf, speaker, prosody, mode=AUTOREGRESSIVE)
        with _branch('vocoder', l2.utterance_id):
            waveform = vocode(synthesis.mel, self.vocoder)

        provenance = Provenance(
            bnf=bnf.source_utterance_id or l1.utterance_id,
            prosody=prosody.source_utterance_id or l2.utterance_id,
            speaker=speaker.source_utterance_id,
            bnf_speaker=l1.speaker_id,
            speaker_speaker=l2.speaker_id,
            checkpoints=dict(self.checkpoints),
        )
        result = ConversionResult(waveform, synthesis.mel, provenance, synthesis.truncated)
        if request.output_path:
            result.artifacts = write_conversion(result, request.output_path)
        logger.info('converted %s with reference %s (%d frames%s)', l2.utterance_id, l1.utterance_id,
                    synthesis.mel.num_frames, ', truncated' if synthesis.truncated else '')
        return result


def write_conversion(result: ConversionResult, output_path) -> List[str]:
    """Write the PCM WAV and its provenance sidecar"""
    audio = corpus_service.write_waveform(output_path, result.waveform)
    sidecar = provenance_path(output_path)
    document = {
        'branches': result.provenance.to_dict(),
        'frames': result.mel.num_frames,
        'duration_seconds': result.waveform.duration,
        'truncated': result.truncated,
    }
    with open(sidecar, 'w') as f:
        json.dump(document, f, indent=2)
    return [str(audio), str(sidecar)]


def batch_convert(pipeline: ConversionPipeline, requests: List[ConversionRequest],
                  max_workers: int = 1) -> List[ConversionResult]:
    """Independent conversions on frozen models; results in request order"""
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(pipeline.convert, requests))
