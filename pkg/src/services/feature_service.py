"""Feature Service - Mel analysis, provider-backed feature tracks and TV normalization"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import librosa
import numpy as np

from src.errors import AnalysisWindowError, ShapeError, ValidationError
from src.models.acoustic import AcousticExample
from src.models.features import (
    FeatureGeometry,
    FrameSequence,
    MelAnalysisConfig,
    MelSpectrogram,
    PosteriorgramTrack,
    TractVariableTrack,
    TvNormalizationStats,
    UpstreamEmbedding,
)
from src.models.utterance import UtteranceRecord, Waveform
from src.providers.base import FrameProvider, PpgProvider, TvProvider, UpstreamProvider, create_provider
from src.services import corpus_service, feature_cache

logger = logging.getLogger(__name__)

PPG_RENORMALIZE_TOLERANCE = 1e-3
FRAME_COUNT_TOLERANCE = 1


def compute_mel(wave: Waveform, config: Optional[MelAnalysisConfig] = None) -> MelSpectrogram:
    """80-band log-mel, 25 ms window / 10 ms hop, no centering"""
    config = config or MelAnalysisConfig()
    if wave.sample_rate != config.sample_rate:
        raise ValidationError(
            f'waveform is {wave.sample_rate} Hz, mel analysis is configured for {config.sample_rate} Hz'
        )
    if wave.num_samples < config.win_length:
        raise AnalysisWindowError(wave.num_samples, config.win_length)

    power = librosa.feature.melspectrogram(
        y=wave.samples.astype(np.float32),
        sr=config.sample_rate,
        n_fft=config.win_length,
        win_length=config.win_length,
        hop_length=config.hop_length,
        center=False,
        power=2.0,
        n_mels=config.n_mels,
        fmin=config.fmin,
        fmax=config.fmax,
    )
    log_mel = np.log(np.maximum(power, config.log_floor)).T.astype(np.float32)
    return MelSpectrogram(values=log_mel, frame_rate=config.sample_rate / config.hop_length)


def _checked_track(values, provider: FrameProvider, wave: Waveform, channels: int,
                   rate: float, kind: str) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] != channels:
        raise ShapeError(f'{kind} provider "{provider.provider_id}" returned shape '
                         f'{values.shape}, expected (frames, {channels})')
    if provider.frame_rate != rate:
        raise ValidationError(f'{kind} provider "{provider.provider_id}" runs at '
                              f'{provider.frame_rate} Hz, expected {rate} Hz')
    nominal = wave.duration * rate
    if abs(values.shape[0] - nominal) > FRAME_COUNT_TOLERANCE + 1e-9:
        raise ShapeError(f'{kind} provider "{provider.provider_id}" returned '
                         f'{values.shape[0]} frames for {wave.duration:.3f} s (~{nominal:.1f} expected)')
    return values


def _track_metadata(provider: FrameProvider, utterance_id: Optional[str]) -> Dict[str, str]:
    metadata = {'provider': provider.provider_id, 'edge_behavior': provider.edge_behavior}
    if utterance_id:
        metadata['utterance_id'] = utterance_id
    return metadata


def get_upstream_embeddings(wave: Waveform, provider: UpstreamProvider,
                            geometry: Optional[FeatureGeometry] = None,
                            utterance_id: Optional[str] = None) -> UpstreamEmbedding:
    geometry = geometry or FeatureGeometry()
    values = _checked_track(provider.extract(wave, utterance_id), provider, wave,
                            geometry.upstream_dim, geometry.upstream_rate, 'upstream')
    return UpstreamEmbedding(values=values.astype(np.float32), frame_rate=geometry.upstream_rate,
                             metadata=_track_metadata(provider, utterance_id))


def get_ppg_targets(wave: Waveform, provider: PpgProvider,
                    geometry: Optional[FeatureGeometry] = None,
                    utterance_id: Optional[str] = None) -> PosteriorgramTrack:
    """Posteriorgram rows are renormalized when they are off by at most 1e-3"""
    geometry = geometry or FeatureGeometry()
    values = _checked_track(provider.extract(wave, utterance_id), provider, wave,
                            geometry.ppg_dim, geometry.ppg_rate, 'ppg').astype(np.float64)
    if values.shape[0]:
        if values.min() < 0:
            raise ValidationError(f'ppg provider "{provider.provider_id}" returned negative posteriors')
        sums = values.sum(axis=1, keepdims=True)
        deviation = np.abs(sums - 1.0).max()
        if deviation > PPG_RENORMALIZE_TOLERANCE:
            raise ValidationError(f'ppg provider "{provider.provider_id}" rows are not distributions '
                                  f'(max |sum - 1| = {deviation:.3g})')
        values = values / sums
    return PosteriorgramTrack(values=values.astype(np.float32), frame_rate=geometry.ppg_rate,
                              metadata=_track_metadata(provider, utterance_id))


def get_tv_targets(wave: Waveform, provider: TvProvider,
                   geometry: Optional[FeatureGeometry] = None,
                   utterance_id: Optional[str] = None) -> TractVariableTrack:
    """Raw (physical-scale) tract variables from the speech-inversion provider"""
    geometry = geometry or FeatureGeometry()
    values = _checked_track(provider.extract(wave, utterance_id), provider, wave,
                            geometry.tv_dim, geometry.tv_rate, 'tv')
    return TractVariableTrack(values=values.astype(np.float32), frame_rate=geometry.tv_rate,
                              channel_names=list(geometry.tv_channel_names),
                              metadata=_track_metadata(provider, utterance_id))


def normalize_tv_channels(track: TractVariableTrack, stats: TvNormalizationStats) -> TractVariableTrack:
    """Map each channel's training [min, max] affinely onto stats.target_range, clipping outside"""
    if track.num_channels != len(stats.minimum):
        raise ShapeError(f'track has {track.num_channels} channels, stats have {len(stats.minimum)}')
    lo, hi = stats.target_range
    minimum = np.asarray(stats.minimum, dtype=np.float64)
    maximum = np.asarray(stats.maximum, dtype=np.float64)
    scaled = (track.values.astype(np.float64) - minimum) / (maximum - minimum)
    normalized = np.clip(lo + scaled * (hi - lo), lo, hi)
    return TractVariableTrack(values=normalized, frame_rate=track.frame_rate,
                              channel_names=list(track.channel_names),
                              metadata={**track.metadata, 'normalized': 'true'})


def denormalize_tv_channels(track: TractVariableTrack, stats: TvNormalizationStats) -> TractVariableTrack:
    """Inverse of normalize_tv_channels on the non-clipped region"""
    lo, hi = stats.target_range
    minimum = np.asarray(stats.minimum, dtype=np.float64)
    maximum = np.asarray(stats.maximum, dtype=np.float64)
    raw = minimum + (track.values.astype(np.float64) - lo) / (hi - lo) * (maximum - minimum)
    metadata = {k: v for k, v in track.metadata.items() if k != 'normalized'}
    return TractVariableTrack(values=raw, frame_rate=track.frame_rate,
                              channel_names=list(track.channel_names), metadata=metadata)


def to_hard_targets(track: PosteriorgramTrack) -> PosteriorgramTrack:
    """One-hot senone rows at each frame's argmax"""
    one_hot = np.zeros_like(track.values, dtype=np.float32)
    if track.num_frames:
        one_hot[np.arange(track.num_frames), track.values.argmax(axis=1)] = 1.0
    return PosteriorgramTrack(values=one_hot, frame_rate=track.frame_rate,
                              metadata={**track.metadata, 'target_form': 'hard'})


def truncate_to_common(*tracks: FrameSequence) -> List[FrameSequence]:
    """Cut every track to the shortest frame count"""
    shortest = min(t.num_frames for t in tracks)
    return [t.truncate(shortest) for t in tracks]


class FeatureService:
    """Binds providers, geometry and an optional on-disk cache to corpus records"""

    def __init__(self, upstream: UpstreamProvider, ppg: Optional[PpgProvider] = None,
                 tv: Optional[TvProvider] = None, geometry: Optional[FeatureGeometry] = None,
                 mel_config: Optional[MelAnalysisConfig] = None, cache_dir: Optional[str] = None,
                 ppg_target_form: str = 'soft', tv_stats: Optional[TvNormalizationStats] = None,
                 segment_seconds: float = 2.0, tv_target_range=(-0.95, 0.95)):
        if ppg_target_form not in ('soft', 'hard'):
            raise ValidationError(f'ppg_target_form must be "soft" or "hard", got {ppg_target_form}')
        self.upstream_provider = upstream
        self.ppg_provider = ppg
        self.tv_provider = tv
        self.geometry = geometry or FeatureGeometry()
        self.mel_config = mel_config or MelAnalysisConfig()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.ppg_target_form = ppg_target_form
        self.tv_stats = tv_stats
        self.segment_seconds = segment_seconds
        self.tv_target_range = tuple(tv_target_range)

    @classmethod
    def from_config(cls, config, tv_stats: Optional[TvNormalizationStats] = None) -> 'FeatureService':
        geometry = config.geometry

        def build(role, dim, rate):
            spec = config.providers[role]
            options = {'dim': dim, 'frame_rate': rate, **spec.options}
            return create_provider(role, spec.id, checkpoint=spec.checkpoint, **options)

        return cls(
            upstream=build('upstream', geometry.upstream_dim, geometry.upstream_rate),
            ppg=build('ppg', geometry.ppg_dim, geometry.ppg_rate),
            tv=build('tv', geometry.tv_dim, geometry.tv_rate),
            geometry=geometry,
            mel_config=config.mel,
            cache_dir=config.cache_dir,
            ppg_target_form=config.ppg_target_form,
            tv_stats=tv_stats,
            segment_seconds=config.corpus.segment_seconds,
            tv_target_range=config.tv_target_range,
        )

    def _cached(self, kind: str, key: str, compute):
        if self.cache_dir is None:
            return compute()
        path = self.cache_dir / kind / f'{key}{feature_cache.CACHE_SUFFIX}'
        if path.exists():
            return feature_cache.read_feature_cache(path)
        track = compute()
        feature_cache.write_feature_cache(track, path)
        return track

    def load_waveform(self, record: UtteranceRecord) -> Waveform:
        return corpus_service.load_waveform(record)

    def _wave(self, record: UtteranceRecord, wave: Optional[Waveform]) -> Waveform:
        return wave if wave is not None else self.load_waveform(record)

    def mel(self, record: UtteranceRecord, wave: Optional[Waveform] = None) -> MelSpectrogram:
        return self._cached('mel', record.utterance_id,
                            lambda: compute_mel(self._wave(record, wave), self.mel_config))

    def upstream(self, record: UtteranceRecord, wave: Optional[Waveform] = None) -> UpstreamEmbedding:
        return self._cached(f'upstream-{self.upstream_provider.provider_id}', record.utterance_id,
                            lambda: get_upstream_embeddings(self._wave(record, wave),
                                                            self.upstream_provider, self.geometry,
                                                            record.utterance_id))

    def fit_tv_stats(self, records: List[UtteranceRecord]) -> TvNormalizationStats:
        """Compute TV normalization stats over (training-split) records"""
        if self.tv_provider is None:
            raise ValidationError('no tract-variable provider configured')
        tracks = [
            get_tv_targets(self.load_waveform(r), self.tv_provider, self.geometry, r.utterance_id)
            for r in records
        ]
        self.tv_stats = TvNormalizationStats.from_tracks(tracks, self.tv_target_range)
        return self.tv_stats

    def segment_example(self, segment_id: str, wave: Waveform) -> AcousticExample:
        if self.ppg_provider is None or self.tv_provider is None:
            raise ValidationError('PPG and TV providers are required for training examples')
        if self.tv_stats is None:
            raise ValidationError('TV normalization stats are not fitted; call fit_tv_stats first')
        upstream = get_upstream_embeddings(wave, self.upstream_provider, self.geometry, segment_id)
        ppg = get_ppg_targets(wave, self.ppg_provider, self.geometry, segment_id)
        if self.ppg_target_form == 'hard':
            ppg = to_hard_targets(ppg)
        tv = normalize_tv_channels(
            get_tv_targets(wave, self.tv_provider, self.geometry, segment_id), self.tv_stats
        )
        ppg, tv = truncate_to_common(ppg, tv)
        return AcousticExample(segment_id, upstream, ppg, tv)

    def examples(self, records: List[UtteranceRecord]) -> List[AcousticExample]:
        """Segment every record and pair its upstream input with PPG/TV targets"""
        examples = []
        for record in records:
            wave = self.load_waveform(record)
            for index, segment in enumerate(corpus_service.segment_waveform(wave, self.segment_seconds)):
                examples.append(self.segment_example(f'{record.utterance_id}#{index}', segment))
        logger.info('built %d training segments from %d utterances', len(examples), len(records))
        return examples
