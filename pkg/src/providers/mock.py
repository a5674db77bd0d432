"""Deterministic mock providers

They stand in for the pretrained models so every pipeline stage runs at desk
scale without downloads. Outputs are pure functions of the input audio (or of
the record metadata) and a fixed seed.
"""

import hashlib
from typing import Optional

import numpy as np
import torch
from scipy.special import softmax

from src.models.features import DEFAULT_TV_CHANNELS, MelSpectrogram
from src.models.utterance import UtteranceRecord, Waveform
from src.providers.base import (
    PpgProvider,
    SpeakerEncoderProvider,
    TranscriberProvider,
    TvProvider,
    UpstreamProvider,
    VocoderProvider,
    register_provider,
)


def _framed_log_spectrum(wave: Waveform, frame_rate: float) -> np.ndarray:
    """Non-overlapping frames at frame_rate -> log magnitude spectra"""
    hop = int(round(wave.sample_rate / frame_rate))
    num_frames = wave.num_samples // hop
    frames = wave.samples[:num_frames * hop].astype(np.float64).reshape(num_frames, hop)
    return np.log(np.abs(np.fft.rfft(frames, axis=1)) + 1e-5)


class _ProjectedSpectrumMixin:
    """Fixed random projection of framed log spectra"""

    def _projection(self, num_bins: int, dim: int) -> np.ndarray:
        rng = np.random.default_rng(int(self.options.get('seed', 0)))
        return rng.standard_normal((num_bins, dim)) / np.sqrt(num_bins)

    def _project(self, wave: Waveform, dim: int) -> np.ndarray:
        spectrum = _framed_log_spectrum(wave, self.frame_rate)
        if self._weights is None or self._weights.shape[0] != spectrum.shape[1]:
            self._weights = self._projection(spectrum.shape[1], dim)
        centered = spectrum - spectrum.mean(axis=1, keepdims=True) if spectrum.size else spectrum
        return centered @ self._weights


@register_provider
class MockUpstreamProvider(_ProjectedSpectrumMixin, UpstreamProvider):
    provider_id = 'mock'

    def _load(self):
        self.dim = int(self.options.get('dim', 1024))
        self.frame_rate = float(self.options.get('frame_rate', 50.0))
        self._weights = None

    def _extract(self, wave: Waveform) -> np.ndarray:
        return np.tanh(self._project(wave, self.dim)).astype(np.float32)


@register_provider
class ZeroUpstreamProvider(UpstreamProvider):
    provider_id = 'mock-zeros'

    def _load(self):
        self.dim = int(self.options.get('dim', 1024))
        self.frame_rate = float(self.options.get('frame_rate', 50.0))

    def _extract(self, wave: Waveform) -> np.ndarray:
        hop = int(round(wave.sample_rate / self.frame_rate))
        return np.zeros((wave.num_samples // hop, self.dim), dtype=np.float32)


@register_provider
class MockSoftmaxPpgProvider(_ProjectedSpectrumMixin, PpgProvider):
    provider_id = 'mock-softmax'

    def _load(self):
        self.dim = int(self.options.get('dim', 5816))
        self.frame_rate = float(self.options.get('frame_rate', 100.0))
        self._weights = None

    def _extract(self, wave: Waveform) -> np.ndarray:
        logits = 4.0 * self._project(wave, self.dim)
        return softmax(logits, axis=1).astype(np.float32)


@register_provider
class UniformPpgProvider(PpgProvider):
    provider_id = 'mock-uniform'

    def _load(self):
        self.dim = int(self.options.get('dim', 5816))
        self.frame_rate = float(self.options.get('frame_rate', 100.0))

    def _extract(self, wave: Waveform) -> np.ndarray:
        hop = int(round(wave.sample_rate / self.frame_rate))
        return np.full((wave.num_samples // hop, self.dim), 1.0 / self.dim)


@register_provider
class SineTvProvider(TvProvider):
    """Per-channel sinusoids on a physical-looking scale (channel c has amplitude c+1)"""
    provider_id = 'mock-sine'

    def _load(self):
        self.dim = int(self.options.get('dim', len(DEFAULT_TV_CHANNELS)))
        self.frame_rate = float(self.options.get('frame_rate', 100.0))

    def _extract(self, wave: Waveform) -> np.ndarray:
        hop = int(round(wave.sample_rate / self.frame_rate))
        t = np.arange(wave.num_samples // hop)[:, None] / self.frame_rate
        c = np.arange(self.dim)[None, :]
        return ((c + 1) * np.sin(2 * np.pi * (c + 1) * 0.5 * t + c)).astype(np.float32)


@register_provider
class HashSpeakerEncoder(SpeakerEncoderProvider):
    """Unit vector seeded by the speaker id: same speaker, same embedding

    Accepts either a waveform or a mel; only the record's speaker_id matters.
    """
    provider_id = 'mock-hash'
    accepts = 'mel'

    def _load(self):
        self.dim = int(self.options.get('dim', 256))

    def _embed(self, source, record: Optional[UtteranceRecord]) -> np.ndarray:
        if record is None:
            raise ValueError('hash speaker encoder needs the utterance record')
        digest = hashlib.sha256(record.speaker_id.encode('utf-8')).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], 'little'))
        vector = rng.standard_normal(self.dim)
        return (vector / np.linalg.norm(vector)).astype(np.float32)


@register_provider
class LinearSpeakerEncoder(SpeakerEncoderProvider):
    """Frozen random projection of the time-averaged log-mel

    Uses the mel input; a waveform is converted with the default mel analysis.
    """
    provider_id = 'mock-linear'
    accepts = 'mel'

    def _load(self):
        self.dim = int(self.options.get('dim', 256))
        generator = torch.Generator().manual_seed(int(self.options.get('seed', 0)))
        self.projection = torch.nn.Linear(MelSpectrogram.NUM_CHANNELS, self.dim)
        with torch.no_grad():
            self.projection.weight.copy_(
                torch.randn(self.dim, MelSpectrogram.NUM_CHANNELS, generator=generator) * 0.1
            )
            self.projection.bias.zero_()
        self.projection.requires_grad_(False)

    def _embed(self, source, record: Optional[UtteranceRecord]) -> np.ndarray:
        if isinstance(source, Waveform):
            from src.services.feature_service import compute_mel
            source = compute_mel(source)
        mean_frame = torch.as_tensor(source.values, dtype=torch.float32).mean(dim=0)
        with torch.no_grad():
            return torch.tanh(self.projection(mean_frame)).numpy()

    def parameters(self):
        return self.projection.parameters()


@register_provider
class SineVocoder(VocoderProvider):
    """Phase-continuous sine per frame; loudness follows the frame's mean log-mel"""
    provider_id = 'mock-sine'

    def _load(self):
        self.sample_rate = int(self.options.get('sample_rate', 16000))
        self.hop_length = int(self.options.get('hop_length', 160))

    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        values = mel.values.astype(np.float64)
        if values.shape[0] == 0:
            return np.zeros(0, dtype=np.float32)
        amplitude = 0.5 / (1.0 + np.exp(-values.mean(axis=1) / 4.0))
        frequency = 100.0 + 20.0 * values.argmax(axis=1)
        per_sample_freq = np.repeat(frequency, self.hop_length)
        phase = 2 * np.pi * np.cumsum(per_sample_freq) / self.sample_rate
        return (np.repeat(amplitude, self.hop_length) * np.sin(phase)).astype(np.float32)


@register_provider
class GriffinLimVocoder(VocoderProvider):
    """Signal-processing vocoder: mel inversion + Griffin-Lim phase recovery"""
    provider_id = 'griffin-lim'

    def _load(self):
        self.sample_rate = int(self.options.get('sample_rate', 16000))
        self.hop_length = int(self.options.get('hop_length', 160))
        self.win_length = int(self.options.get('win_length', 400))
        self.n_iter = int(self.options.get('n_iter', 32))

    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        import librosa

        power = np.exp(mel.values.T.astype(np.float64))
        audio = librosa.feature.inverse.mel_to_audio(
            power, sr=self.sample_rate, n_fft=self.win_length, hop_length=self.hop_length,
            win_length=self.win_length, power=2.0, n_iter=self.n_iter, fmin=0.0,
            fmax=self.sample_rate / 2,
        )
        return audio.astype(np.float32)


@register_provider
class EchoTranscriber(TranscriberProvider):
    """Returns the transcript attached to the record"""
    provider_id = 'mock-echo'

    def _transcribe(self, wave: Waveform, record: Optional[UtteranceRecord]) -> str:
        return record.transcript if record is not None else ''


@register_provider
class GarblingTranscriber(TranscriberProvider):
    """Drops every other word of the attached transcript"""
    provider_id = 'mock-garbler'

    def _transcribe(self, wave: Waveform, record: Optional[UtteranceRecord]) -> str:
        words = record.transcript.split() if record is not None else []
        return ' '.join(words[::2])
