"""Pytest configuration and shared fixtures"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.config import PipelineConfig
from src.models.utterance import UtteranceRecord, Waveform
from src.services.corpus_service import save_manifest, write_waveform

TINY_CONFIG = project_root / 'data' / 'configs' / 'tiny.json'
SAMPLE_RATE = 16000
SENTENCES = ['Author of the danger trail.', 'Tom is going to the store', 'what a day it was']
SPEAKERS = {
    # speaker: (native language, base frequency)
    'ABA': ('Arabic', 180.0),
    'SKA': ('Arabic', 220.0),
    'BDL': ('English', 120.0),
    'NJS': ('Spanish', 250.0),
}


def tone(frequency: float, seconds: float = 0.6, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Harmonic tone with a slow amplitude envelope"""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    envelope = 0.5 + 0.4 * np.sin(2 * np.pi * 1.5 * t)
    samples = sum(np.sin(2 * np.pi * k * frequency * t) / k for k in (1, 2, 3))
    return Waveform((0.2 * envelope * samples).astype(np.float32), sample_rate)


@pytest.fixture
def tiny_config():
    """Desk-scale pipeline config with mock providers"""
    return PipelineConfig.load(TINY_CONFIG)


@pytest.fixture
def wav_file(tmp_path):
    """Factory writing a tone to a WAV file"""
    def write(name: str, frequency: float = 200.0, seconds: float = 0.6) -> Path:
        return write_waveform(tmp_path / 'audio' / f'{name}.wav', tone(frequency, seconds))
    return write


@pytest.fixture
def corpus(tmp_path, wav_file):
    """Four-speaker parallel corpus; NJS is the held-out speaker"""
    records = []
    for speaker, (language, frequency) in SPEAKERS.items():
        for index, sentence in enumerate(SENTENCES):
            utterance_id = f'{speaker}_a{index:04d}'
            path = wav_file(utterance_id, frequency * (1 + 0.1 * index))
            records.append(UtteranceRecord(
                utterance_id=utterance_id,
                speaker_id=speaker,
                native_language=language,
                transcript=sentence,
                audio_path=str(path),
                sample_rate=SAMPLE_RATE,
                split='dev' if index == 2 else 'train',
            ))
    manifest = save_manifest(records, tmp_path / 'manifest.jsonl')
    return {'records': records, 'manifest': manifest}
