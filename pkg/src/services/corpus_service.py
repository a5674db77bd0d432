"""Corpus Service - Manifest loading, splits, segmentation and parallel references"""

import json
import logging
import math
import random
import re
from collections import defaultdict
from dataclasses import fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import soundfile as sf

from src.errors import (
    AmbiguousReferenceError,
    AudioReadError,
    DuplicateUtteranceError,
    ManifestParseError,
    ReferenceNotFoundError,
    ValidationError,
)
from src.models.utterance import DataSplits, UtteranceRecord, Waveform

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = tuple(f.name for f in fields(UtteranceRecord))
_PUNCTUATION = re.compile(r'[^\w\s]', re.UNICODE)


def load_manifest(path) -> List[UtteranceRecord]:
    """Parse a JSON-lines manifest, one UtteranceRecord per non-blank line"""
    manifest_path = Path(path)
    if not manifest_path.exists():
        raise FileNotFoundError(f'manifest not found: {manifest_path}')

    records = []
    seen: Dict[str, int] = {}
    with open(manifest_path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseError(line_number, f'invalid JSON ({e.msg})') from e
            if not isinstance(data, dict):
                raise ManifestParseError(line_number, 'expected a JSON object')
            missing = [name for name in MANIFEST_FIELDS if name not in data]
            if missing:
                raise ManifestParseError(line_number, f'missing field "{missing[0]}"')
            extra = sorted(set(data) - set(MANIFEST_FIELDS))
            if extra:
                raise ManifestParseError(line_number, f'unknown field "{extra[0]}"')
            try:
                record = UtteranceRecord.from_dict(data)
            except ValidationError as e:
                raise ManifestParseError(line_number, str(e)) from e
            if record.utterance_id in seen:
                raise DuplicateUtteranceError(record.utterance_id, line_number)
            seen[record.utterance_id] = line_number
            records.append(record)

    logger.debug('loaded %d records from %s', len(records), manifest_path)
    return records


def save_manifest(records: Iterable[UtteranceRecord], path) -> Path:
    manifest_path = Path(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False) + '\n')
    return manifest_path


def build_splits(records: List[UtteranceRecord], heldout_speakers: Set[str]) -> DataSplits:
    """Send every utterance of a held-out speaker to heldout, the rest to train/dev by tag"""
    heldout_speakers = set(heldout_speakers)
    present = {r.speaker_id for r in records}
    absent = sorted(heldout_speakers - present)
    if absent:
        raise ValidationError(f'held-out speaker(s) not in records: {", ".join(absent)}')

    splits = DataSplits(heldout_speakers=heldout_speakers)
    dropped = 0
    for record in records:
        if record.speaker_id in heldout_speakers:
            splits.heldout.append(record)
        elif record.split == 'train':
            splits.train.append(record)
        elif record.split == 'dev':
            splits.dev.append(record)
        else:
            dropped += 1
    if dropped:
        logger.info('%d test/heldout-tagged records of seen speakers left out of train/dev', dropped)
    return splits


def segment_waveform(wave: Waveform, segment_seconds: float = 2.0) -> List[Waveform]:
    """Cut into consecutive equal segments; the last one is zero padded at the end"""
    if not segment_seconds > 0:
        raise ValidationError(f'segment_seconds must be positive, got {segment_seconds}')
    segment_length = int(round(segment_seconds * wave.sample_rate))
    if segment_length < 1:
        raise ValidationError('segment shorter than one sample')
    if wave.num_samples == 0:
        return []

    num_segments = math.ceil(wave.num_samples / segment_length)
    pad = num_segments * segment_length - wave.num_samples
    padded = np.concatenate([wave.samples, np.zeros(pad, dtype=wave.samples.dtype)])
    return [
        Waveform(chunk.copy(), wave.sample_rate)
        for chunk in padded.reshape(num_segments, segment_length)
    ]


def normalize_transcript(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace"""
    return ' '.join(_PUNCTUATION.sub('', text.lower()).split())


def find_parallel_reference(l2_utt: UtteranceRecord,
                            l1_records: List[UtteranceRecord]) -> UtteranceRecord:
    """Find the L1 reference utterance with the same (normalized) transcript"""
    speakers = {r.speaker_id for r in l1_records}
    if len(speakers) > 1:
        raise ValidationError(
            f'L1 references must come from one speaker, got {", ".join(sorted(speakers))}'
        )
    target = normalize_transcript(l2_utt.transcript)
    matches = [r for r in l1_records if normalize_transcript(r.transcript) == target]
    if not matches:
        raise ReferenceNotFoundError(l2_utt.utterance_id)
    if len(matches) > 1:
        raise AmbiguousReferenceError(l2_utt.utterance_id, [r.utterance_id for r in matches])
    return matches[0]


def sample_training_pairs(records: List[UtteranceRecord],
                          seed: int = 0) -> List[Tuple[UtteranceRecord, UtteranceRecord]]:
    """Pair every utterance A with a different utterance C of the same speaker"""
    rng = random.Random(seed)
    by_speaker: Dict[str, List[UtteranceRecord]] = defaultdict(list)
    for record in records:
        by_speaker[record.speaker_id].append(record)

    pairs = []
    for record in records:
        others = [r for r in by_speaker[record.speaker_id] if r.utterance_id != record.utterance_id]
        if not others:
            logger.debug('speaker %s has a single utterance; %s not paired',
                         record.speaker_id, record.utterance_id)
            continue
        pairs.append((record, rng.choice(others)))
    return pairs


def load_waveform(record_or_path, sample_rate: Optional[int] = None) -> Waveform:
    """Read mono PCM audio; the rate must match the record (or sample_rate)"""
    if isinstance(record_or_path, UtteranceRecord):
        path = record_or_path.audio_path
        expected = record_or_path.sample_rate
    else:
        path = record_or_path
        expected = sample_rate
    try:
        samples, rate = sf.read(str(path), dtype='float32', always_2d=False)
    except sf.SoundFileError as e:
        raise AudioReadError(f'{path}: {e}') from e
    if samples.ndim > 1:
        logger.warning('%s has %d channels; downmixing to mono', path, samples.shape[1])
        samples = samples.mean(axis=1)
    if expected is not None and rate != expected:
        raise ValidationError(f'{path}: sample rate {rate} Hz, expected {expected} Hz')
    return Waveform(samples, rate)


def record_for_audio(path, speaker_id: str, transcript: str = '',
                     native_language: str = 'unknown') -> UtteranceRecord:
    """Ad-hoc held-out record for an audio file outside any manifest"""
    audio = Path(path)
    try:
        info = sf.info(str(audio))
    except sf.SoundFileError as e:
        raise AudioReadError(f'{audio}: {e}') from e
    return UtteranceRecord(
        utterance_id=audio.stem,
        speaker_id=speaker_id,
        native_language=native_language,
        transcript=transcript,
        audio_path=str(audio),
        sample_rate=int(info.samplerate),
        split='heldout',
    )


def write_waveform(path, wave: Waveform) -> Path:
    """Write 16-bit PCM WAV"""
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(out_path), np.clip(wave.samples, -1.0, 1.0), wave.sample_rate, subtype='PCM_16')
    return out_path


class ManifestService:
    """Service for querying and extending one corpus manifest"""

    def __init__(self, manifest_file: str = "data/manifest.jsonl"):
        """Initialize manifest service with data file path"""
        self.manifest_file = manifest_file
        self._ensure_data_file()
        self._load_data()

    def _ensure_data_file(self):
        """Ensure data directory and file exist"""
        data_path = Path(self.manifest_file)
        data_path.parent.mkdir(parents=True, exist_ok=True)
        if not data_path.exists():
            data_path.touch()

    def _load_data(self):
        self.records = {r.utterance_id: r for r in load_manifest(self.manifest_file)}

    def _save_data(self):
        save_manifest(self.records.values(), self.manifest_file)

    def get_all_records(self) -> List[UtteranceRecord]:
        return list(self.records.values())

    def get_record_by_id(self, utterance_id: str) -> Optional[UtteranceRecord]:
        return self.records.get(utterance_id)

    def get_records_by_speaker(self, speaker_id: str) -> List[UtteranceRecord]:
        return [r for r in self.records.values() if r.speaker_id == speaker_id]

    def speakers(self) -> List[str]:
        return sorted({r.speaker_id for r in self.records.values()})

    def add_record(self, record: UtteranceRecord) -> UtteranceRecord:
        if record.utterance_id in self.records:
            raise DuplicateUtteranceError(record.utterance_id)
        self.records[record.utterance_id] = record
        self._save_data()
        return record

    def build_splits(self, heldout_speakers: Set[str]) -> DataSplits:
        return build_splits(self.get_all_records(), heldout_speakers)

    def find_reference(self, l2_utterance_id: str, l1_speaker: str) -> UtteranceRecord:
        l2_record = self.records.get(l2_utterance_id)
        if l2_record is None:
            raise ReferenceNotFoundError(l2_utterance_id)
        return find_parallel_reference(l2_record, self.get_records_by_speaker(l1_speaker))
