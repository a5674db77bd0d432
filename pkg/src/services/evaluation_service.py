"""Evaluation Service - MCD with DTW, WER, PPMC, speaker-centroid analysis and metric reports"""

import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import librosa
import numpy as np
from scipy.fft import dct
from scipy.spatial.distance import cdist
from scipy.stats import pearsonr

from src.errors import ValidationError
from src.models.conversion import SpeakerEmbedding
from src.models.evaluation import (
    Alignment,
    CentroidReport,
    MCDResult,
    MelCepstra,
    MetricRecord,
    WERResult,
)
from src.models.features import FrameSequence
from src.models.utterance import UtteranceRecord, Waveform
from src.providers.base import TranscriberProvider
from src.services.corpus_service import normalize_transcript
from src.services.feature_cache import write_feature_cache

logger = logging.getLogger(__name__)

MCD_CONSTANT = 10.0 / math.log(10.0) * math.sqrt(2.0)
CONDITIONS = ('original', 'converted')
REPORT_SPEAKERS = ('NJS', 'TXHC', 'YKWK', 'ZHAA')


def mel_cepstra(mel: FrameSequence, order: int = 13) -> MelCepstra:
    """Orthonormal DCT-II of every log-mel frame, coefficients c0..c_order"""
    if not 1 <= order < mel.num_channels:
        raise ValidationError(f'cepstral order must be in [1, {mel.num_channels}), got {order}')
    values = np.asarray(mel.values, dtype=np.float64)
    if values.shape[0] == 0:
        return MelCepstra(np.zeros((0, order + 1)), order)
    return MelCepstra(dct(values, type=2, norm='ortho', axis=1)[:, :order + 1], order)


def dtw_align(a: MelCepstra, b: MelCepstra) -> Alignment:
    """Minimum-cost monotone path over Euclidean distances of c1..c_order"""
    if a.num_frames == 0 or b.num_frames == 0:
        raise ValidationError('cannot align an empty cepstral sequence')
    if a.order != b.order:
        raise ValidationError(f'cepstral orders differ ({a.order} vs {b.order})')
    cost = cdist(a.values[:, 1:], b.values[:, 1:], metric='euclidean')
    accumulated, warping_path = librosa.sequence.dtw(C=cost, backtrack=True)
    path = [(int(i), int(j)) for i, j in warping_path[::-1]]
    return Alignment(path=path, total_cost=float(accumulated[-1, -1]))


def cepstral_distortion(a: MelCepstra, b: MelCepstra) -> MCDResult:
    alignment = dtw_align(a, b)
    rows = np.array([i for i, _ in alignment.path])
    cols = np.array([j for _, j in alignment.path])
    diff = a.values[rows, 1:] - b.values[cols, 1:]
    per_pair = MCD_CONSTANT * np.sqrt(np.sum(diff ** 2, axis=1))
    return MCDResult(
        mcd_db=float(per_pair.mean()),
        aligned_frames=a.num_frames,
        path_length=alignment.length,
    )


def mcd(converted: FrameSequence, reference: FrameSequence, order: int = 13) -> MCDResult:
    """Mel cepstral distortion in dB, DTW-aligned, c0 excluded"""
    if converted.num_frames == 0 or reference.num_frames == 0:
        raise ValidationError('MCD needs non-empty spectrograms')
    return cepstral_distortion(mel_cepstra(converted, order), mel_cepstra(reference, order))


def edit_operations(ref: Sequence[str], hyp: Sequence[str]) -> Tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimum unit-cost alignment"""
    m, n = len(ref), len(hyp)
    dp = np.zeros((m + 1, n + 1), dtype=np.int64)
    dp[:, 0] = np.arange(m + 1)
    dp[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if ref[i - 1] == hyp[j - 1]:
                dp[i, j] = dp[i - 1, j - 1]
            else:
                dp[i, j] = 1 + min(dp[i - 1, j - 1], dp[i - 1, j], dp[i, j - 1])

    substitutions = deletions = insertions = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            substitutions += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            deletions += 1
            i -= 1
        else:
            insertions += 1
            j -= 1
    return substitutions, deletions, insertions


def wer(ref_text: str, hyp_text: str) -> WERResult:
    """Word error rate after transcript normalization; may exceed 100"""
    ref_words = normalize_transcript(ref_text).split()
    if not ref_words:
        raise ValidationError('reference transcript is empty after normalization')
    hyp_words = normalize_transcript(hyp_text).split()
    substitutions, deletions, insertions = edit_operations(ref_words, hyp_words)
    return WERResult.from_counts(substitutions, deletions, insertions, len(ref_words))


def transcribe(wave: Waveform, provider: TranscriberProvider,
               record: Optional[UtteranceRecord] = None) -> str:
    return provider.transcribe(wave, record)


def transcribe_batch(items: List[Tuple[Waveform, Optional[UtteranceRecord]]],
                     provider: TranscriberProvider) -> List[str]:
    """Transcribe in parallel, at most provider.max_concurrency calls in flight; order preserved"""
    workers = 1 if provider.single_consumer else (provider.max_concurrency or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: provider.transcribe(*item), items))


def ppmc(x: Iterable[float], y: Iterable[float]) -> float:
    """Pearson product-moment correlation"""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f'sequences differ in length ({x.size} vs {y.size})')
    if x.size < 2:
        raise ValidationError('correlation needs at least two samples')
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError('correlation is undefined for a constant sequence')
    return float(np.clip(pearsonr(x, y)[0], -1.0, 1.0))


def mean_channel_ppmc(estimates: np.ndarray, targets: np.ndarray) -> float:
    """PPMC per channel averaged over channels; a constant channel counts as 0"""
    scores = []
    for c in range(targets.shape[1]):
        try:
            scores.append(ppmc(estimates[:, c], targets[:, c]))
        except ValidationError:
            logger.warning('channel %d is constant; scoring its correlation as 0', c)
            scores.append(0.0)
    return float(np.mean(scores))


def rmse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f'shapes differ ({x.shape} vs {y.shape})')
    return float(np.sqrt(np.mean((x - y) ** 2)))


def centroid_report(embeddings: Dict[Tuple[str, str], List[SpeakerEmbedding]]) -> CentroidReport:
    """Per-speaker distance between original and converted embedding centroids

    Mean and population std are taken over speakers.
    """
    speakers = sorted({speaker for speaker, _ in embeddings})
    if not speakers:
        raise ValidationError('no embeddings given')
    distances = {}
    for speaker in speakers:
        centroids = []
        for condition in CONDITIONS:
            cell = embeddings.get((speaker, condition))
            if not cell:
                raise ValidationError(f'speaker {speaker} has no "{condition}" embeddings')
            centroids.append(np.mean([e.vector.astype(np.float64) for e in cell], axis=0))
        distances[speaker] = float(np.linalg.norm(centroids[0] - centroids[1]))
    values = np.array(list(distances.values()))
    return CentroidReport(distances=distances, mean=float(values.mean()), std=float(values.std()))


def export_embeddings(embeddings: Dict[Tuple[str, str], List[SpeakerEmbedding]], out_dir) -> List[Path]:
    """One feature-cache file per (speaker, condition) for external 2-D visualization"""
    paths = []
    for (speaker, condition), cell in sorted(embeddings.items()):
        stacked = np.stack([e.vector for e in cell]).astype(np.float32)
        metadata = {
            'speaker': speaker,
            'condition': condition,
            'utterances': ','.join(e.source_utterance_id for e in cell),
        }
        path = Path(out_dir) / f'{speaker}_{condition}.facf'
        paths.append(write_feature_cache(FrameSequence(stacked, 1.0, metadata), path, provider_id='speaker'))
    return paths


def write_metric_records(records: Iterable[MetricRecord], path) -> Path:
    """Line-delimited (utterance_id, speaker_id, metric, value) records"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, 'w') as f:
        for record in records:
            f.write(json.dumps(record.to_dict()) + '\n')
    return out


def summarize(records: List[MetricRecord], speakers: Optional[Sequence[str]] = None) -> List[dict]:
    """Per-speaker mean rows followed by an Average row over speakers"""
    by_speaker: Dict[str, List[float]] = defaultdict(list)
    for record in records:
        by_speaker[record.speaker_id].append(record.value)
    order = [s for s in (speakers or REPORT_SPEAKERS) if s in by_speaker]
    order += sorted(s for s in by_speaker if s not in order)
    rows = [
        {'speaker': s, 'value': float(np.mean(by_speaker[s])), 'count': len(by_speaker[s])}
        for s in order
    ]
    if rows:
        rows.append({
            'speaker': 'Average',
            'value': float(np.mean([row['value'] for row in rows])),
            'count': sum(row['count'] for row in rows),
        })
    return rows


def write_summary_table(records: List[MetricRecord], path, metric: str,
                        speakers: Optional[Sequence[str]] = None, extra: Optional[dict] = None) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    document = {'metric': metric, 'rows': summarize(records, speakers)}
    if extra:
        document.update(extra)
    with open(out, 'w') as f:
        json.dump(document, f, indent=2)
    return out
