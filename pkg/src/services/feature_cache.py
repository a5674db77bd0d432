"""Binary feature cache

Layout (little endian): magic ``FACF`` | version u8 | dtype code u8 |
frame_rate f64 | frames u64 | channels u64 | row-major float32 payload.
A JSON sidecar next to the binary keeps the track type, channel names,
provider id and free-form metadata.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from src.errors import CacheIntegrityError
from src.models.features import (
    FrameSequence,
    MelSpectrogram,
    PosteriorgramTrack,
    TractVariableTrack,
    UpstreamEmbedding,
)

logger = logging.getLogger(__name__)

MAGIC = b'FACF'
FORMAT_VERSION = 1
DTYPE_F32_LE = 1
HEADER = struct.Struct('<4sBBdQQ')
CACHE_SUFFIX = '.facf'

_TRACK_TYPES = {
    cls.__name__: cls
    for cls in (FrameSequence, MelSpectrogram, UpstreamEmbedding, PosteriorgramTrack, TractVariableTrack)
}


def sidecar_path(path) -> Path:
    return Path(path).with_suffix('.json')


def write_feature_cache(seq: FrameSequence, path, provider_id: Optional[str] = None) -> Path:
    """Write seq as float32; values that are already float32 round-trip bitwise"""
    cache_path = Path(path)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(seq.values, dtype='<f4')
    header = HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32_LE, float(seq.frame_rate),
                         values.shape[0], values.shape[1])
    with open(cache_path, 'wb') as f:
        f.write(header)
        f.write(values.tobytes(order='C'))

    sidecar = {
        'type': type(seq).__name__,
        'provider': provider_id or seq.metadata.get('provider'),
        'metadata': dict(seq.metadata),
    }
    if isinstance(seq, TractVariableTrack):
        sidecar['channel_names'] = list(seq.channel_names)
    with open(sidecar_path(cache_path), 'w') as f:
        json.dump(sidecar, f, indent=2)
    return cache_path


def read_feature_cache(path) -> FrameSequence:
    """Read a cache file back into the track type recorded in its sidecar"""
    cache_path = Path(path)
    with open(cache_path, 'rb') as f:
        blob = f.read()

    if len(blob) < HEADER.size:
        raise CacheIntegrityError(f'{cache_path}: header truncated ({len(blob)} bytes)')
    magic, version, dtype_code, frame_rate, frames, channels = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CacheIntegrityError(f'{cache_path}: bad magic {magic!r}')
    if version != FORMAT_VERSION:
        raise CacheIntegrityError(f'{cache_path}: unsupported format version {version}')
    if dtype_code != DTYPE_F32_LE:
        raise CacheIntegrityError(f'{cache_path}: unsupported dtype code {dtype_code}')
    payload = blob[HEADER.size:]
    expected = frames * channels * 4
    if len(payload) != expected:
        raise CacheIntegrityError(
            f'{cache_path}: payload is {len(payload)} bytes, header promises {expected}'
        )
    values = np.frombuffer(payload, dtype='<f4').reshape(frames, channels).astype(np.float32)

    sidecar = {}
    side = sidecar_path(cache_path)
    if side.exists():
        try:
            with open(side, 'r') as f:
                sidecar = json.load(f)
        except json.JSONDecodeError as e:
            raise CacheIntegrityError(f'{side}: unreadable sidecar ({e.msg})') from e

    cls = _TRACK_TYPES.get(sidecar.get('type', 'FrameSequence'), FrameSequence)
    kwargs = {'metadata': dict(sidecar.get('metadata', {}))}
    if cls is TractVariableTrack and 'channel_names' in sidecar:
        kwargs['channel_names'] = list(sidecar['channel_names'])
    return cls(values=values, frame_rate=frame_rate, **kwargs)


def feature_cache_roundtrip(seq: FrameSequence, path) -> FrameSequence:
    write_feature_cache(seq, path)
    return read_feature_cache(path)
