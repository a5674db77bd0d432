"""Acoustic Service - Multi-task model inference, combined loss, BNF extraction and checkpoints"""

import hashlib
import json
import logging
import pickle
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import CheckpointError, FacError, ModelStateError, ShapeError, ValidationError
from src.models.acoustic import (
    VARIANT_ALPHAS,
    AcousticModelConfig,
    BottleneckFeatures,
    CombinedLossReport,
    LossWeights,
    MultiTaskOutput,
)
from src.models.features import FrameSequence, PosteriorgramTrack, TractVariableTrack, UpstreamEmbedding
from src.networks.acoustic_model import MultiTaskAcousticNetwork

logger = logging.getLogger(__name__)

TRUNCATION_TOLERANCE = 2
CONFIG_FILE = 'config.json'
PARAMETERS_FILE = 'parameters.pt'


class AcousticModel:
    """A MultiTaskAcousticNetwork plus its config, loss weights and readiness state"""

    def __init__(self, config: AcousticModelConfig, weights: Optional[LossWeights] = None,
                 dtype: torch.dtype = torch.float32):
        self.config = config
        self.weights = weights or LossWeights.for_variant('combined')
        self.dtype = dtype
        self.network = MultiTaskAcousticNetwork(config).to(dtype)
        self.initialized = False
        self.metadata = {}

    def initialize(self, seed: int = 0) -> 'AcousticModel':
        """Seeded parameter initialization"""
        torch.manual_seed(seed)
        self.network = MultiTaskAcousticNetwork(self.config).to(self.dtype)
        self.initialized = True
        self.metadata['init_seed'] = seed
        return self

    def require_ready(self):
        if not self.initialized:
            raise ModelStateError('acoustic model is neither trained nor initialized')

    def as_tensor(self, embeddings: UpstreamEmbedding) -> torch.Tensor:
        if embeddings.num_channels != self.config.input_dim:
            raise ShapeError(
                f'acoustic model expects {self.config.input_dim}-dim input, got {embeddings.num_channels}'
            )
        return torch.as_tensor(embeddings.values, dtype=self.dtype).unsqueeze(0)

    def state_checksum(self) -> str:
        return parameter_checksum(self.network.parameters())


def parameter_checksum(parameters) -> str:
    digest = hashlib.sha256()
    for p in parameters:
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def upsample_frames(seq: FrameSequence, factor: int) -> FrameSequence:
    """Nearest-neighbour up-sampling: every frame repeated factor times"""
    if not isinstance(factor, int) or factor < 1:
        raise ValidationError(f'upsample factor must be a positive integer, got {factor!r}')
    return replace(seq, values=np.repeat(seq.values, factor, axis=0), frame_rate=seq.frame_rate * factor)


def forward(embeddings: UpstreamEmbedding, model: AcousticModel) -> MultiTaskOutput:
    """Evaluation-mode forward pass: T frames at the upstream rate -> factor*T frames on every head"""
    model.require_ready()
    x = model.as_tensor(embeddings)
    rate = embeddings.frame_rate * model.config.upsample_factor
    model.network.eval()
    with torch.no_grad():
        ppg_logits, tv, bnf = model.network(x)
    source = embeddings.metadata.get('utterance_id')
    return MultiTaskOutput(
        ppg_logits=FrameSequence(ppg_logits[0].cpu().numpy(), rate),
        tv_estimates=FrameSequence(tv[0].cpu().numpy(), rate),
        bnf=BottleneckFeatures(FrameSequence(bnf[0].cpu().numpy(), rate), source),
    )


def extract_bnf(embeddings: UpstreamEmbedding, model: AcousticModel) -> BottleneckFeatures:
    """Shared-trunk activations (the bottleneck layer) in evaluation mode"""
    model.require_ready()
    x = model.as_tensor(embeddings)
    model.network.eval()
    with torch.no_grad():
        bnf = model.network.shared_layers(x)
    rate = embeddings.frame_rate * model.config.upsample_factor
    metadata = {'kind': 'bnf'}
    source = embeddings.metadata.get('utterance_id')
    if source:
        metadata['utterance_id'] = source
    return BottleneckFeatures(FrameSequence(bnf[0].cpu().numpy(), rate, metadata), source)


def aligned_length(*lengths: int, tolerance: int = TRUNCATION_TOLERANCE) -> int:
    if max(lengths) - min(lengths) > tolerance:
        raise ShapeError(f'frame counts {list(lengths)} differ by more than {tolerance} frames')
    return min(lengths)


def loss_terms(ppg_logits: torch.Tensor, tv_estimates: torch.Tensor,
               ppg_target: torch.Tensor, tv_target: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(TV mean absolute error, PPG soft cross entropy in nats) over the common frames

    Tensors are (batch, frames, channels); frames may differ by the truncation tolerance.
    """
    frames = aligned_length(ppg_logits.shape[-2], tv_estimates.shape[-2],
                            ppg_target.shape[-2], tv_target.shape[-2])
    if frames == 0:
        raise ValidationError('cannot compute a loss over zero frames')
    tv_loss = (tv_estimates[..., :frames, :] - tv_target[..., :frames, :]).abs().mean()
    log_probs = F.log_softmax(ppg_logits[..., :frames, :], dim=-1)
    ppg_loss = -(ppg_target[..., :frames, :] * log_probs).sum(dim=-1).mean()
    return tv_loss, ppg_loss


def combined_loss_tensor(ppg_logits, tv_estimates, ppg_target, tv_target,
                         weights: LossWeights) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    tv_loss, ppg_loss = loss_terms(ppg_logits, tv_estimates, ppg_target, tv_target)
    return weights.alpha * tv_loss + (1.0 - weights.alpha) * ppg_loss, tv_loss, ppg_loss


def _as_float64(seq: FrameSequence) -> torch.Tensor:
    return torch.as_tensor(np.asarray(seq.values), dtype=torch.float64)


def combined_loss(output: MultiTaskOutput, ppg_target: PosteriorgramTrack,
                  tv_target: TractVariableTrack, weights: LossWeights) -> CombinedLossReport:
    """alpha * TV MAE + (1 - alpha) * PPG cross entropy, computed in float64"""
    tv_loss, ppg_loss = loss_terms(_as_float64(output.ppg_logits), _as_float64(output.tv_estimates),
                                   _as_float64(ppg_target), _as_float64(tv_target))
    return CombinedLossReport.from_parts(tv_loss.item(), ppg_loss.item(), weights)


def posterior_rmse(output: MultiTaskOutput, ppg_target: PosteriorgramTrack) -> float:
    """RMSE between softmax(ppg_logits) and the target posteriors (validation metric only)"""
    frames = aligned_length(output.num_frames, ppg_target.num_frames)
    logits = torch.as_tensor(output.ppg_logits.values[:frames], dtype=torch.float64)
    estimate = torch.softmax(logits, dim=-1).numpy()
    target = np.asarray(ppg_target.values[:frames], dtype=np.float64)
    return float(np.sqrt(np.mean((estimate - target) ** 2)))


def make_variant(name: str, base: Optional[AcousticModelConfig] = None) -> Tuple[AcousticModelConfig, LossWeights]:
    """ppg_only / combined / tv_only share one architecture and differ only in alpha"""
    weights = LossWeights.for_variant(name)
    return replace(base or AcousticModelConfig()), weights


def save_checkpoint(model: AcousticModel, directory, training: Optional[dict] = None) -> Path:
    """Directory with config.json (portable contract) and parameters.pt"""
    model.require_ready()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    document = {
        'model': model.config.to_dict(),
        'alpha': model.weights.alpha,
        'variant': next((k for k, v in VARIANT_ALPHAS.items() if v == model.weights.alpha), None),
        'training': {**model.metadata, **(training or {})},
    }
    with open(out / CONFIG_FILE, 'w') as f:
        json.dump(document, f, indent=2)
    torch.save(model.network.state_dict(), out / PARAMETERS_FILE)
    logger.info('saved acoustic model checkpoint to %s', out)
    return out


@contextmanager
def checkpoint_errors(what: str, source: Path):
    """Re-raise I/O, decoding and state-dict failures as CheckpointError"""
    try:
        yield
    except FacError:
        raise
    except (OSError, ValueError, KeyError, TypeError, EOFError, RuntimeError, pickle.UnpicklingError) as e:
        raise CheckpointError(f'{what} checkpoint at {source}: {e}') from e


def read_checkpoint(directory, what: str) -> Tuple[Path, dict, dict]:
    """(directory, config document, parameter state) of a saved checkpoint"""
    source = Path(directory)
    if not (source / CONFIG_FILE).exists():
        raise ModelStateError(f'no {what} checkpoint at {source}')
    with checkpoint_errors(what, source):
        with open(source / CONFIG_FILE, 'r') as f:
            document = json.load(f)
        state = torch.load(source / PARAMETERS_FILE, map_location='cpu')
    return source, document, state


def load_checkpoint(directory) -> AcousticModel:
    source, document, state = read_checkpoint(directory, 'acoustic model')
    with checkpoint_errors('acoustic model', source):
        model = AcousticModel(AcousticModelConfig.from_dict(document['model']),
                              LossWeights(alpha=document['alpha']))
        model.network.load_state_dict(state)
    model.initialized = True
    model.metadata = dict(document.get('training', {}))
    model.metadata['checkpoint'] = str(source)
    return model
