"""Transformer seq2seq mel synthesizer conditioned on speaker and prosody vectors"""

import logging
import math
from typing import Optional, Tuple

import torch
from torch import nn

from src.models.conversion import SynthesizerConfig

logger = logging.getLogger(__name__)


def sinusoid_positions(length: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(length, device=device, dtype=dtype).unsqueeze(1)
    div_term = torch.exp(torch.arange(0, dim, 2, device=device, dtype=dtype) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, device=device, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term[:dim // 2])
    return table


class MelSynthesizerNetwork(nn.Module):
    """BNF encoder + autoregressive mel decoder with a stop head

    Speaker and prosody vectors are broadcast over time and concatenated to
    the encoder outputs before a projection back to model_dim.
    """

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        self.config = config
        d = config.model_dim
        self.encoder_input = nn.Linear(config.bnf_dim, d)
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(d, config.attention_heads, config.feedforward_dim,
                                       config.dropout_rate, batch_first=True),
            num_layers=config.encoder_layers,
            enable_nested_tensor=False,
        )
        self.condition = nn.Linear(d + config.speaker_dim + config.prosody_dim, d)
        self.prenet = nn.Sequential(
            nn.Linear(config.mel_dim, config.prenet_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate),
            nn.Linear(config.prenet_dim, d),
            nn.ReLU(),
        )
        self.decoder = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(d, config.attention_heads, config.feedforward_dim,
                                       config.dropout_rate, batch_first=True),
            num_layers=config.decoder_layers,
        )
        self.mel_out = nn.Linear(d, config.mel_dim)
        self.stop_out = nn.Linear(d, 1)

    def encode(self, bnf: torch.Tensor, speaker: torch.Tensor, prosody: torch.Tensor) -> torch.Tensor:
        x = self.encoder_input(bnf)
        x = x + sinusoid_positions(x.shape[1], x.shape[2], x.device, x.dtype)
        memory = self.encoder(x)
        frames = memory.shape[1]
        conditions = torch.cat([
            memory,
            speaker.unsqueeze(1).expand(-1, frames, -1),
            prosody.unsqueeze(1).expand(-1, frames, -1),
        ], dim=-1)
        return self.condition(conditions)

    def decode(self, memory: torch.Tensor, previous_frames: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """previous_frames: (batch, steps, mel_dim) starting with the all-zero go frame"""
        x = self.prenet(previous_frames)
        x = x + sinusoid_positions(x.shape[1], x.shape[2], x.device, x.dtype)
        mask = nn.Transformer.generate_square_subsequent_mask(x.shape[1], device=x.device, dtype=x.dtype)
        hidden = self.decoder(x, memory, tgt_mask=mask)
        return self.mel_out(hidden), self.stop_out(hidden).squeeze(-1)

    def forward(self, bnf, speaker, prosody, target_mel):
        """Teacher forcing: predict frame t from target frames < t"""
        memory = self.encode(bnf, speaker, prosody)
        go = target_mel.new_zeros(target_mel.shape[0], 1, target_mel.shape[2])
        previous = torch.cat([go, target_mel[:, :-1]], dim=1)
        return self.decode(memory, previous)

    @torch.no_grad()
    def infer(self, bnf, speaker, prosody, max_frames: Optional[int] = None,
              stop_threshold: Optional[float] = None):
        """Greedy decoding of a single utterance until the stop head fires or the cap is hit"""
        max_frames = max_frames or self.config.max_decode_frames
        stop_threshold = self.config.stop_threshold if stop_threshold is None else stop_threshold
        memory = self.encode(bnf, speaker, prosody)
        frames = bnf.new_zeros(1, 1, self.config.mel_dim)
        stop_logits = []
        stop_frame = None
        for step in range(max_frames):
            mel, stop = self.decode(memory, frames)
            frames = torch.cat([frames, mel[:, -1:]], dim=1)
            stop_logits.append(stop[:, -1])
            if torch.sigmoid(stop[0, -1]) > stop_threshold:
                stop_frame = step
                break
        return frames[:, 1:], torch.stack(stop_logits, dim=1), stop_frame
