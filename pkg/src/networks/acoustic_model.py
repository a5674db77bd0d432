"""Multi-task acoustic network: BiLSTM trunk, frame up-sampling, PPG and TV heads"""

import torch
from torch import nn

from src.models.acoustic import AcousticModelConfig


class MultiTaskAcousticNetwork(nn.Module):
    """BiLSTM x N -> repeat up-sampling -> dropout -> linear (BNF) -> heads

    Inputs are (batch, frames, input_dim). The PPG head returns logits; the
    TV head is squashed with tanh so estimates stay inside (-1, 1).
    """

    def __init__(self, config: AcousticModelConfig):
        super().__init__()
        self.config = config
        self.trunk = nn.LSTM(
            input_size=config.input_dim,
            hidden_size=config.bilstm_hidden,
            num_layers=config.num_bilstm_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.dropout = nn.Dropout(config.dropout_rate)
        self.bottleneck = nn.Linear(2 * config.bilstm_hidden, config.bnf_dim)
        self.ppg_head = nn.Linear(config.bnf_dim, config.ppg_dim)
        self.tv_head = nn.Linear(config.bnf_dim, config.tv_dim)

    def trunk_parameters(self):
        return list(self.trunk.parameters()) + list(self.bottleneck.parameters())

    def shared_layers(self, x: torch.Tensor) -> torch.Tensor:
        batch, frames, _ = x.shape
        if frames == 0:
            return x.new_zeros(batch, 0, self.config.bnf_dim)
        hidden, _ = self.trunk(x)
        hidden = hidden.repeat_interleave(self.config.upsample_factor, dim=1)
        return self.bottleneck(self.dropout(hidden))

    def forward(self, x: torch.Tensor):
        bnf = self.shared_layers(x)
        return self.ppg_head(bnf), torch.tanh(self.tv_head(bnf)), bnf
