"""Reference encoder: log-mel -> fixed-length prosody vector"""

import torch
from torch import nn

from src.models.conversion import SynthesizerConfig
from src.models.features import MelSpectrogram


class ProsodyReferenceEncoder(nn.Module):
    """Strided 2-D convolutions over (time, mel), a GRU, then mean pooling over time"""

    def __init__(self, config: SynthesizerConfig):
        super().__init__()
        channels = config.prosody_conv_channels
        layers = []
        in_channels = 1
        freq = MelSpectrogram.NUM_CHANNELS
        for _ in range(config.prosody_conv_layers):
            layers += [
                nn.Conv2d(in_channels, channels, kernel_size=3, stride=2, padding=1),
                nn.ReLU(),
            ]
            in_channels = channels
            freq = (freq - 1) // 2 + 1
        self.convs = nn.Sequential(*layers)
        self.gru = nn.GRU(channels * freq, config.prosody_gru_units, batch_first=True)
        self.projection = nn.Linear(config.prosody_gru_units, config.prosody_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        # mel: (batch, frames, 80)
        x = self.convs(mel.unsqueeze(1))
        batch, channels, frames, freq = x.shape
        x = x.permute(0, 2, 1, 3).reshape(batch, frames, channels * freq)
        outputs, _ = self.gru(x)
        return torch.tanh(self.projection(outputs.mean(dim=1)))
