"""The correction U-Net in torch, mirroring the inference-side topology.

Five encoder levels of double 3x3 zero-padded convolutions with ReLU, 2x2
max-pooling down, 2x2 stride-2 transposed convolutions up, skip
concatenation with the skip channels FIRST, and a final 1x1 convolution.
No normalization layer anywhere: the output norm is the downstream quality
signal and must stay free.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def default_widths(base: int = 64) -> tuple[int, ...]:
    return (base, 2 * base, 4 * base, 8 * base, 16 * base)


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.conv2(self.act(self.conv1(x))))


class CorrectionUnet(nn.Module):
    """Maps a 4-channel (state, gradient) stack to a 2-channel state."""

    def __init__(self, widths=default_widths(), in_channels: int = 4,
                 out_channels: int = 2):
        super().__init__()
        self.widths = tuple(widths)
        self.in_channels = in_channels
        self.out_channels = out_channels

        self.encoders = nn.ModuleList()
        prev = in_channels
        for w in self.widths:
            self.encoders.append(DoubleConv(prev, w))
            prev = w
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for lvl in range(len(self.widths) - 1, 0, -1):
            hi, lo = self.widths[lvl], self.widths[lvl - 1]
            self.ups.append(nn.ConvTranspose2d(hi, lo, 2, stride=2))
            self.decoders.append(DoubleConv(2 * lo, lo))
        self.out = nn.Conv2d(self.widths[0], out_channels, 1)

    @property
    def pool_factor(self) -> int:
        return 2 ** (len(self.widths) - 1)

    def forward(self, x):
        skips = []
        t = x
        for i, enc in enumerate(self.encoders):
            if i > 0:
                t = self.pool(t)
            t = enc(t)
            skips.append(t)
        for i, (up, dec) in enumerate(zip(self.ups, self.decoders)):
            t = up(t)
            skip = skips[len(self.widths) - 2 - i]
            t = dec(torch.cat([skip, t], dim=1))
        return self.out(t)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def gradient_step_init(model: CorrectionUnet, step: float = 1.0) -> CorrectionUnet:
    """Warm-start the network as one solver step: output = state - step * gradient.

    The input channels are [Re phi, Im phi, Re g, Im g].  enc1.conv1 is set
    to signed center-tap rails (+c and -c per channel, so ReLU preserves
    the signal as nonnegative rail pairs), enc1.conv2 and the level-1
    decoder pass the rails through the skip connection, and the output
    convolution recombines them to phi - step * g.  Deeper levels keep
    their default random init and are wired in by training; starting from
    the classical step puts the optimizer inside the correction basin
    instead of the predict-the-mean plateau.

    Requires the first width >= 2 * in_channels (8 rails for 4 channels).
    """
    w1 = model.encoders[0].conv1
    w2 = model.encoders[0].conv2
    c_in = model.in_channels
    rails = 2 * c_in
    if w1.out_channels < rails:
        raise ValueError(
            f"gradient-step init needs first width >= {rails}, "
            f"got {w1.out_channels}"
        )
    dec = model.decoders[-1]  # lands on level 1
    with torch.no_grad():
        w1.weight.zero_()
        w1.bias.zero_()
        for c in range(c_in):
            w1.weight[2 * c, c, 1, 1] = 1.0
            w1.weight[2 * c + 1, c, 1, 1] = -1.0
        w2.weight.zero_()
        w2.bias.zero_()
        for k in range(w2.out_channels):
            w2.weight[k, k, 1, 1] = 1.0
        # skip channels sit first in the concatenation
        dec.conv1.weight.zero_()
        dec.conv1.bias.zero_()
        for k in range(min(rails, dec.conv1.out_channels)):
            dec.conv1.weight[k, k, 1, 1] = 1.0
        dec.conv2.weight.zero_()
        dec.conv2.bias.zero_()
        for k in range(dec.conv2.out_channels):
            dec.conv2.weight[k, k, 1, 1] = 1.0
        model.out.weight.zero_()
        model.out.bias.zero_()
        for c_out, base in ((0, 0), (1, 2)):
            model.out.weight[c_out, base, 0, 0] = 1.0
            model.out.weight[c_out, base + 1, 0, 0] = -1.0
            model.out.weight[c_out, base + 4, 0, 0] = -step
            model.out.weight[c_out, base + 5, 0, 0] = step
    return model
