import torch
import torch.nn as nn
import torch.nn.functional as F


def conv_block(in_channels, out_channels):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.LeakyReLU(),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.LeakyReLU(),
    )


class UNet2D(nn.Module):
    """
    Encoder-decoder with skip connections: three downsamplings, channel widths
    doubling from ``base_width``, dropout after the two deepest encoder stages.
    Maps (B, 3, H, W) images to (B, out_features, H, W) feature maps.
    """

    def __init__(self, out_features=64, base_width=16, dropout=0.3, in_channels=3):
        super().__init__()
        widths = [base_width * 2**i for i in range(4)]

        self.enc_0 = conv_block(in_channels, widths[0])
        self.enc_1 = conv_block(widths[0], widths[1])
        self.enc_2 = conv_block(widths[1], widths[2])
        self.enc_3 = conv_block(widths[2], widths[3])
        self.drop_2 = nn.Dropout2d(dropout)
        self.drop_3 = nn.Dropout2d(dropout)

        self.dec_2 = conv_block(widths[3] + widths[2], widths[2])
        self.dec_1 = conv_block(widths[2] + widths[1], widths[1])
        self.dec_0 = conv_block(widths[1] + widths[0], widths[0])
        self.output = nn.Conv2d(widths[0], out_features, kernel_size=1)

    @staticmethod
    def _up(x, skip):
        # nearest upsampling to the skip size handles odd resolutions
        x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
        return torch.cat([x, skip], dim=1)

    def forward(self, x):
        s0 = self.enc_0(x)
        s1 = self.enc_1(F.max_pool2d(s0, 2, ceil_mode=True))
        s2 = self.drop_2(self.enc_2(F.max_pool2d(s1, 2, ceil_mode=True)))
        s3 = self.drop_3(self.enc_3(F.max_pool2d(s2, 2, ceil_mode=True)))

        x = self.dec_2(self._up(s3, s2))
        x = self.dec_1(self._up(x, s1))
        x = self.dec_0(self._up(x, s0))
        return self.output(x)
