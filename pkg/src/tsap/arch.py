"""Layer specifications and shape algebra for the augmenter and the detector."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .tensor.core import conv_out_length
from .tensor.nn import transposed_out_length


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    relu: bool = False
    batchnorm: bool = False


@dataclass(frozen=True)
class FaugArch:
    K: int
    encoder: tuple[ConvSpec, ...]
    mlp_hidden: int = 16
    n_hyper: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(ConvSpec(**c) if isinstance(c, dict) else c
                                                  for c in self.encoder))
        lengths = self.encoder_lengths()
        if lengths[-1] < 1:
            raise ValueError(f"encoder collapses a series of length {self.K}")
        if self.decoder_lengths()[-1] != self.K:
            raise ValueError("decoder cannot reproduce the input length")
        if self.latent_shape != (self.encoder[-1].out_channels, lengths[-1]):
            raise ValueError("hyperparameter embedding must match the encoder feature map")

    def encoder_lengths(self) -> list[int]:
        lengths = [self.K]
        for c in self.encoder:
            lengths.append(conv_out_length(lengths[-1], c.kernel, c.stride, c.dilation))
        return lengths

    def output_paddings(self) -> list[int]:
        """Per decoder layer, the padding that lands exactly on the mirrored encoder length."""
        enc = self.encoder_lengths()
        pads = []
        for i in reversed(range(len(self.encoder))):
            c = self.encoder[i]
            base = transposed_out_length(enc[i + 1], c.kernel, c.stride, c.dilation)
            pads.append(enc[i] - base)
        return pads

    def decoder_channels(self) -> list[tuple[int, int]]:
        """(in, out) channels of each transposed layer, mirroring the encoder."""
        chans = [1] + [c.out_channels for c in self.encoder]
        return [(chans[i + 1], chans[i]) for i in reversed(range(len(self.encoder)))]

    def decoder_lengths(self) -> list[int]:
        enc = self.encoder_lengths()
        lengths = [enc[-1]]
        for (i, c), pad in zip(reversed(list(enumerate(self.encoder))), self.output_paddings()):
            if not 0 <= pad < max(c.stride, c.dilation):
                return lengths + [-1]
            lengths.append(transposed_out_length(lengths[-1], c.kernel, c.stride, c.dilation, pad))
        return lengths

    @property
    def latent_shape(self) -> tuple[int, int]:
        return self.encoder[-1].out_channels, self.encoder_lengths()[-1]

    @property
    def latent_dim(self) -> int:
        c, length = self.latent_shape
        return c * length

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DetectorArch:
    K: int
    encoder: tuple[ConvSpec, ...]
    pool_kernel: int
    pool_stride: int
    embed_dim: int = 10
    dropout: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(ConvSpec(**c) if isinstance(c, dict) else c
                                                  for c in self.encoder))
        if self.feature_lengths()[-1] < 1:
            raise ValueError(f"detector encoder collapses a series of length {self.K}")

    def feature_lengths(self) -> list[int]:
        lengths = [self.K]
        for c in self.encoder:
            lengths.append(conv_out_length(lengths[-1], c.kernel, c.stride, c.dilation))
        lengths.append(conv_out_length(lengths[-1], self.pool_kernel, self.pool_stride))
        return lengths

    @property
    def flat_features(self) -> int:
        return self.encoder[-1].out_channels * self.feature_lengths()[-1]

    def to_dict(self) -> dict:
        return asdict(self)


def paper_faug_arch(K: int = 2700) -> FaugArch:
    return FaugArch(K, (ConvSpec(64, 100, 4, relu=True, batchnorm=True), ConvSpec(64, 100, 4, relu=True)))


def desk_faug_arch(K: int = 256) -> FaugArch:
    return FaugArch(K, (ConvSpec(64, 16, 4, relu=True, batchnorm=True), ConvSpec(64, 16, 4, relu=True)))


def paper_detector_arch(K: int = 2700) -> DetectorArch:
    return DetectorArch(
        K,
        (ConvSpec(32, 10, 2, relu=True, batchnorm=True), ConvSpec(16, 10, 2, dilation=2),
         ConvSpec(8, 10, 4, dilation=4)),
        pool_kernel=10,
        pool_stride=3,
    )


def desk_detector_arch(K: int = 256) -> DetectorArch:
    return DetectorArch(
        K,
        (ConvSpec(32, 5, 2, relu=True, batchnorm=True), ConvSpec(16, 5, 2, dilation=2, relu=True),
         ConvSpec(8, 5, 4, dilation=4, relu=True)),
        pool_kernel=3,
        pool_stride=2,
    )
