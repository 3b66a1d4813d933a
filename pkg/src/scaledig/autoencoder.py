"""Small convolutional autoencoder defining the trainable latent space.

The encoder downsamples RGB images by a factor d through strided 3x3
convolutions; the decoder mirrors it with nearest-neighbour upsampling.
The architecture is data, not code: a stage list of (channels, stride)
pairs, so ablations and scale changes are configuration edits.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import glorot

KSIZE = 3


@dataclass(frozen=True)
class AEConfig:
    """Stage list (channels, stride) for the encoder; the decoder mirrors it."""

    stages: tuple = ((16, 2), (32, 2))
    c_lat: int = 4

    @property
    def d(self) -> int:
        out = 1
        for _, s in self.stages:
            out *= s
        return out

    @property
    def n_convs(self) -> int:
        # strided stack plus one resolution-preserving projection
        return len(self.stages) + 1


def _conv_names(cfg: AEConfig) -> list[str]:
    return [f"conv{i}" for i in range(cfg.n_convs)]


def init_encoder_params(rng: np.random.Generator, cfg: AEConfig,
                        dtype=np.float32) -> dict:
    """Fresh encoder arrays: strided tanh stack, then a linear latent head."""
    out = {}
    cin = 3
    for i, (ch, _) in enumerate(cfg.stages):
        out[f"conv{i}_w"] = glorot(rng, KSIZE * KSIZE * cin, KSIZE * KSIZE * ch,
                                   (KSIZE, KSIZE, cin, ch), dtype)
        out[f"conv{i}_b"] = np.zeros(ch, dtype=dtype)
        cin = ch
    i = len(cfg.stages)
    out[f"conv{i}_w"] = glorot(rng, KSIZE * KSIZE * cin,
                               KSIZE * KSIZE * cfg.c_lat,
                               (KSIZE, KSIZE, cin, cfg.c_lat), dtype)
    out[f"conv{i}_b"] = np.zeros(cfg.c_lat, dtype=dtype)
    return out


def init_decoder_params(rng: np.random.Generator, cfg: AEConfig,
                        dtype=np.float32) -> dict:
    """Fresh decoder arrays mirroring the encoder stages."""
    widths = [ch for ch, _ in cfg.stages]
    out = {}
    chain = [cfg.c_lat] + widths[::-1] + [3]
    for i in range(len(chain) - 1):
        cin, cout = chain[i], chain[i + 1]
        out[f"conv{i}_w"] = glorot(rng, KSIZE * KSIZE * cin,
                                   KSIZE * KSIZE * cout,
                                   (KSIZE, KSIZE, cin, cout), dtype)
        out[f"conv{i}_b"] = np.zeros(cout, dtype=dtype)
    return out


def params_from(lookup, group: str, cfg: AEConfig) -> dict:
    """Collect one side's conv parameters from a (group, name) lookup."""
    out = {}
    for i in range(cfg.n_convs):
        out[f"conv{i}_w"] = lookup(group, f"conv{i}_w")
        out[f"conv{i}_b"] = lookup(group, f"conv{i}_b")
    return out


def _batched(x):
    xv = ad.val(x)
    if xv.ndim == 3:
        return ad.reshape(x, (1,) + xv.shape), True
    if xv.ndim == 4:
        return x, False
    raise ValueError(f"expected HWC or NHWC input, got shape {xv.shape}")


def encode(x, phi: dict, cfg: AEConfig):
    """RGB image(s) -> latent image(s) of shape (H/d, W/d, C_lat)."""
    x, single = _batched(x)
    _, h, w, c = ad.val(x).shape
    if c != 3:
        raise ValueError(f"encoder expects 3 input channels, got {c}")
    if h % cfg.d or w % cfg.d:
        raise ValueError(f"image size {h}x{w} not divisible by factor {cfg.d}")
    out = x
    for i, (_, s) in enumerate(cfg.stages):
        out = ad.tanh(ad.conv2d(out, phi[f"conv{i}_w"], phi[f"conv{i}_b"],
                                stride=s, pad=1))
    i = len(cfg.stages)
    out = ad.conv2d(out, phi[f"conv{i}_w"], phi[f"conv{i}_b"], stride=1, pad=1)
    if single:
        shp = ad.val(out).shape[1:]
        out = ad.reshape(out, shp)
    return out


def decode(z, psi: dict, cfg: AEConfig):
    """Latent image(s) -> RGB image(s) in [0,1] of shape (H, W, 3)."""
    z, single = _batched(z)
    c = ad.val(z).shape[3]
    if c != cfg.c_lat:
        raise ValueError(f"decoder expects {cfg.c_lat} latent channels, got {c}")
    out = ad.tanh(ad.conv2d(z, psi["conv0_w"], psi["conv0_b"],
                            stride=1, pad=1))
    strides = [s for _, s in cfg.stages]
    idx = 1
    for si in range(len(strides) - 1, -1, -1):
        out = ad.upsample2(out, strides[si])
        conv = ad.conv2d(out, psi[f"conv{idx}_w"], psi[f"conv{idx}_b"],
                         stride=1, pad=1)
        out = ad.sigmoid(conv) if si == 0 else ad.tanh(conv)
        idx += 1
    if single:
        shp = ad.val(out).shape[1:]
        out = ad.reshape(out, shp)
    return out


def reconstruct(x, phi: dict, psi: dict, cfg: AEConfig):
    """Round trip decode(encode(x)); the autoencoder training signal."""
    return decode(encode(x, phi, cfg), psi, cfg)
