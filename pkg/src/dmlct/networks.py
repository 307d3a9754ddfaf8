"""Generator G = C2 . C1 . E, projection heads, patch discriminator, checkpoints."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import CtImage
from .metric import PatchEmbeddingSet
from .wavelet import split_bands


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 1
    base_channels: int = 64
    num_rrdb_blocks: int = 6
    growth_channels: int = 32
    out_channels: int = 1
    residual_scale: float = 0.2


@dataclass(frozen=True)
class ProjectionSpec:
    embed_dim: int = 256
    downsample_2x2: bool = False
    hidden_dim: int = 256


@dataclass(frozen=True)
class DiscriminatorSpec:
    num_blocks: int = 3
    base_channels: int = 64
    stride: int = 2


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualDenseBlock(nn.Module):
    def __init__(self, channels: int, growth: int, scale: float = 0.2):
        super().__init__()
        self.scale = scale
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, 1, 1) for i in range(4)
        )
        self.fuse = nn.Conv2d(channels + 4 * growth, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, 1))))
        return x + self.scale * self.fuse(torch.cat(feats, 1))


class RRDB(nn.Module):
    def __init__(self, channels: int, growth: int, scale: float = 0.2):
        super().__init__()
        self.scale = scale
        self.blocks = nn.Sequential(*(ResidualDenseBlock(channels, growth, scale) for _ in range(3)))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.scale * self.blocks(x)


class Encoder(nn.Module):
    """Conv layer followed by an RRDB trunk with a long skip connection."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        c = spec.base_channels
        self.head = nn.Conv2d(spec.in_channels, c, 3, 1, 1)
        self.trunk = nn.Sequential(
            *(RRDB(c, spec.growth_channels, spec.residual_scale) for _ in range(spec.num_rrdb_blocks))
        )
        self.trunk_conv = nn.Conv2d(c, c, 3, 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        h = self.head(x)
        return h + self.trunk_conv(self.trunk(h))


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        self.encoder = Encoder(spec)
        self.c1 = nn.Sequential(nn.Conv2d(c, c, 3, 1, 1), nn.LeakyReLU(0.2))
        self.c2 = nn.Conv2d(c, spec.out_channels, 3, 1, 1)
        _init_weights(self)

    def features(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Feature taps (E(x), C1(E(x))) used by the metric loss."""
        f1 = self.encoder(x)
        return f1, self.c1(f1)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        f1, f2 = self.features(x)
        return self.c2(f2), f1, f2


def generator_forward(gen: Generator, x_hf: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Run G on a (1, H, W) or (B, 1, H, W) HF image; returns (y_hf, feat1, feat2)."""
    single = x_hf.ndim == 3
    x = x_hf.unsqueeze(0) if single else x_hf
    if x.ndim != 4 or x.shape[1] != gen.spec.in_channels:
        raise ShapeError(f"expected (B, {gen.spec.in_channels}, H, W) input, got {tuple(x_hf.shape)}")
    h, w = x.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeError(f"spatial size {h}x{w} must be divisible by 4")
    y, f1, f2 = gen(x)
    if single:
        return y[0], f1[0], f2[0]
    return y, f1, f2


class ProjectionHead(nn.Module):
    """Per-location MLP (two 1x1 convs) with optional 2x2 average pooling and L2 norm."""

    def __init__(self, in_channels: int, spec: ProjectionSpec = ProjectionSpec()):
        super().__init__()
        self.spec = spec
        self.mlp = nn.Sequential(
            nn.Linear(in_channels, spec.hidden_dim), nn.ReLU(), nn.Linear(spec.hidden_dim, spec.embed_dim)
        )
        _init_weights(self)

    def grid_shape(self, feat_shape) -> tuple[int, int]:
        h, w = feat_shape[-2:]
        return (h // 2, w // 2) if self.spec.downsample_2x2 else (h, w)

    def forward(self, feat: Tensor) -> Tensor:
        """Dense embedding map (B, D, H', W'), unit norm along D."""
        out = self.mlp(feat.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        if self.spec.downsample_2x2:
            out = F.avg_pool2d(out, 2)
        return F.normalize(out, dim=1, eps=1e-12)

    def sample(self, feat: Tensor, locations) -> Tensor:
        """Embeddings at grid ``locations`` only; same values as indexing :meth:`forward`.

        ``feat`` is (B, C, H, W); ``locations`` is (K, 2) shared by the batch or
        (B, K, 2) per item. Returns (B, K, D).
        """
        b, c, h, w = feat.shape
        loc = torch.as_tensor(np.asarray(locations), dtype=torch.long)
        if loc.ndim == 2:
            loc = loc.unsqueeze(0).expand(b, -1, -1)
        gh, gw = self.grid_shape(feat.shape)
        rows, cols = loc[..., 0], loc[..., 1]
        if bool(((rows < 0) | (rows >= gh) | (cols < 0) | (cols >= gw)).any()):
            raise IndexError(f"location out of range for a {gh}x{gw} embedding grid")
        flat = feat.flatten(2)
        if self.spec.downsample_2x2:
            offsets = [(0, 0), (0, 1), (1, 0), (1, 1)]
            idx = torch.stack([(2 * rows + a) * w + (2 * cols + bb) for a, bb in offsets], -1)
            gathered = torch.gather(flat, 2, idx.flatten(1).unsqueeze(1).expand(-1, c, -1))
            vec = self.mlp(gathered.transpose(1, 2)).reshape(b, loc.shape[1], 4, -1).mean(2)
        else:
            idx = rows * w + cols
            gathered = torch.gather(flat, 2, idx.unsqueeze(1).expand(-1, c, -1))
            vec = self.mlp(gathered.transpose(1, 2))
        return F.normalize(vec, dim=-1, eps=1e-12)


def project_features(feat: Tensor, head: ProjectionHead, locations, depth_tag: int = 1,
                     source_tag: str = "x") -> PatchEmbeddingSet:
    """Embed a single (C, H, W) feature map at ``locations`` (grid of the pooled map if pooling)."""
    if feat.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) feature map, got {tuple(feat.shape)}")
    locations = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
    vec = head.sample(feat.unsqueeze(0), locations)[0]
    return PatchEmbeddingSet(vec, locations, depth_tag, source_tag)


class Discriminator(nn.Module):
    """Patch discriminator: strided conv blocks then a 1x1 conv to a score map."""

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec(), in_channels: int = 1):
        super().__init__()
        self.spec = spec
        layers = []
        ch_in, ch = in_channels, spec.base_channels
        for _ in range(spec.num_blocks):
            layers += [
                nn.Conv2d(ch_in, ch, 4, spec.stride, 1),
                nn.InstanceNorm2d(ch),
                nn.LeakyReLU(0.2),
            ]
            ch_in, ch = ch, ch * 2
        layers.append(nn.Conv2d(ch_in, 1, 1))
        self.net = nn.Sequential(*layers)
        _init_weights(self)

    @property
    def min_size(self) -> int:
        return 2 * self.spec.stride ** self.spec.num_blocks

    def forward(self, img: Tensor) -> Tensor:
        h, w = img.shape[-2:]
        if min(h, w) < self.min_size:
            raise ShapeError(f"discriminator input {h}x{w} smaller than {self.min_size}x{self.min_size}")
        return self.net(img)


def discriminator_forward(disc: Discriminator, img: Tensor) -> Tensor:
    single = img.ndim == 3
    out = disc(img.unsqueeze(0) if single else img)
    return out[0] if single else out


def _param_dtype(module) -> torch.dtype:
    if isinstance(module, nn.Module):
        for p in module.parameters():
            return p.dtype
    return torch.float64


@torch.no_grad()
def denoise_full(x: CtImage, gen, level: int, filter_name: str = "db3", hf_scale: float = 3000.0) -> CtImage:
    """low_freq(x) + G(high_freq(x)) on a whole slice.

    ``gen`` may be a :class:`Generator` or any callable on (1, 1, H, W) tensors
    returning a tensor (or a tuple whose first item is the output).
    """
    hf, lf = split_bands(x.pixels, level, filter_name)
    h, w = hf.shape
    ph, pw = (-h) % 4, (-w) % 4
    dtype = _param_dtype(gen)
    t = torch.as_tensor(hf / hf_scale, dtype=dtype)[None, None]
    if ph or pw:
        t = F.pad(t, (0, pw, 0, ph), mode="reflect")
    was_training = getattr(gen, "training", False)
    if was_training:
        gen.eval()
    try:
        out = gen(t)
    finally:
        if was_training:
            gen.train()
    if isinstance(out, (tuple, list)):
        out = out[0]
    y_hf = out[0, 0, :h, :w].double().numpy() * hf_scale
    return replace(
        x,
        pixels=lf + y_hf,
        domain_tag="output",
        provenance=x.provenance + (f"denoise_full(level={level}, filter={filter_name})",),
    )


CHECKPOINT_FORMAT = "dmlct-checkpoint/1"


def save_checkpoint(path, modules: dict, optimizers: dict, config: dict, epoch: int, extra: dict | None = None) -> None:
    """Write a checkpoint atomically (temp file + rename)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": int(epoch),
        "config": dict(config),
        "modules": {k: m.state_dict() for k, m in modules.items()},
        "optimizers": {k: o.state_dict() for k, o in optimizers.items()},
        "extra": extra or {},
    }
    path = os.fspath(path)
    tmp = path + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(os.fspath(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return payload
