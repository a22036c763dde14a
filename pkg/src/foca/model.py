"""Downstream networks: unimodal CNN, FOCA, and the two fusion baselines.

All networks consume raw feature vectors of shape ``(batch, L)``; each
vector is treated as a one-channel signal. Every network returns logits
plus a dict of auxiliaries (penultimate activations, attention maps).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .hca import HyperbolicCrossAttention, hca_forward
from .poincare import DTYPE

MODES = ("foca", "euclid-xattn", "concat", "audio", "visual")
FUSION_MODES = ("foca", "euclid-xattn", "concat")


@dataclass
class ModelConfig:
    mode: str
    d_audio: int
    d_visual: int
    n_classes: int
    conv_channels: tuple[int, int] = (64, 128)
    kernel_size: int = 3
    head_sizes: tuple[int, int] = (120, 30)
    unimodal_hidden: int = 128
    dropout: float = 0.3
    hca_init: str = "uniform"
    # multiplies conv tokens before the exponential map; None means 1/sqrt(channels)
    tangent_scale: float | None = None

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.head_sizes = tuple(self.head_sizes)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for name, dim in (("d_audio", self.d_audio), ("d_visual", self.d_visual)):
            if conv_out_length(dim, self.kernel_size) < 1:
                raise ValueError(f"{name}={dim} is too short for two valid convolutions and pools")

    @property
    def tokens(self) -> int:
        """Token count fed to the fusion layer (shorter modality wins)."""
        n_a = conv_out_length(self.d_audio, self.kernel_size)
        n_v = conv_out_length(self.d_visual, self.kernel_size)
        if self.mode == "audio":
            return n_a
        if self.mode == "visual":
            return n_v
        return min(n_a, n_v)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["head_sizes"] = list(self.head_sizes)
        return d


def conv_out_length(length: int, kernel_size: int = 3) -> int:
    """Temporal length after (valid conv, pool 2) twice."""
    n = (length - kernel_size + 1) // 2
    n = (n - kernel_size + 1) // 2
    return max(n, 0)


class ConvBlock(nn.Module):
    """conv(k) -> ReLU -> maxpool(2) -> conv(k) -> ReLU -> maxpool(2), channel-last output."""

    def __init__(self, channels=(64, 128), kernel_size: int = 3):
        super().__init__()
        c1, c2 = channels
        self.conv1 = nn.Conv1d(1, c1, kernel_size, dtype=DTYPE)
        self.conv2 = nn.Conv1d(c1, c2, kernel_size, dtype=DTYPE)
        self.kernel_size = kernel_size

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < 1 or conv_out_length(x.shape[-1], self.kernel_size) < 1:
            raise ValueError(f"input length {x.shape[-1]} too short for the conv block")
        h = x.to(DTYPE).unsqueeze(1)
        h = F.max_pool1d(F.relu(self.conv1(h)), 2)
        h = F.max_pool1d(F.relu(self.conv2(h)), 2)
        return h.transpose(1, 2)  # (batch, n, channels)


def conv_block_forward(x: torch.Tensor, block: ConvBlock) -> torch.Tensor:
    return block(x)


class Head(nn.Module):
    """FC -> ReLU -> dropout, repeated, then a linear output layer."""

    def __init__(self, in_features: int, hidden: tuple[int, ...], n_classes: int, dropout: float):
        super().__init__()
        sizes = (in_features, *hidden)
        self.hidden = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(sizes[:-1], sizes[1:]))
        self.out = nn.Linear(sizes[-1], n_classes, dtype=DTYPE)
        self.dropout = dropout

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        penultimate = x
        for layer in self.hidden:
            penultimate = F.relu(layer(x))
            x = F.dropout(penultimate, self.dropout, self.training)
        return self.out(x), penultimate


class UnimodalNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.modality = cfg.mode
        self.conv = ConvBlock(cfg.conv_channels, cfg.kernel_size)
        self.head = Head(cfg.tokens * cfg.conv_channels[1], (cfg.unimodal_hidden,), cfg.n_classes, cfg.dropout)

    def forward(self, x_audio, x_visual):
        x = x_audio if self.modality == "audio" else x_visual
        logits, pen = self.head(self.conv(x).flatten(1))
        return logits, {"penultimate": pen}


class _FusionNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.conv_audio = ConvBlock(cfg.conv_channels, cfg.kernel_size)
        self.conv_visual = ConvBlock(cfg.conv_channels, cfg.kernel_size)
        self.n = cfg.tokens
        self.d = cfg.conv_channels[1]
        self.head = Head(self.head_width(), cfg.head_sizes, cfg.n_classes, cfg.dropout)

    def head_width(self) -> int:
        return self.n * self.d

    def tokens(self, x_audio, x_visual) -> tuple[torch.Tensor, torch.Tensor]:
        h_a = self.conv_audio(x_audio)[:, : self.n]
        h_v = self.conv_visual(x_visual)[:, : self.n]
        return h_a, h_v

    def fuse(self, h_a, h_v) -> tuple[torch.Tensor, dict]:
        raise NotImplementedError

    def forward(self, x_audio, x_visual):
        fused, aux = self.fuse(*self.tokens(x_audio, x_visual))
        logits, pen = self.head(fused.flatten(1))
        aux["penultimate"] = pen
        return logits, aux


class FocaNet(_FusionNet):
    def __init__(self, cfg: ModelConfig, generator: torch.Generator | None = None):
        super().__init__(cfg)
        self.hca = HyperbolicCrossAttention(self.d, cfg.hca_init, generator)
        self.tangent_scale = cfg.tangent_scale if cfg.tangent_scale is not None else 1.0 / math.sqrt(self.d)

    def fuse(self, h_a, h_v):
        s = self.tangent_scale
        out = hca_forward(h_a * s, h_v * s, self.hca)
        return out.fused, {"alpha_av": out.alpha_av, "alpha_va": out.alpha_va}


class ConcatNet(_FusionNet):
    def head_width(self) -> int:
        return 2 * self.n * self.d

    def fuse(self, h_a, h_v):
        return torch.cat([h_a.flatten(1), h_v.flatten(1)], dim=1), {}


def euclidean_attention(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1)


class EuclidXattnNet(_FusionNet):
    """Same layout as FOCA with scaled dot-product attention in place of HCA."""

    names = HyperbolicCrossAttention.names

    def __init__(self, cfg: ModelConfig, generator: torch.Generator | None = None):
        super().__init__(cfg)
        # share the HCA parameter container so inits and counts line up
        self.attn = HyperbolicCrossAttention(self.d, cfg.hca_init, generator)

    def fuse(self, h_a, h_v):
        w = self.attn.weights()
        q_a, k_a, v_a = (h_a @ w[n].T for n in ("q_a", "k_a", "v_a"))
        q_v, k_v, v_v = (h_v @ w[n].T for n in ("q_v", "k_v", "v_v"))
        alpha_av = euclidean_attention(q_a, k_v)
        alpha_va = euclidean_attention(q_v, k_a)
        fused = alpha_av @ v_v + alpha_va @ v_a
        return fused, {"alpha_av": alpha_av, "alpha_va": alpha_va}


def build_model(cfg: ModelConfig, seed: int = 0) -> nn.Module:
    """Construct a freshly initialised network; identical seeds give identical weights."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    if cfg.mode in ("audio", "visual"):
        model = UnimodalNet(cfg)
    elif cfg.mode == "concat":
        model = ConcatNet(cfg)
    elif cfg.mode == "foca":
        model = FocaNet(cfg, gen)
    else:
        model = EuclidXattnNet(cfg, gen)
    if cfg.hca_init == "identity" and cfg.mode in FUSION_MODES:
        # tie the visual conv block to the audio one so mirrored inputs stay mirrored
        model.conv_visual.load_state_dict(model.conv_audio.state_dict())
    return model


def predict_proba(model: nn.Module, x_audio, x_visual) -> torch.Tensor:
    logits, _ = model(x_audio, x_visual)
    return torch.softmax(logits, dim=-1)


def count_params(model: nn.Module) -> "OrderedDict[str, int]":
    """Trainable scalars per layer, keyed by parameter prefix, plus a ``total``."""
    report: OrderedDict[str, int] = OrderedDict()
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        layer = name.rsplit(".", 1)[0] if name.endswith((".weight", ".bias")) else name
        report[layer] = report.get(layer, 0) + p.numel()
    report["total"] = sum(report.values())
    return report
