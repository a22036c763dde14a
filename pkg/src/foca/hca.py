"""Hyperbolic cross-attention between two token sequences.

Both sequences are mapped into the Poincaré ball, queries/keys/values are
formed by Möbius matrix application, attention scores are softmaxed
negative hyperbolic distances, values are aggregated with Möbius scalar
multiplication and a left fold of Möbius additions, and the two
directions are fused with one more Möbius addition before returning to
the tangent space at the origin.

Shapes: sequences are ``(..., n, d)``; attention maps ``(..., n_q, n_k)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

from . import poincare as pb

AUDIO = "a"
VISUAL = "v"
DIRECTIONS = ("a->v", "v->a")


def project_to_ball(h) -> torch.Tensor:
    """Row-wise exponential map at the origin."""
    return pb.exp_origin(h)


def make_qkv(h_ball: torch.Tensor, w_q, w_k, w_v) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        pb.mobius_matvec(w_q, h_ball),
        pb.mobius_matvec(w_k, h_ball),
        pb.mobius_matvec(w_v, h_ball),
    )


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax of ``-d(q_i, k_j)``."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    scores = -pb.pairwise_distance(q, k)
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(scores)
    return e / e.sum(dim=-1, keepdim=True)


def aggregate(alpha: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``O_i = (α_i0 ⊗ v_0) ⊕ (α_i1 ⊗ v_1) ⊕ ...`` folded left in key order."""
    n_k = v.shape[-2]
    if alpha.shape[-1] != n_k:
        raise ValueError(f"attention has {alpha.shape[-1]} columns but there are {n_k} values")
    out = None
    for j in range(n_k):
        term = pb.mobius_scalar(alpha[..., :, j : j + 1], v[..., j : j + 1, :])
        out = term if out is None else pb.mobius_add(out, term)
    return out


def fuse(o_av: torch.Tensor, o_va: torch.Tensor) -> torch.Tensor:
    """Möbius-add the two directions row-wise and map back to the tangent space."""
    if o_av.shape != o_va.shape:
        raise ValueError(f"cannot fuse shapes {tuple(o_av.shape)} and {tuple(o_va.shape)}")
    return pb.log_origin(pb.mobius_add(o_av, o_va))


class HcaOutput(NamedTuple):
    fused: torch.Tensor
    alpha_av: torch.Tensor
    alpha_va: torch.Tensor


def hca_forward(h_a, h_v, params: "HyperbolicCrossAttention | dict") -> HcaOutput:
    """Full bidirectional hyperbolic cross-attention.

    ``params`` is either a :class:`HyperbolicCrossAttention` module or a
    mapping with keys ``q_a, k_a, v_a, q_v, k_v, v_v``.
    """
    h_a = pb.as_tensor(h_a)
    h_v = pb.as_tensor(h_v)
    if h_a.shape != h_v.shape:
        raise ValueError(f"audio tokens {tuple(h_a.shape)} and visual tokens {tuple(h_v.shape)} differ in shape")
    w = params.weights() if isinstance(params, HyperbolicCrossAttention) else params

    q_a, k_a, v_a = make_qkv(project_to_ball(h_a), w["q_a"], w["k_a"], w["v_a"])
    q_v, k_v, v_v = make_qkv(project_to_ball(h_v), w["q_v"], w["k_v"], w["v_v"])

    alpha_av = attention_weights(q_a, k_v)
    alpha_va = attention_weights(q_v, k_a)
    o_av = aggregate(alpha_av, v_v)
    o_va = aggregate(alpha_va, v_a)
    return HcaOutput(fuse(o_av, o_va), alpha_av, alpha_va)


class HyperbolicCrossAttention(nn.Module):
    """Six square projection matrices, no biases.

    Weights start uniform in ``[-1/sqrt(d), 1/sqrt(d)]``; ``init="identity"``
    starts every matrix at the identity instead.
    """

    names = ("q_a", "k_a", "v_a", "q_v", "k_v", "v_v")

    def __init__(self, d: int, init: str = "uniform", generator: torch.Generator | None = None):
        super().__init__()
        self.d = d
        bound = 1.0 / math.sqrt(d)
        for name in self.names:
            if init == "identity":
                w = torch.eye(d, dtype=pb.DTYPE)
            elif init == "uniform":
                w = (torch.rand(d, d, generator=generator, dtype=pb.DTYPE) * 2.0 - 1.0) * bound
            else:
                raise ValueError(f"unknown init {init!r}")
            self.register_parameter(name, nn.Parameter(w))

    def weights(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in self.names}

    def forward(self, h_a: torch.Tensor, h_v: torch.Tensor) -> HcaOutput:
        return hca_forward(h_a, h_v, self)
