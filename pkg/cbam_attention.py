# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
CBAM Attention Module
============================================================================
Convolutional Block Attention Module, applicato dopo ogni blocco:

  channel attention:  M_c = σ(MLP(avg_spatial(F)) + MLP(max_spatial(F)))
                      F'  = M_c ⊙ F
  spatial attention:  M_s = σ(conv7x7([avg_channels(F'); max_channels(F')]))
                      F'' = M_s ⊙ F'

Il MLP (C → C/r → C, ReLU in mezzo) ha un solo set di pesi usato da
entrambi i rami. Ordine fisso: prima canale, poi spazio.
============================================================================
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from config import CONFIG
from nn_layers import Conv2DLayer, Layer, LayerConfigError, he_normal
from tensor_autodiff import (
    Parameter,
    Tensor,
    add,
    broadcast_mul,
    concat_channels,
    matmul,
    max_channels,
    max_spatial,
    mean_channels,
    mean_spatial,
    relu,
    sigmoid,
)

logger = logging.getLogger(__name__)

# ============================================================================
# CHANNEL ATTENTION
# ============================================================================

class ChannelAttention(Layer):
    """
    Attenzione sui canali con MLP condiviso.

    Args:
        channels: C
        reduction_ratio: r, deve dividere C
        name: prefisso parametri
        rng: Generator per l'inizializzazione
        mlp_bias: bias su entrambi i layer del MLP
    """

    kind = "channel_attention"

    def __init__(
        self,
        channels: int,
        reduction_ratio: int,
        name: str,
        rng: Optional[np.random.Generator] = None,
        mlp_bias: bool = CONFIG['MLP_BIAS']
    ):
        super().__init__(name)
        if reduction_ratio < 1 or channels % reduction_ratio != 0:
            raise LayerConfigError(
                f"{name}: reduction ratio {reduction_ratio} non divide {channels} canali"
            )

        rng = rng if rng is not None else np.random.default_rng(CONFIG['SEED'])
        hidden = channels // reduction_ratio
        self.channels = channels
        self.reduction_ratio = reduction_ratio
        self.hidden = hidden
        self.mlp_bias = mlp_bias

        self.w1 = Parameter(he_normal((hidden, channels), channels, rng), name=f"{name}.w1")
        self.b1 = Parameter(np.zeros(hidden), name=f"{name}.b1") if mlp_bias else None
        self.w2 = Parameter(he_normal((channels, hidden), hidden, rng), name=f"{name}.w2")
        self.b2 = Parameter(np.zeros(channels), name=f"{name}.b2") if mlp_bias else None

    def mlp(self, pooled: Tensor) -> Tensor:
        """(N, C, 1, 1) → (N, C, 1, 1) con gli stessi pesi per ogni chiamata."""
        hidden = matmul(pooled, self.w1, transpose_b=True)
        if self.b1 is not None:
            hidden = add(hidden, self.b1)
        hidden = relu(hidden)
        out = matmul(hidden, self.w2, transpose_b=True)
        if self.b2 is not None:
            out = add(out, self.b2)
        return out

    def forward(self, x: Tensor) -> Tensor:
        return channel_attention(self, x)[1]

    def parameters(self) -> List[Parameter]:
        params = [self.w1]
        if self.b1 is not None:
            params.append(self.b1)
        params.append(self.w2)
        if self.b2 is not None:
            params.append(self.b2)
        return params


def channel_attention(ca: ChannelAttention, feature_map: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Returns:
        (M_c di shape (N, C, 1, 1), F' = M_c ⊙ F)
    """
    avg_branch = ca.mlp(mean_spatial(feature_map))
    max_branch = ca.mlp(max_spatial(feature_map))
    channel_map = sigmoid(add(avg_branch, max_branch))
    return channel_map, broadcast_mul(feature_map, channel_map)

# ============================================================================
# SPATIAL ATTENTION
# ============================================================================

class SpatialAttention(Layer):
    """Conv kxk (same padding, con bias) su [media; massimo] lungo i canali."""

    kind = "spatial_attention"

    def __init__(
        self,
        name: str,
        rng: Optional[np.random.Generator] = None,
        kernel_size: int = CONFIG['SPATIAL_KERNEL']
    ):
        super().__init__(name)
        self.conv = Conv2DLayer(2, 1, kernel_size, name=f"{name}.conv", rng=rng, use_bias=True)

    def forward(self, x: Tensor) -> Tensor:
        return spatial_attention(self, x)[1]

    def parameters(self) -> List[Parameter]:
        return self.conv.parameters()


def spatial_attention(sa: SpatialAttention, refined: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Returns:
        (M_s di shape (N, 1, H, W), F'' = M_s ⊙ F')
    """
    pooled = concat_channels([mean_channels(refined), max_channels(refined)])
    spatial_map = sigmoid(sa.conv.forward(pooled))
    return spatial_map, broadcast_mul(refined, spatial_map)

# ============================================================================
# CBAM BLOCK
# ============================================================================

class CBAMBlock(Layer):
    """Channel attention seguita da spatial attention; l'output ha la shape dell'input."""

    kind = "cbam"

    def __init__(
        self,
        channels: int,
        name: str,
        reduction_ratio: int = CONFIG['REDUCTION_RATIO'],
        rng: Optional[np.random.Generator] = None,
        mlp_bias: bool = CONFIG['MLP_BIAS'],
        spatial_kernel: int = CONFIG['SPATIAL_KERNEL']
    ):
        super().__init__(name)
        self.channel = ChannelAttention(channels, reduction_ratio, f"{name}.channel", rng=rng, mlp_bias=mlp_bias)
        self.spatial = SpatialAttention(f"{name}.spatial", rng=rng, kernel_size=spatial_kernel)

    def forward(self, x: Tensor) -> Tensor:
        return cbam_apply(self, x)

    def parameters(self) -> List[Parameter]:
        return self.channel.parameters() + self.spatial.parameters()


def cbam_apply(block: CBAMBlock, feature_map: Tensor) -> Tensor:
    """F'' = M_s(M_c(F) ⊙ F) ⊙ (M_c(F) ⊙ F)."""
    _, refined = channel_attention(block.channel, feature_map)
    _, output = spatial_attention(block.spatial, refined)
    return output
