"""Gated skip-connection units.

Both units take the encoder feature ``x`` at layer ``l``, the hidden state
``h`` from the adjacent deeper layer (half resolution) and the attribute
difference vector, and return ``(skip_out, hidden_out)``.

``LSTU`` derives both gates from the up-sampled hidden state alone and adds
an SRU-style highway to the raw encoder feature. ``STU`` is the GRU-style
baseline whose gates read the concatenation of encoder feature and hidden
state.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .core import DimensionError

UNIT_KINDS = ("lstu", "stu")


def _upsample_tconv(in_channels: int, out_channels: int, kernel_size: int = 3) -> nn.ConvTranspose2d:
    # output_padding makes the output exactly twice the input size
    return nn.ConvTranspose2d(
        in_channels,
        out_channels,
        kernel_size,
        stride=2,
        padding=(kernel_size - 1) // 2,
        output_padding=1 if kernel_size % 2 else 0,
    )


def condition_planes(d: Tensor, height: int, width: int) -> Tensor:
    """(B, N_c) -> (B, N_c, height, width) constant planes."""
    return d[:, :, None, None].expand(d.shape[0], d.shape[1], height, width)


def _check_shapes(x: Tensor, h: Tensor, d: Tensor, channels: int, hidden_channels: int, n_attributes: int):
    if x.dim() != 4 or h.dim() != 4:
        raise DimensionError("expected batched (B, C, H, W) feature maps")
    if x.shape[1] != channels or h.shape[1] != hidden_channels:
        raise DimensionError(
            f"channel mismatch: x has {x.shape[1]} (want {channels}), "
            f"h has {h.shape[1]} (want {hidden_channels})"
        )
    if x.shape[2] != 2 * h.shape[2] or x.shape[3] != 2 * h.shape[3]:
        raise DimensionError(
            f"hidden state {tuple(h.shape[2:])} is not half of feature {tuple(x.shape[2:])}"
        )
    if d.dim() != 2 or d.shape[1] != n_attributes:
        raise DimensionError(f"difference vector must be (B, {n_attributes}), got {tuple(d.shape)}")


class LSTU(nn.Module):
    """Light selective transfer unit.

    t = W_T *^T [h, A_d]
    f = sigmoid(W_f * t),  r = sigmoid(W_r * t)
    c = f * t + (1 - f) * (W_1x1 * x)
    out = r * tanh(c) + (1 - r) * x

    ``out`` is both the filtered skip feature and the hidden state handed
    to the next shallower unit.
    """

    kind = "lstu"

    def __init__(self, channels: int, hidden_channels: int, n_attributes: int,
                 transpose_kernel: int = 3, gate_kernel: int = 3):
        super().__init__()
        self.channels = channels
        self.hidden_channels = hidden_channels
        self.n_attributes = n_attributes
        pad = (gate_kernel - 1) // 2
        self.w_transpose = _upsample_tconv(hidden_channels + n_attributes, channels, transpose_kernel)
        self.w_linear = nn.Conv2d(channels, channels, 1)
        self.w_forget = nn.Conv2d(channels, channels, gate_kernel, padding=pad)
        self.w_reset = nn.Conv2d(channels, channels, gate_kernel, padding=pad)

    def forward(self, x: Tensor, h: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        _check_shapes(x, h, d, self.channels, self.hidden_channels, self.n_attributes)
        h_hat = torch.cat([h, condition_planes(d.to(h.dtype), h.shape[2], h.shape[3])], dim=1)
        t = self.w_transpose(h_hat)
        f = torch.sigmoid(self.w_forget(t))
        r = torch.sigmoid(self.w_reset(t))
        c = f * t + (1 - f) * self.w_linear(x)
        out = r * torch.tanh(c) + (1 - r) * x
        return out, out

    def gates(self, h: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        h_hat = torch.cat([h, condition_planes(d.to(h.dtype), h.shape[2], h.shape[3])], dim=1)
        t = self.w_transpose(h_hat)
        return torch.sigmoid(self.w_forget(t)), torch.sigmoid(self.w_reset(t))

    @staticmethod
    def elementwise_ops(channels: int, height: int, width: int) -> int:
        # 2 sigmoids, 4 for the forget blend, tanh, 4 for the highway blend
        return 11 * channels * height * width


class STU(nn.Module):
    """GRU-style selective transfer unit (baseline)."""

    kind = "stu"

    def __init__(self, channels: int, hidden_channels: int, n_attributes: int,
                 transpose_kernel: int = 3, gate_kernel: int = 3):
        super().__init__()
        self.channels = channels
        self.hidden_channels = hidden_channels
        self.n_attributes = n_attributes
        pad = (gate_kernel - 1) // 2
        self.w_transpose = _upsample_tconv(hidden_channels + n_attributes, channels, transpose_kernel)
        self.w_r = nn.Conv2d(2 * channels, channels, gate_kernel, padding=pad)
        self.w_z = nn.Conv2d(2 * channels, channels, gate_kernel, padding=pad)
        self.w_h = nn.Conv2d(2 * channels, channels, gate_kernel, padding=pad)

    def forward(self, x: Tensor, h: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        _check_shapes(x, h, d, self.channels, self.hidden_channels, self.n_attributes)
        h_hat = torch.cat([h, condition_planes(d.to(h.dtype), h.shape[2], h.shape[3])], dim=1)
        s = self.w_transpose(h_hat)
        xs = torch.cat([x, s], dim=1)
        r = torch.sigmoid(self.w_r(xs))
        z = torch.sigmoid(self.w_z(xs))
        hidden = r * s
        candidate = torch.tanh(self.w_h(torch.cat([x, hidden], dim=1)))
        skip = (1 - z) * s + z * candidate
        return skip, hidden

    @staticmethod
    def elementwise_ops(channels: int, height: int, width: int) -> int:
        # 2 sigmoids, r*s, tanh, 4 for the update blend
        return 8 * channels * height * width


def lstu_forward(x: Tensor, h: Tensor, d: Tensor, params: LSTU) -> tuple[Tensor, Tensor]:
    """Functional form of :class:`LSTU`; ``params`` holds the four kernels and their biases."""
    if not isinstance(params, LSTU):
        raise TypeError(f"expected LSTU parameters, got {type(params).__name__}")
    return params(x, h, d)


def stu_forward(x: Tensor, h: Tensor, d: Tensor, params: STU) -> tuple[Tensor, Tensor]:
    """Functional form of :class:`STU`."""
    if not isinstance(params, STU):
        raise TypeError(f"expected STU parameters, got {type(params).__name__}")
    return params(x, h, d)


def make_unit(kind: str, channels: int, hidden_channels: int, n_attributes: int, **kwargs) -> nn.Module:
    if kind == "lstu":
        return LSTU(channels, hidden_channels, n_attributes, **kwargs)
    if kind == "stu":
        return STU(channels, hidden_channels, n_attributes, **kwargs)
    raise ValueError(f"unknown unit kind {kind!r}; expected one of {UNIT_KINDS}")


def conv_param_count(in_channels: int, out_channels: int, kernel_size: int, bias: bool = True) -> int:
    return kernel_size * kernel_size * in_channels * out_channels + (out_channels if bias else 0)


def unit_param_count(kind: str, channels: int, hidden_channels: int, n_attributes: int,
                     transpose_kernel: int = 3, gate_kernel: int = 3, bias: bool = True) -> int:
    """Closed-form learnable scalar count of one unit."""
    count = conv_param_count(hidden_channels + n_attributes, channels, transpose_kernel, bias)
    if kind == "lstu":
        count += conv_param_count(channels, channels, 1, bias)
        count += 2 * conv_param_count(channels, channels, gate_kernel, bias)
    elif kind == "stu":
        count += 3 * conv_param_count(2 * channels, channels, gate_kernel, bias)
    else:
        raise ValueError(f"unknown unit kind {kind!r}")
    return count
