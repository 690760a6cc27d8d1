"""Differentiable substrate.

Forward primitives run on torch tensors and get their reverse-mode gradients
from autograd. Every primitive used by the network goes through this module so
it can be checked against central finite differences with `grad_check`.
Layout conventions: feature maps are (B, C, H, W), token sequences (B, N, D).
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..errors import DimMismatch, NonFiniteValue

ScaleMode = Literal["inv_sqrt_d", "inv_d"]
InitKind = Literal["fan_in_uniform", "zeros", "ones"]


# -- primitives ---------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    return F.linear(x, weight, bias)


def conv3x3(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """3x3 convolution with unit zero padding; stride 2 halves the spatial size."""
    return F.conv2d(x, weight, bias, stride=stride, padding=1)


def conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    return F.conv2d(x, weight, bias)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling."""
    return F.interpolate(x, scale_factor=2, mode="nearest")


def layer_norm(
    x: Tensor,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = 1e-5,
) -> Tensor:
    return F.layer_norm(x, (x.shape[-1],), weight, bias, eps)


def gelu(x: Tensor) -> Tensor:
    return F.gelu(x)


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    return torch.softmax(x, dim=dim)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    return x.mean(dim=(-2, -1))


def concat(tensors: Sequence[Tensor], dim: int) -> Tensor:
    return torch.cat(list(tensors), dim=dim)


def grid_to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major over (y, x)."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)


def tokens_to_grid(tokens: Tensor, h: int, w: int) -> Tensor:
    b, n, d = tokens.shape
    if n != h * w:
        raise DimMismatch(f"{n} tokens cannot form a {h}x{w} grid")
    return tokens.transpose(1, 2).reshape(b, d, h, w)


# -- layers -------------------------------------------------------------------

class MultiHeadAttention(nn.Module):
    """Self-attention over a token sequence.

    Per head: softmax(Q K^T * scale) V with scale 1/sqrt(d_h) (`inv_sqrt_d`)
    or 1/d_h (`inv_d`); heads are concatenated and projected back to d.
    """

    def __init__(self, dim: int, n_heads: int, scale_mode: ScaleMode = "inv_sqrt_d"):
        super().__init__()
        if dim % n_heads:
            raise DimMismatch(f"dim {dim} is not divisible by {n_heads} heads")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.scale_mode = scale_mode
        self.scale = self.head_dim ** -0.5 if scale_mode == "inv_sqrt_d" else 1.0 / self.head_dim

        self.qkv = nn.Linear(dim, dim * 3)
        self.out = nn.Linear(dim, dim)

        # test and visualization hooks
        self.identity_attention = False
        self.record_attention = False
        self.last_attention: Optional[Tensor] = None

    def project_qkv(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """Q, K, V shaped (B, heads, N, d_h)."""
        b, n, _ = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        if d != self.dim:
            raise DimMismatch(f"expected token width {self.dim}, got {d}")
        q, k, v = self.project_qkv(x)

        if self.identity_attention:
            attn = torch.eye(n, dtype=x.dtype, device=x.device).expand(b, self.n_heads, n, n)
        else:
            attn = softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        if self.record_attention:
            self.last_attention = attn.detach()

        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(y)


def multi_head_attention(
    tokens: Tensor,
    n_heads: int,
    scale_mode: ScaleMode = "inv_sqrt_d",
    module: Optional[MultiHeadAttention] = None,
) -> Tensor:
    """Apply self-attention to an (N, D) or (B, N, D) token grid."""
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens = tokens.unsqueeze(0)
    if module is None:
        module = MultiHeadAttention(tokens.shape[-1], n_heads, scale_mode).to(tokens.dtype)
    out = module(tokens)
    return out.squeeze(0) if squeeze else out


class TransformerLayer(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FF(LN(x)) with a GELU feed-forward."""

    def __init__(self, dim: int, n_heads: int, ff_mult: int = 2, scale_mode: ScaleMode = "inv_sqrt_d"):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, scale_mode)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_mult * dim),
            nn.GELU(),
            nn.Linear(ff_mult * dim, dim),
        )

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.ff(self.norm2(x))
        return x


class ConvUpsampleBlock(nn.Module):
    """3x3 conv -> GELU -> nearest 2x upsample: (B, d_in, h, w) -> (B, d_out, 2h, 2w)."""

    def __init__(self, d_in: int, d_out: int, activation: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.conv = nn.Conv2d(d_in, d_out, kernel_size=3, padding=1)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.d_in:
            raise DimMismatch(f"expected {self.d_in} input channels, got {x.shape[1]}")
        x = self.conv(x)
        if self.activation:
            x = gelu(x)
        return upsample2x(x)


def conv_upsample_block(feat: Tensor, d_out: int, block: Optional[ConvUpsampleBlock] = None) -> Tensor:
    """Run one decoder stage on an (h, w, d_in) or (B, d_in, h, w) feature map."""
    channels_last = feat.dim() == 3
    x = feat.permute(2, 0, 1).unsqueeze(0) if channels_last else feat
    if block is None:
        block = ConvUpsampleBlock(x.shape[1], d_out).to(x.dtype)
    if block.d_out != d_out:
        raise DimMismatch(f"block produces {block.d_out} channels, asked for {d_out}")
    y = block(x)
    return y.squeeze(0).permute(1, 2, 0) if channels_last else y


# -- parameters -----------------------------------------------------------------

@dataclass(frozen=True)
class ParameterSpec:
    name: str
    shape: Tuple[int, ...]
    init: InitKind


def _init_kind(module: nn.Module, param_name: str) -> InitKind:
    if isinstance(module, nn.LayerNorm):
        return "ones" if param_name == "weight" else "zeros"
    return "zeros" if param_name == "bias" else "fan_in_uniform"


def parameter_specs(model: nn.Module) -> List[ParameterSpec]:
    specs = []
    for module_name, module in model.named_modules():
        for param_name, param in module.named_parameters(recurse=False):
            full = f"{module_name}.{param_name}" if module_name else param_name
            specs.append(ParameterSpec(full, tuple(param.shape), _init_kind(module, param_name)))
    return specs


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in uniform weights, zero biases, unit norm gains; deterministic in `seed`."""
    generator = torch.Generator().manual_seed(seed)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for spec in parameter_specs(model):
            param = params[spec.name]
            if spec.init == "zeros":
                param.zero_()
            elif spec.init == "ones":
                param.fill_(1.0)
            else:
                fan_in = int(np.prod(spec.shape[1:])) if len(spec.shape) > 1 else spec.shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                values = torch.rand(spec.shape, generator=generator, dtype=torch.float64)
                param.copy_((values * 2.0 - 1.0) * bound)


def pack_tensors(named: Iterable[Tuple[str, Tensor]]) -> Tuple[List[Dict], bytes]:
    """Ordered manifest of {name, shape, offset} plus one little-endian float32 blob."""
    manifest, chunks, offset = [], [], 0
    for name, tensor in named:
        array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        manifest.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(array.tobytes(order="C"))
        offset += array.size
    return manifest, b"".join(chunks)


def unpack_tensors(manifest: Sequence[Dict], blob: bytes) -> Dict[str, np.ndarray]:
    flat = np.frombuffer(blob, dtype="<f4")
    out = {}
    for entry in manifest:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise ValueError(f"parameter '{entry['name']}' runs past the end of the blob")
        out[entry["name"]] = flat[start:start + size].reshape(entry["shape"]).astype(np.float32)
    return out


def load_tensors(model: nn.Module, arrays: Dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    missing = set(params) - set(arrays)
    if missing:
        raise KeyError(f"missing parameters: {sorted(missing)}")
    with torch.no_grad():
        for name, param in params.items():
            param.copy_(torch.from_numpy(arrays[name]).to(param.dtype))


# -- verification ---------------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between autograd and central differences over all coordinates.

    `f` re-evaluates a scalar from the current values of `params`, which are
    perturbed in place. Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    value = f()
    if not torch.isfinite(value).all():
        raise NonFiniteValue("function value is not finite", detail={"value": float(value)})
    if value.requires_grad:
        analytic = torch.autograd.grad(value, list(params), allow_unused=True)
    else:
        analytic = (None,) * len(params)

    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            grad = torch.zeros_like(param) if grad is None else grad
            flat_param = param.view(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat_param.numel()):
                original = flat_param[i].item()
                flat_param[i] = original + eps
                plus = f()
                flat_param[i] = original - eps
                minus = f()
                flat_param[i] = original
                if not (torch.isfinite(plus) and torch.isfinite(minus)):
                    raise NonFiniteValue("perturbed function value is not finite", detail={"index": i})
                numeric = (plus.item() - minus.item()) / (2.0 * eps)
                a = flat_grad[i].item()
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst
