"""The dense placement network and its ablations.

A background encoder keeps a grid of local features, an object encoder keeps
one pooled feature, a transformer correlates the object token with every local
token, and an upsampling decoder turns the patch tokens into an (h, w, c)
score tensor in one forward pass. `PlacementRegressor` is the single-box
regression baseline built from the same encoders.
"""

from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from ..config import ModelConfig
from ..errors import BadDim, BadInputSize, DimMismatch, EmptyImage, IndexOutOfRange
from ..models.geometry import ImageDims, PlacementBox, ScaleGrid
from ..models.heatmap import Heatmap3D
from .diffcore import (
    ConvUpsampleBlock,
    TransformerLayer,
    concat,
    conv3x3,
    gelu,
    global_avg_pool,
    grid_to_tokens,
    init_parameters,
    tokens_to_grid,
)
from .geometry import box_size
from .imaging import pad_to_square, resize

# per-channel average subtracted from [0, 1] pixels
RGB_MEAN = (0.485, 0.456, 0.406)


# -- inputs -----------------------------------------------------------------------

def prepare_background(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    expected = (cfg.input_size, cfg.input_size, 3)
    if img.shape != expected:
        raise BadInputSize(
            "background does not match the model input size",
            detail={"expected": list(expected), "got": list(img.shape)},
        )
    return img


def prepare_object(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """White-pad to a square and resize to the input size."""
    if img.size == 0:
        raise EmptyImage("object image has no pixels", detail={"shape": list(img.shape)})
    square = pad_to_square(img)
    if square.shape[0] == cfg.input_size:
        return square
    return resize(square, cfg.input_size, cfg.input_size)


def normalize_images(images: Tensor, dtype: torch.dtype = torch.float32) -> Tensor:
    """uint8 (B, h, w, 3) -> mean-subtracted (B, 3, h, w)."""
    x = images.to(dtype).permute(0, 3, 1, 2) / 255.0
    mean = torch.tensor(RGB_MEAN, dtype=dtype).view(1, 3, 1, 1)
    return x - mean


def to_tensor(img: np.ndarray, dtype: torch.dtype = torch.float32) -> Tensor:
    return normalize_images(torch.from_numpy(np.ascontiguousarray(img))[None], dtype)[0]


def image_batch(
    bg_imgs: Sequence[np.ndarray],
    obj_imgs: Sequence[np.ndarray],
    cfg: ModelConfig,
    dtype: torch.dtype = torch.float32,
):
    bg = torch.stack([to_tensor(prepare_background(img, cfg), dtype) for img in bg_imgs])
    obj = torch.stack([to_tensor(prepare_object(img, cfg), dtype) for img in obj_imgs])
    return bg, obj


# -- positional embedding -----------------------------------------------------------

def _sinusoid(positions: np.ndarray, quarter: int) -> np.ndarray:
    freqs = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))
    angles = positions[:, None].astype(np.float64) * freqs[None, :]
    out = np.empty((positions.shape[0], 2 * quarter), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def pos_embed_2d(h: int, w: int, d: int) -> np.ndarray:
    """(h*w, d) embedding, rows in row-major (y, x) order.

    The first d/2 channels encode x and the last d/2 encode y, each as
    interleaved sin/cos pairs at geometrically spaced frequencies.
    """
    if d <= 0 or d % 4:
        raise BadDim(f"embedding width {d} is not a positive multiple of 4", detail={"d": d})
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    quarter = d // 4
    return np.concatenate([_sinusoid(xs.reshape(-1), quarter), _sinusoid(ys.reshape(-1), quarter)], axis=1)


# -- building blocks ----------------------------------------------------------------

class ConvEncoder(nn.Module):
    """k stride-2 3x3 conv + GELU stages; widths double up to d_enc."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.input_size = cfg.input_size
        widths = [max(1, cfg.d_enc // 2 ** (cfg.k - 1 - i)) for i in range(cfg.k)]
        widths[-1] = cfg.d_enc
        channels = [3] + widths
        self.stages = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], kernel_size=3, stride=2, padding=1)
            for i in range(cfg.k)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2:] != (self.input_size, self.input_size):
            raise BadInputSize(
                "image does not match the model input size",
                detail={"expected": self.input_size, "got": list(x.shape[-2:])},
            )
        for conv in self.stages:
            x = gelu(conv3x3(x, conv.weight, conv.bias, stride=2))
        return x


class Correlator(nn.Module):
    """Transformer over [object token] + positioned background tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.grid_size = cfg.grid_size
        self.d_enc = cfg.d_enc
        self.bg_proj = nn.Conv2d(cfg.d_enc, cfg.d_t, kernel_size=1)
        self.obj_proj = nn.Linear(cfg.d_enc, cfg.d_t)
        self.layers = nn.ModuleList(
            TransformerLayer(cfg.d_t, cfg.n_heads, cfg.ff_mult, cfg.attn_scale_mode)
            for _ in range(cfg.n_layers)
        )
        pos = torch.from_numpy(pos_embed_2d(cfg.grid_size, cfg.grid_size, cfg.d_t)).float()
        self.register_buffer("pos", pos, persistent=False)
        self.use_pos_embed = True

    def forward(self, bg: Tensor, obj: Tensor) -> Tensor:
        if bg.shape[1:] != (self.d_enc, self.grid_size, self.grid_size) or obj.shape[-1] != self.d_enc:
            raise DimMismatch(
                "features do not match the correlator",
                detail={"bg": list(bg.shape), "obj": list(obj.shape)},
            )
        tokens = grid_to_tokens(self.bg_proj(bg))
        if self.use_pos_embed:
            tokens = tokens + self.pos.to(tokens.dtype)
        x = concat([self.obj_proj(obj).unsqueeze(1), tokens], dim=1)
        for layer in self.layers:
            x = layer(x)
        # the object token is not decoded
        return x[:, 1:]


class Decoder(nn.Module):
    """k conv-upsample blocks halving the width, then a 3x3 conv to c channels."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.grid_size = cfg.grid_size
        widths = [cfg.d_t // 2 ** i for i in range(cfg.k + 1)]
        self.blocks = nn.ModuleList(ConvUpsampleBlock(widths[i], widths[i + 1]) for i in range(cfg.k))
        self.head = nn.Conv2d(widths[-1], cfg.c, kernel_size=3, padding=1)

    def forward(self, tokens: Tensor) -> Tensor:
        """(B, N, d_t) -> (B, H, W, c)."""
        x = tokens_to_grid(tokens, self.grid_size, self.grid_size)
        for block in self.blocks:
            x = block(x)
        x = conv3x3(x, self.head.weight, self.head.bias)
        return x.permute(0, 2, 3, 1)


# -- networks -----------------------------------------------------------------------

class TopNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.bg_encoder = ConvEncoder(cfg)
        self.obj_encoder = ConvEncoder(cfg)
        if cfg.variant == "full":
            self.correlator = Correlator(cfg)
        elif cfg.variant == "local_concat":
            self.fuse = nn.Conv2d(2 * cfg.d_enc, cfg.d_t, kernel_size=1)
        else:
            self.fuse = nn.Linear(2 * cfg.d_enc, cfg.d_t)
        self.decoder = Decoder(cfg)
        self.forward_calls = 0

    def encode_background(self, bg: Tensor) -> Tensor:
        return self.bg_encoder(bg)

    def encode_object(self, obj: Tensor) -> Tensor:
        return global_avg_pool(self.obj_encoder(obj))

    def correlate(self, bg_feat: Tensor, obj_vec: Tensor) -> Tensor:
        variant = self.cfg.variant
        if variant == "full":
            return self.correlator(bg_feat, obj_vec)
        g = self.cfg.grid_size
        if variant == "local_concat":
            tiled = obj_vec[:, :, None, None].expand(-1, -1, g, g)
            return grid_to_tokens(self.fuse(concat([bg_feat, tiled], dim=1)))
        fused = self.fuse(concat([global_avg_pool(bg_feat), obj_vec], dim=1))
        return fused.unsqueeze(1).expand(-1, g * g, -1)

    def decode(self, tokens: Tensor) -> Tensor:
        return self.decoder(tokens)

    def forward(self, bg: Tensor, obj: Tensor) -> Tensor:
        """(B, 3, S, S) x2 -> (B, S, S, c) raw scores."""
        self.forward_calls += 1
        return self.decode(self.correlate(self.encode_background(bg), self.encode_object(obj)))

    @property
    def attention_modules(self) -> List[nn.Module]:
        if self.cfg.variant != "full":
            return []
        return [layer.attn for layer in self.correlator.layers]


class PlacementRegressor(nn.Module):
    """Pooled features of both encoders -> 2-layer MLP -> sigmoid (cx/w, cy/h, s, reserved)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.bg_encoder = ConvEncoder(cfg)
        self.obj_encoder = ConvEncoder(cfg)
        self.head = nn.Sequential(
            nn.Linear(2 * cfg.d_enc, cfg.d_t),
            nn.GELU(),
            nn.Linear(cfg.d_t, 4),
        )
        self.forward_calls = 0

    def forward(self, bg: Tensor, obj: Tensor) -> Tensor:
        self.forward_calls += 1
        feats = concat([global_avg_pool(self.bg_encoder(bg)), global_avg_pool(self.obj_encoder(obj))], dim=1)
        return torch.sigmoid(self.head(feats))


def build_model(cfg: ModelConfig, seed: int = 0, regression: bool = False) -> nn.Module:
    model = PlacementRegressor(cfg) if regression else TopNet(cfg)
    init_parameters(model, seed)
    return model


# -- inference helpers ----------------------------------------------------------------

def _single_batch(model: nn.Module, bg_img: np.ndarray, obj_img: np.ndarray):
    dtype = next(model.parameters()).dtype
    return image_batch([bg_img], [obj_img], model.cfg, dtype)


def predict_heatmap(model: TopNet, bg_img: np.ndarray, obj_img: np.ndarray, grid: Optional[ScaleGrid] = None) -> Heatmap3D:
    """Dense scores for every (x, y, scale) from one forward pass."""
    grid = grid or ScaleGrid()
    if grid.c != model.cfg.c:
        raise DimMismatch("scale grid does not match the model channels", detail={"grid": grid.c, "c": model.cfg.c})
    bg, obj = _single_batch(model, bg_img, obj_img)
    model.eval()
    with torch.no_grad():
        scores = model(bg, obj)[0]
    size = model.cfg.input_size
    return Heatmap3D(
        data=scores.detach().cpu().numpy().astype(np.float64),
        dims=ImageDims.square(size),
        grid=grid,
    )


def attention_map(model: TopNet, bg_img: np.ndarray, obj_img: np.ndarray, layer: int, head: int) -> np.ndarray:
    """Object-token attention over the background tokens at one layer and head.

    The object token's weight on itself is dropped and the row renormalized,
    so the (g, g) map sums to 1.
    """
    modules = model.attention_modules
    if not 0 <= layer < len(modules):
        raise IndexOutOfRange(f"layer {layer} out of range", detail={"n_layers": len(modules)})
    attn = modules[layer]
    if not 0 <= head < attn.n_heads:
        raise IndexOutOfRange(f"head {head} out of range", detail={"n_heads": attn.n_heads})

    bg, obj = _single_batch(model, bg_img, obj_img)
    model.eval()
    attn.record_attention = True
    try:
        with torch.no_grad():
            model(bg, obj)
        weights = attn.last_attention[0, head, 0, 1:].double()
    finally:
        attn.record_attention = False
        attn.last_attention = None
    row = (weights / weights.sum()).cpu().numpy()
    g = model.cfg.grid_size
    return row.reshape(g, g)


def regression_box(outputs: Sequence[float], aspect: float, dims: ImageDims) -> PlacementBox:
    """Box centered at the predicted normalized center with the predicted scale."""
    cx, cy, scale = (float(v) for v in outputs[:3])
    width, height = box_size(max(scale, 1e-6), aspect, dims)
    width, height = float(width), float(height)
    return PlacementBox(
        left=cx * dims.width - width / 2.0,
        top=cy * dims.height - height / 2.0,
        width=width,
        height=height,
    )


def regression_forward(model: PlacementRegressor, bg_img: np.ndarray, obj_img: np.ndarray, aspect: float) -> PlacementBox:
    bg, obj = _single_batch(model, bg_img, obj_img)
    model.eval()
    with torch.no_grad():
        out = model(bg, obj)[0]
    return regression_box(out.tolist(), aspect, ImageDims.square(model.cfg.input_size))
