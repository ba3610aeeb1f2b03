"""Toy-scale boundary-enhanced SAM2-style segmenter.

The Hiera backbone is stood in for by a small convolutional encoder with
the same stride/channel topology: a stride-4 patch embed followed by three
stride-2 stages, giving four levels X1..X4 at strides 4, 8, 16, 32. Every
level ends in a LoRA-wrapped pointwise projection whose base weight is
frozen. Each level is reduced by a receptive field block (RFB), decoded by
a U-shaped decoder and supervised through three 1x1 heads.

Checkpoint tensor names (see :func:`to_checkpoint`)::

    encoder.stage0.embed.weight     [C1, in_ch, 4, 4]   (RGB part frozen)
    encoder.stage0.embed.bias       [C1]
    encoder.stage{i}.conv.weight    [C(i+1), C(i), 3, 3]   i = 1..3
    encoder.stage{i}.norm.weight / .bias
    encoder.stage{i}.proj.weight / .bias                 frozen LoRA base
    lora.stage{i}.A / lora.stage{i}.B                    trainable
    rfb.{i}.*                       i = 1..4
    decoder.block{j}.conv{1,2}.weight / .bias, decoder.block{j}.norm{1,2}.*
    head.{k}.weight / head.{k}.bias  k = 1 (finest) .. 3
    meta.*                          architecture scalars
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import Checkpoint
from .structmap import COMPONENTS, DEFAULT_EPSILON, parse_components

__all__ = [
    "BEDSAM",
    "ConfigError",
    "DEPTH_INPUTS",
    "DecoderBlock",
    "LoRALinear",
    "NetConfig",
    "PatchEmbed",
    "RFB",
    "ShapeMismatchError",
    "bilinear_resize",
    "collect_activations",
    "expand_patch_embed",
    "from_checkpoint",
    "lora_forward",
    "predict",
    "to_checkpoint",
]

DEPTH_INPUTS = ("none", "raw_depth", "edge_map")
PATCH = 4


class ConfigError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass
class NetConfig:
    input_size: int = 64
    channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    rfb_channels: int = 16
    use_lora: bool = True
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_embed: bool = False
    depth_input: str = "edge_map"
    components: tuple[str, ...] = COMPONENTS
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    epochs: int = 25
    steps: int = 0
    batch: int = 8
    lr: float = 1e-2
    lr_min: float = 0.0
    weight_decay: float = 5e-4
    flips: bool = True
    loss_window: int = 31

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.components = parse_components(self.components)
        self.validate()

    def validate(self) -> None:
        if len(self.channels) != 4:
            raise ConfigError("channels needs four levels")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])) or self.channels[0] < 1:
            raise ConfigError(f"channels must be positive and strictly increasing: {self.channels}")
        if self.lora_rank < 1:
            raise ConfigError("lora_rank must be >= 1")
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigError("input_size must be a positive multiple of 32")
        if self.rfb_channels < 4 or self.rfb_channels % 4:
            raise ConfigError("rfb_channels must be a positive multiple of 4 (one slice per branch)")
        if self.depth_input not in DEPTH_INPUTS:
            raise ConfigError(f"depth_input must be one of {DEPTH_INPUTS}")
        if self.batch < 1 or self.epochs < 0 or self.steps < 0:
            raise ConfigError("batch must be >= 1 and epochs/steps >= 0")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.loss_window < 3 or self.loss_window % 2 == 0:
            raise ConfigError("loss_window must be odd and >= 3")

    @property
    def in_channels(self) -> int:
        return 3 if self.depth_input == "none" else 4

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- init


def _named_generator(seed: int, name: str) -> np.random.Generator:
    """Philox stream keyed by (seed, tensor name); independent of build order."""
    digest = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), digest]))


def _uniform(seed: int, name: str, shape, bound: float) -> torch.Tensor:
    vals = _named_generator(seed, name).uniform(-bound, bound, size=shape)
    return torch.from_numpy(vals.astype(np.float32))


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init for every conv/linear weight and bias.

    Parameters are looked up by their module path, so two models that
    share a sub-structure get identical values there.
    """
    with torch.no_grad():
        for mname, mod in model.named_modules():
            prefix = mname + "." if mname else ""
            if isinstance(mod, ChannelNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
            elif isinstance(mod, nn.Conv2d):
                fan_in = mod.weight[0].numel()
                bound = 1 / math.sqrt(fan_in)
                mod.weight.copy_(_uniform(seed, prefix + "weight", mod.weight.shape, bound))
                if mod.bias is not None:
                    mod.bias.copy_(_uniform(seed, prefix + "bias", mod.bias.shape, bound))
            elif isinstance(mod, PatchEmbed):
                fan_in = mod.weight_rgb[0].numel()
                bound = 1 / math.sqrt(fan_in)
                mod.weight_rgb.copy_(_uniform(seed, prefix + "weight", mod.weight_rgb.shape, bound))
                mod.bias.copy_(_uniform(seed, prefix + "bias", mod.bias.shape, bound))
                if mod.weight_extra is not None:
                    mod.weight_extra.copy_(mod.weight_rgb.mean(dim=1, keepdim=True)
                                           .expand_as(mod.weight_extra))
                if mod.A is not None:
                    mod.A.copy_(_uniform(seed, prefix + "A", mod.A.shape, 1 / math.sqrt(mod.A.shape[1])))
                    mod.B.zero_()
            elif isinstance(mod, LoRALinear):
                fan_in = mod.weight.shape[1]
                bound = 1 / math.sqrt(fan_in)
                mod.weight.copy_(_uniform(seed, prefix + "weight", mod.weight.shape, bound))
                mod.bias.copy_(_uniform(seed, prefix + "bias", mod.bias.shape, bound))
                mod.reset(seed, prefix)


# ---------------------------------------------------------------- layers


class ChannelNorm(nn.Module):
    """Per-pixel normalization across channels with a per-channel affine.

    Batch-independent, so single-sample inference matches batched inference.
    """

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class LoRALinear(nn.Module):
    """Frozen ``y = W x + b`` plus a trainable low-rank update ``scale * B A x``.

    ``B`` starts at zero so a fresh layer reproduces the base output exactly.
    Applied over the channel axis (dim 1) of NCHW inputs when ``pointwise``.
    """

    def __init__(self, d_in: int, d_out: int, rank: int = 4, alpha: float = 8.0,
                 enabled: bool = True, pointwise: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in), requires_grad=False)
        self.bias = nn.Parameter(torch.zeros(d_out), requires_grad=False)
        self.enabled = enabled
        self.pointwise = pointwise
        self.scale = alpha / rank
        if enabled:
            self.A = nn.Parameter(torch.zeros(rank, d_in))
            self.B = nn.Parameter(torch.zeros(d_out, rank))
        else:
            self.register_parameter("A", None)
            self.register_parameter("B", None)

    def reset(self, seed: int, prefix: str) -> None:
        if not self.enabled:
            return
        with torch.no_grad():
            bound = 1 / math.sqrt(self.A.shape[1])
            self.A.copy_(_uniform(seed, prefix + "A", self.A.shape, bound))
            self.B.zero_()

    def delta(self) -> torch.Tensor:
        return self.scale * (self.B @ self.A)

    def forward(self, x):
        if self.pointwise:
            x = x.movedim(1, -1)
        y = F.linear(x, self.weight, self.bias)
        if self.enabled:
            y = y + self.scale * F.linear(F.linear(x, self.A), self.B)
        return y.movedim(-1, 1) if self.pointwise else y


def lora_forward(layer: LoRALinear, x: torch.Tensor) -> torch.Tensor:
    """``(W + scale * B A) x`` for a vector or a batch of row vectors."""
    if x.shape[-1] != layer.weight.shape[1]:
        raise ShapeMismatchError(f"input width {x.shape[-1]} != layer d_in {layer.weight.shape[1]}")
    pointwise, layer.pointwise = layer.pointwise, False
    try:
        return layer(x)
    finally:
        layer.pointwise = pointwise


class PatchEmbed(nn.Module):
    """Stride-4 patch embedding with the RGB kernel and extra channel kept apart.

    The RGB kernel and bias are frozen; the extra-channel kernel is
    trainable. The two convolutions are summed, so an all-zero extra channel
    contributes exact zeros and the output equals the RGB-only embed. With
    ``lora_rank`` set, the RGB kernel (viewed as [C_out, 3*k*k]) also gets a
    zero-initialized low-rank update.
    """

    def __init__(self, in_ch: int, out_ch: int, lora_rank: int = 0, lora_alpha: float = 1.0):
        super().__init__()
        if in_ch not in (3, 4):
            raise ConfigError("patch embed takes 3 or 4 input channels")
        self.weight_rgb = nn.Parameter(torch.empty(out_ch, 3, PATCH, PATCH), requires_grad=False)
        self.bias = nn.Parameter(torch.zeros(out_ch), requires_grad=False)
        if in_ch == 4:
            self.weight_extra = nn.Parameter(torch.zeros(out_ch, 1, PATCH, PATCH))
        else:
            self.register_parameter("weight_extra", None)
        if lora_rank:
            self.A = nn.Parameter(torch.zeros(lora_rank, 3 * PATCH * PATCH))
            self.B = nn.Parameter(torch.zeros(out_ch, lora_rank))
            self.scale = lora_alpha / lora_rank
        else:
            self.register_parameter("A", None)
            self.register_parameter("B", None)

    @property
    def in_channels(self) -> int:
        return 3 if self.weight_extra is None else 4

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"embed expects {self.in_channels} channels, got {x.shape[1]}")
        w = self.weight_rgb
        if self.A is not None:
            w = w + (self.scale * (self.B @ self.A)).reshape(w.shape)
        y = F.conv2d(x[:, :3], w, self.bias, stride=PATCH)
        if self.weight_extra is not None:
            y = y + F.conv2d(x[:, 3:], self.weight_extra, stride=PATCH)
        return y


def expand_patch_embed(w):
    """[C_out, 3, k, k] -> [C_out, 4, k, k], fourth channel = mean of the three."""
    is_np = isinstance(w, np.ndarray)
    t = torch.as_tensor(w)
    if t.ndim != 4 or t.shape[1] != 3:
        raise ShapeMismatchError(f"expected a [C_out, 3, k, k] kernel, got {tuple(t.shape)}")
    out = torch.cat([t, t.mean(dim=1, keepdim=True)], dim=1)
    return out.numpy() if is_np else out


class ConvNormAct(nn.Sequential):
    def __init__(self, in_ch, out_ch, k=3, stride=1, dilation=1, act=True):
        layers = [nn.Conv2d(in_ch, out_ch, k, stride=stride,
                            padding=dilation * (k - 1) // 2, dilation=dilation),
                  ChannelNorm(out_ch)]
        if act:
            layers.append(nn.ReLU())
        super().__init__(*layers)


class EncoderStage(nn.Module):
    def __init__(self, in_ch, out_ch, cfg: NetConfig, embed: bool):
        super().__init__()
        if embed:
            rank = cfg.lora_rank if cfg.use_lora and cfg.lora_embed else 0
            self.embed = PatchEmbed(in_ch, out_ch, rank, cfg.lora_alpha)
        else:
            self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.norm = ChannelNorm(out_ch)
        self.proj = LoRALinear(out_ch, out_ch, cfg.lora_rank, cfg.lora_alpha, enabled=cfg.use_lora)

    def forward(self, x):
        x = self.embed(x) if hasattr(self, "embed") else self.conv(x)
        return self.proj(F.gelu(self.norm(x)))


class Encoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        ch = cfg.channels
        self.stage0 = EncoderStage(cfg.in_channels, ch[0], cfg, embed=True)
        self.stage1 = EncoderStage(ch[0], ch[1], cfg, embed=False)
        self.stage2 = EncoderStage(ch[1], ch[2], cfg, embed=False)
        self.stage3 = EncoderStage(ch[2], ch[3], cfg, embed=False)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for stage in (self.stage0, self.stage1, self.stage2, self.stage3):
            x = stage(x)
            feats.append(x)
        return feats


class RFB(nn.Module):
    """Receptive field block: a 1x1 branch and 3x3 branches at dilations 1, 3, 5,
    concatenated, fused by a 1x1 projection and added to a 1x1 shortcut."""

    DILATIONS = (1, 3, 5)

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        if out_ch < 4 or out_ch % 4 or in_ch < 1:
            raise ConfigError(f"RFB needs out_ch a positive multiple of 4, got {out_ch}")
        width = out_ch // 4
        self.branch0 = ConvNormAct(in_ch, width, k=1, act=False)
        self.branches = nn.ModuleList(
            nn.Sequential(ConvNormAct(in_ch, width, k=1, act=False),
                          ConvNormAct(width, width, k=3, dilation=d, act=False))
            for d in self.DILATIONS)
        self.fuse = ConvNormAct(4 * width, out_ch, k=1, act=False)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x):
        parts = [self.branch0(x)] + [b(x) for b in self.branches]
        return F.relu(self.fuse(torch.cat(parts, dim=1)) + self.shortcut(x))


def bilinear_resize(x: torch.Tensor, size) -> torch.Tensor:
    """Bilinear, half-pixel centers, align_corners=False, edge-clamped.

    A 2x2 map [[0, 1], [2, 3]] upsampled to 4x4 gives::

        0.00 0.25 0.75 1.00
        0.50 0.75 1.25 1.50
        1.50 1.75 2.25 2.50
        2.00 2.25 2.75 3.00
    """
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class DecoderBlock(nn.Module):
    """Upsample the coarser map, concatenate with the skip, two Conv-Norm-ReLU."""

    def __init__(self, low_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(low_ch + skip_ch, out_ch, 3, padding=1)
        self.norm1 = ChannelNorm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = ChannelNorm(out_ch)

    def forward(self, low, skip):
        x = torch.cat([bilinear_resize(low, skip.shape[-2:]), skip], dim=1)
        x = F.relu(self.norm1(self.conv1(x)))
        return F.relu(self.norm2(self.conv2(x)))


class BEDSAM(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or NetConfig()
        self.encoder = Encoder(cfg)
        r = cfg.rfb_channels
        self.rfb = nn.ModuleDict({str(i + 1): RFB(c, r) for i, c in enumerate(cfg.channels)})
        self.decoder = nn.ModuleDict({f"block{j}": DecoderBlock(r, r, r) for j in (1, 2, 3)})
        self.head = nn.ModuleDict({str(k): nn.Conv2d(r, 1, 1) for k in (1, 2, 3)})
        init_parameters(self, cfg.seed)
        # frozen base: only LoRA factors and the extra embed channel train in the encoder
        for name, p in self.encoder.named_parameters():
            p.requires_grad = name.endswith((".A", ".B", ".weight_extra"))

    def features(self, x) -> list[torch.Tensor]:
        return self.encoder(x)

    def forward(self, x) -> list[torch.Tensor]:
        """Return logits [S1, S2, S3] (finest first), each resized to the input."""
        n, c, h, w = x.shape
        if c != self.cfg.in_channels or h != self.cfg.input_size or w != self.cfg.input_size:
            raise ShapeMismatchError(
                f"expected [N, {self.cfg.in_channels}, {self.cfg.input_size}, "
                f"{self.cfg.input_size}], got {list(x.shape)}")
        x1, x2, x3, x4 = [self.rfb[str(i + 1)](f) for i, f in enumerate(self.encoder(x))]
        d3 = self.decoder["block3"](x4, x3)
        d2 = self.decoder["block2"](d3, x2)
        d1 = self.decoder["block1"](d2, x1)
        return [bilinear_resize(self.head[str(k)](d), (h, w))
                for k, d in zip((1, 2, 3), (d1, d2, d3))]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def collect_activations(model: nn.Module, x: torch.Tensor) -> dict[str, torch.Tensor]:
    """Run ``model(x)`` and return every leaf-module output by module path."""
    acts: dict[str, torch.Tensor] = {}
    hooks = []
    for name, mod in model.named_modules():
        if name and not list(mod.children()):
            hooks.append(mod.register_forward_hook(
                lambda m, i, o, name=name: acts.__setitem__(name, o.detach().clone())))
    try:
        with torch.no_grad():
            outs = model(x)
    finally:
        for h in hooks:
            h.remove()
    for k, o in enumerate(outs, 1):
        acts[f"logits.{k}"] = o
    return acts


# ---------------------------------------------------------------- checkpoints

_META_DEPTH = {name: float(i) for i, name in enumerate(DEPTH_INPUTS)}


def _ckpt_name(name: str) -> str | None:
    if name == "encoder.stage0.embed.weight_extra":
        return None
    if name == "encoder.stage0.embed.weight_rgb":
        return "encoder.stage0.embed.weight"
    parts = name.split(".")
    if parts[0] == "encoder" and parts[-1] in ("A", "B"):
        # encoder.stage{i}.proj.A -> lora.stage{i}.A ; embed LoRA -> lora.stage0.embed.A
        middle = [p for p in parts[1:-1] if p != "proj"]
        return ".".join(["lora", *middle, parts[-1]])
    return name


def to_checkpoint(model: BEDSAM) -> Checkpoint:
    cfg = model.cfg
    tensors: dict[str, np.ndarray] = {}
    embed = model.encoder.stage0.embed
    for name, p in model.named_parameters():
        key = _ckpt_name(name)
        if key is None:
            continue
        val = p.detach()
        if name.endswith("weight_rgb") and embed.weight_extra is not None:
            val = torch.cat([val, embed.weight_extra.detach()], dim=1)
        tensors[key] = val.numpy().copy()
    comp_bits = sum(1 << i for i, c in enumerate(COMPONENTS) if c in cfg.components)
    meta = {
        "meta.input_size": [cfg.input_size],
        "meta.channels": list(cfg.channels),
        "meta.rfb_channels": [cfg.rfb_channels],
        "meta.use_lora": [float(cfg.use_lora)],
        "meta.lora_rank": [cfg.lora_rank],
        "meta.lora_alpha": [cfg.lora_alpha],
        "meta.lora_embed": [float(cfg.lora_embed)],
        "meta.depth_input": [_META_DEPTH[cfg.depth_input]],
        "meta.components": [comp_bits],
        "meta.epsilon": [cfg.epsilon],
    }
    for k, v in meta.items():
        tensors[k] = np.asarray(v, dtype=np.float64)
    return Checkpoint(tensors)


def config_from_checkpoint(ckpt: Checkpoint, **overrides) -> NetConfig:
    try:
        m = {k[5:]: ckpt[k] for k in ckpt.names() if k.startswith("meta.")}
        comps = tuple(c for i, c in enumerate(COMPONENTS) if int(m["components"][0]) >> i & 1)
        kw = dict(
            input_size=int(m["input_size"][0]),
            channels=tuple(int(c) for c in m["channels"]),
            rfb_channels=int(m["rfb_channels"][0]),
            use_lora=bool(m["use_lora"][0]),
            lora_rank=int(m["lora_rank"][0]),
            lora_alpha=float(m["lora_alpha"][0]),
            lora_embed=bool(m["lora_embed"][0]),
            depth_input=DEPTH_INPUTS[int(m["depth_input"][0])],
            components=comps,
            epsilon=float(m["epsilon"][0]),
        )
    except (KeyError, IndexError) as exc:
        raise ShapeMismatchError(f"checkpoint metadata incomplete: {exc}") from exc
    kw.update(overrides)
    return NetConfig(**kw)


def from_checkpoint(ckpt: Checkpoint, **overrides) -> BEDSAM:
    cfg = config_from_checkpoint(ckpt, **overrides)
    embed_w = ckpt["encoder.stage0.embed.weight"]
    # The embed may have been widened after training (expand-embed).
    if embed_w.shape[1] == 4 and cfg.depth_input == "none":
        cfg.depth_input = "edge_map"
    elif embed_w.shape[1] == 3 and cfg.depth_input != "none":
        raise ShapeMismatchError("checkpoint embed has 3 input channels but config expects 4")
    model = BEDSAM(cfg)
    embed = model.encoder.stage0.embed
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = _ckpt_name(name)
            if key is None:
                continue
            if key not in ckpt:
                raise ShapeMismatchError(f"checkpoint lacks tensor {key}")
            val = torch.from_numpy(np.ascontiguousarray(ckpt[key]))
            if name.endswith("weight_rgb"):
                if embed.weight_extra is not None:
                    embed.weight_extra.copy_(val[:, 3:])
                val = val[:, :3]
            if tuple(val.shape) != tuple(p.shape):
                raise ShapeMismatchError(f"{key}: checkpoint {tuple(val.shape)} vs model {tuple(p.shape)}")
            p.copy_(val)
    return model


def predict(model_or_ckpt, x) -> np.ndarray:
    """Probability map sigma(S1) at input resolution for one [C, H, W] input."""
    model = model_or_ckpt if isinstance(model_or_ckpt, BEDSAM) else from_checkpoint(model_or_ckpt)
    t = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if t.ndim != 3:
        raise ShapeMismatchError(f"expected a [C, H, W] input, got {tuple(t.shape)}")
    model.eval()
    with torch.no_grad():
        logits = model(t[None])[0]
    return torch.sigmoid(logits)[0, 0].numpy()
