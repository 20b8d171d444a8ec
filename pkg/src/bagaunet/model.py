"""Dual-path attention segmentation network and its baseline variants.

The segmentation path is a 2-D U-Net over FLAIR slices (3x3 kernels). The
atlas encoding path runs the same encoder-decoder topology over the WM atlas
with 5x5 kernels and additive skip junctions. At each decoder level a
multi-input attention module (MAM) re-weights the segmentation skip and the
atlas feature with two attention gates sharing one gating signal, and the
attention fusion module (AFM) turns atlas channel statistics into per-channel
weights on the final decoder feature before the 1x1 head.

Variants:
  bagau                     full model (MAM + AFM)
  bagau_no_mam              atlas features enter the decoder by plain concat
  bagau_no_afm              plain 1x1 head on the segmentation feature
  bagau_plain               both removed: two-path concatenation U-Net
  unet_flair                single-path U-Net, atlas ignored
  unet_flair_atlas_channel  single-path U-Net, atlas stacked as input channel
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError

VARIANTS = (
    "bagau",
    "bagau_no_mam",
    "bagau_no_afm",
    "bagau_plain",
    "unet_flair",
    "unet_flair_atlas_channel",
)
DUAL_PATH_VARIANTS = ("bagau", "bagau_no_mam", "bagau_no_afm", "bagau_plain")
CHECKPOINT_VERSION = 1


@dataclass
class ModelSpec:
    channels: tuple[int, ...] = (64, 96, 128, 256, 512)
    seg_kernel: int = 3
    atlas_kernel: int = 5
    variant: str = "bagau"
    canvas: tuple[int, int] = (128, 128)
    init_seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.canvas = tuple(int(v) for v in self.canvas)
        if len(self.channels) != 5:
            raise ConfigError(f"channels must list 5 widths, got {self.channels}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])) or self.channels[0] < 1:
            raise ConfigError(f"channels must be positive and strictly increasing, got {self.channels}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        h, w = self.canvas
        if h <= 0 or w <= 0 or h % 16 or w % 16:
            raise ConfigError(f"canvas must be positive and divisible by 16 (four 2x poolings), got {self.canvas}")
        for k in (self.seg_kernel, self.atlas_kernel):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and positive, got {k}")

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "seg_kernel": self.seg_kernel,
            "atlas_kernel": self.atlas_kernel,
            "variant": self.variant,
            "canvas": list(self.canvas),
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class AttentionGateSpec:
    f_x: int
    f_g: int
    f_int: int

    def __post_init__(self):
        if self.f_x < 1 or self.f_g < 1 or self.f_int < 1:
            raise ConfigError(f"attention gate channel counts must be >= 1, got {self}")


class ConvBlock(nn.Module):
    """Two conv -> batch-norm -> ReLU layers at one resolution."""

    def __init__(self, c_in: int, c_out: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.block = nn.Sequential(
            nn.Conv2d(c_in, c_out, kernel_size=kernel, padding=pad, bias=True),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, kernel_size=kernel, padding=pad, bias=True),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UpBlock(nn.Module):
    """Bilinear 2x upsampling followed by conv -> batch-norm -> ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int):
        super().__init__()
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(c_in, c_out, kernel_size=kernel, padding=kernel // 2, bias=True),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.up(x)


class AttentionGate(nn.Module):
    """q = psi(relu(W_x x + W_g g + b_g)) + b_psi; alpha = sigmoid(q); out = alpha * x."""

    def __init__(self, spec: AttentionGateSpec):
        super().__init__()
        self.spec = spec
        self.W_x = nn.Conv2d(spec.f_x, spec.f_int, kernel_size=1, bias=False)
        self.W_g = nn.Conv2d(spec.f_g, spec.f_int, kernel_size=1, bias=True)
        self.psi = nn.Conv2d(spec.f_int, 1, kernel_size=1, bias=True)

    def forward(self, x, g):
        if x.shape[0] != g.shape[0] or x.shape[2:] != g.shape[2:]:
            raise ConfigError(f"attention gate inputs are not aligned: x {tuple(x.shape)} vs g {tuple(g.shape)}")
        q = self.psi(F.relu(self.W_x(x) + self.W_g(g)))
        alpha = torch.sigmoid(q)
        return alpha, alpha * x


class MultiInputAttention(nn.Module):
    """Two attention gates sharing one gating signal; their attended outputs are summed.

    The atlas feature is projected to the segmentation width by a 1x1
    convolution when the widths differ.
    """

    def __init__(self, c_seg: int, c_atlas: int, c_gate: int):
        super().__init__()
        f_int = max(c_seg // 2, 1)
        self.proj = nn.Conv2d(c_atlas, c_seg, kernel_size=1) if c_atlas != c_seg else None
        self.gate_seg = AttentionGate(AttentionGateSpec(c_seg, c_gate, f_int))
        self.gate_atlas = AttentionGate(AttentionGateSpec(c_seg, c_gate, f_int))

    def forward(self, x_seg, x_atlas, g):
        if self.proj is not None:
            x_atlas = self.proj(x_atlas)
        _, att_seg = self.gate_seg(x_seg, g)
        _, att_atlas = self.gate_atlas(x_atlas, g)
        return att_seg + att_atlas


class AttentionFusion(nn.Module):
    """Atlas-driven channel attention on the segmentation feature, then a 1x1 head.

    w = sigmoid(MLP(GAP(f_atlas))), fused = w * f_seg per channel, and the
    logits come from a 1x1 convolution over concat(fused, f_seg).
    """

    def __init__(self, c: int, reduction: int = 4):
        super().__init__()
        hidden = max(c // reduction, 1)
        self.mlp = nn.Sequential(nn.Linear(c, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, c))
        self.head = nn.Conv2d(2 * c, 1, kernel_size=1)

    def forward(self, f_seg, f_atlas):
        if f_seg.shape != f_atlas.shape:
            raise ConfigError(f"fusion inputs differ in shape: {tuple(f_seg.shape)} vs {tuple(f_atlas.shape)}")
        w = torch.sigmoid(self.mlp(f_atlas.mean(dim=(2, 3))))
        fused = w[:, :, None, None] * f_seg
        return self.head(torch.cat([fused, f_seg], dim=1))


class AtlasPath(nn.Module):
    """Encoder-decoder over the atlas with additive skips; yields one feature per decoder level."""

    def __init__(self, channels, kernel: int):
        super().__init__()
        c0, c1, c2, c3, c4 = channels
        self.pool = nn.MaxPool2d(2)
        self.enc1 = ConvBlock(1, c0, kernel)
        self.enc2 = ConvBlock(c0, c1, kernel)
        self.enc3 = ConvBlock(c1, c2, kernel)
        self.enc4 = ConvBlock(c2, c3, kernel)
        self.bottleneck = ConvBlock(c3, c4, kernel)
        self.up4 = UpBlock(c4, c3, kernel)
        self.up3 = UpBlock(c3, c2, kernel)
        self.up2 = UpBlock(c2, c1, kernel)
        self.up1 = UpBlock(c1, c0, kernel)
        # addition keeps the decoder input at the skip width, so no concat growth
        self.dec4 = ConvBlock(c3, c3, kernel)
        self.dec3 = ConvBlock(c2, c2, kernel)
        self.dec2 = ConvBlock(c1, c1, kernel)
        self.dec1 = ConvBlock(c0, c0, kernel)

    def forward(self, atlas):
        s1 = self.enc1(atlas)
        s2 = self.enc2(self.pool(s1))
        s3 = self.enc3(self.pool(s2))
        s4 = self.enc4(self.pool(s3))
        b = self.bottleneck(self.pool(s4))
        d4 = self.dec4(self.up4(b) + s4)
        d3 = self.dec3(self.up3(d4) + s3)
        d2 = self.dec2(self.up2(d3) + s2)
        d1 = self.dec1(self.up1(d2) + s1)
        return d1, d2, d3, d4


class BAGAUNet(nn.Module):
    """The full variant family behind one forward(flair, atlas) -> probabilities interface."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        if not isinstance(spec, ModelSpec):
            raise ConfigError(f"expected a ModelSpec, got {type(spec).__name__}")
        self.spec = spec
        c0, c1, c2, c3, c4 = spec.channels
        k = spec.seg_kernel
        self.dual = spec.variant in DUAL_PATH_VARIANTS
        self.use_mam = spec.variant in ("bagau", "bagau_no_afm")
        self.use_afm = spec.variant in ("bagau", "bagau_no_mam")

        in_ch = 2 if spec.variant == "unet_flair_atlas_channel" else 1
        self.pool = nn.MaxPool2d(2)
        self.enc1 = ConvBlock(in_ch, c0, k)
        self.enc2 = ConvBlock(c0, c1, k)
        self.enc3 = ConvBlock(c1, c2, k)
        self.enc4 = ConvBlock(c2, c3, k)
        self.bottleneck = ConvBlock(c3, c4, k)
        self.up4 = UpBlock(c4, c3, k)
        self.up3 = UpBlock(c3, c2, k)
        self.up2 = UpBlock(c2, c1, k)
        self.up1 = UpBlock(c1, c0, k)

        # decoder input = concat of (skip feature(s), upsampled feature):
        # MAM collapses seg skip + atlas feature into one C-wide map, the
        # no-MAM dual variants concatenate both maps raw.
        mult = 3 if (self.dual and not self.use_mam) else 2
        self.dec4 = ConvBlock(mult * c3, c3, k)
        self.dec3 = ConvBlock(mult * c2, c2, k)
        self.dec2 = ConvBlock(mult * c1, c1, k)
        self.dec1 = ConvBlock(mult * c0, c0, k)

        if self.dual:
            self.atlas_path = AtlasPath(spec.channels, spec.atlas_kernel)
        if self.use_mam:
            self.mam4 = MultiInputAttention(c3, c3, c3)
            self.mam3 = MultiInputAttention(c2, c2, c2)
            self.mam2 = MultiInputAttention(c1, c1, c1)
            self.mam1 = MultiInputAttention(c0, c0, c0)
        if self.use_afm:
            self.afm = AttentionFusion(c0)
        else:
            self.head = nn.Conv2d(c0, 1, kernel_size=1)

    def _check_inputs(self, flair, atlas):
        if flair.dim() != 4 or flair.shape[1] != 1:
            raise ConfigError(f"flair input must be (N,1,h,w), got {tuple(flair.shape)}")
        if atlas.shape != flair.shape:
            raise ConfigError(f"atlas shape {tuple(atlas.shape)} does not match flair {tuple(flair.shape)}")
        if tuple(flair.shape[2:]) != self.spec.canvas:
            raise ConfigError(f"input canvas {tuple(flair.shape[2:])} does not match model canvas {self.spec.canvas}")
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise DataError(f"non-finite values in parameter {name}")

    def forward(self, flair, atlas):
        self._check_inputs(flair, atlas)
        x = torch.cat([flair, atlas], dim=1) if self.spec.variant == "unet_flair_atlas_channel" else flair

        s1 = self.enc1(x)
        s2 = self.enc2(self.pool(s1))
        s3 = self.enc3(self.pool(s2))
        s4 = self.enc4(self.pool(s3))
        b = self.bottleneck(self.pool(s4))

        if self.dual:
            a1, a2, a3, a4 = self.atlas_path(atlas)

        def merge(level, skip, atlas_feat, up):
            if self.use_mam:
                mam = getattr(self, f"mam{level}")
                return torch.cat([mam(skip, atlas_feat, up), up], dim=1)
            if self.dual:
                return torch.cat([skip, atlas_feat, up], dim=1)
            return torch.cat([skip, up], dim=1)

        u4 = self.up4(b)
        d4 = self.dec4(merge(4, s4, a4 if self.dual else None, u4))
        u3 = self.up3(d4)
        d3 = self.dec3(merge(3, s3, a3 if self.dual else None, u3))
        u2 = self.up2(d3)
        d2 = self.dec2(merge(2, s2, a2 if self.dual else None, u2))
        u1 = self.up1(d2)
        d1 = self.dec1(merge(1, s1, a1 if self.dual else None, u1))

        logits = self.afm(d1, a1) if self.use_afm else self.head(d1)
        return torch.sigmoid(logits)


def build_model(spec: ModelSpec) -> BAGAUNet:
    """Instantiate a variant with deterministic initialization under spec.init_seed."""
    torch.manual_seed(spec.init_seed)
    model = BAGAUNet(spec)
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, model: BAGAUNet, step: int = 0, extra: dict | None = None) -> Path:
    """Single-file checkpoint: spec + named tensors + step counter, version-tagged."""
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "state_dict": model.state_dict(),
        "step": int(step),
    }
    for key, value in (extra or {}).items():
        if key in payload:
            raise ConfigError(f"checkpoint extra field {key!r} collides with a reserved field")
        payload[key] = value
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path, expected_spec: ModelSpec | None = None,
                    map_location: str = "cpu") -> tuple[BAGAUNet, dict]:
    """Rebuild the model from a checkpoint; a mismatched expected spec is an error."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint format in {path}")
    spec = ModelSpec.from_dict(payload["spec"])
    if expected_spec is not None and spec != expected_spec:
        raise ConfigError(f"checkpoint spec {spec} does not match requested spec {expected_spec}")
    model = BAGAUNet(spec)
    model.load_state_dict(payload["state_dict"])
    return model, payload
