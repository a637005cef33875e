"""Model assembly, run configuration and checkpoints."""
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import torch
import torch.nn as nn
import yaml

from . import kinks
from .backbone import ViTBackbone, ViTConfig
from .decoder import Decoder, DecoderConfig
from .errors import ShapeError
from .fbam import FBAM, FbamConfig
from .upsampler import FeatureUpsampler, UpsamplerConfig

ABLATIONS = ("full", "baseline", "conv_branch", "concat_condition")


@dataclass(frozen=True)
class TrainConfig:
    """Run configuration. Defaults are the full-scale training recipe; see ``toy()``."""

    lr_main: float = 1e-5
    lr_upsampler: float = 1e-6
    steps: int = 80_000
    resolution: int = 768
    batch_size: int = 1
    seed: int = 0
    fbam_layers: int = 2
    window: int | None = None
    ablation: str = "full"
    patch_size: int = 16
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    upsampler_dim: int = 32
    upsample_factor: int = 8
    stage_channels: tuple[int, int, int] = (128, 64, 32)
    head_channels: int = 16
    trimap_radius: float = 5.0  # pixels at trimap_reference_res
    trimap_reference_res: int = 768
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # separate L1, Laplacian, gradient
    laplacian_levels: int = 5
    optimizer: str = "adam"
    dtype: str = "float32"
    upsampler_warmup_steps: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.lr_main <= 0:
            raise ValueError("lr_main must be > 0")
        if self.lr_upsampler < 0:
            raise ValueError("lr_upsampler must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.ablation == "baseline" and self.window is not None:
            raise ValueError("the baseline ablation has no upsampler, so window must be unset")
        if self.fbam_layers < 1 and self.ablation in ("full", "conv_branch"):
            raise ValueError("fbam_layers must be >= 1")
        if self.resolution % self.patch_size or self.resolution % 32:
            raise ValueError(
                f"resolution {self.resolution} must be divisible by patch size "
                f"{self.patch_size} and by 32")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if len(self.loss_weights) != 3 or min(self.loss_weights) < 0:
            raise ValueError("loss_weights must be three nonnegative numbers")
        if self.laplacian_levels < 1 or self.resolution % 2 ** (self.laplacian_levels - 1):
            raise ValueError(f"resolution {self.resolution} must be divisible by "
                             f"2^(laplacian_levels - 1) = {2 ** (self.laplacian_levels - 1)}")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is implemented")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale settings: 64 px, 4x4 token grid, same resolution bookkeeping as full scale."""
        base = dict(lr_main=1e-3, lr_upsampler=1e-4, steps=2000, resolution=64)
        base.update(overrides)
        return cls(**base)

    def vit_config(self) -> ViTConfig:
        concat = self.ablation == "concat_condition"
        return ViTConfig(self.patch_size, self.embed_dim, self.depth, self.num_heads,
                         self.mlp_ratio, frozen=not concat, in_chans=6 if concat else 3)

    def fbam_config(self) -> FbamConfig:
        return FbamConfig(self.fbam_layers, self.embed_dim, self.num_heads, self.mlp_ratio)

    def upsampler_config(self) -> UpsamplerConfig:
        return UpsamplerConfig(self.upsampler_dim, self.upsample_factor, self.window)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(tuple(self.stage_channels), self.head_channels)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(d["stage_channels"])
        d["loss_weights"] = list(d["loss_weights"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("stage_channels", "loss_weights"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def load_config(path, **overrides) -> TrainConfig:
    """Read a YAML key-value config; keys may be any subset of TrainConfig fields."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    toy = data.pop("toy", False)
    data.update(overrides)
    return TrainConfig.toy(**data) if toy else TrainConfig.from_dict(data)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


class ConvShortcut(nn.Module):
    """Full-resolution convolutional detail path fed straight into the matting head."""

    def __init__(self, channels: int, in_chans: int = 3):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_chans, channels, 3, padding=1), kinks.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1), kinks.ReLU())

    def forward(self, image):
        return self.net(image)


class CineMatte(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        self.ablation = cfg.ablation
        d = cfg.embed_dim
        self.backbone = ViTBackbone(cfg.vit_config())
        self.fbam = FBAM(cfg.fbam_config()) if cfg.ablation in ("full", "conv_branch") else None
        self.upsampler = (FeatureUpsampler(d, cfg.upsampler_config())
                          if cfg.ablation != "baseline" else None)
        self.conv_branch = (ConvShortcut(cfg.head_channels)
                            if cfg.ablation == "conv_branch" else None)
        self.decoder = Decoder(d, cfg.decoder_config(),
                               hires_dim=None if self.upsampler is None else d,
                               extra_head_channels=cfg.head_channels if self.conv_branch else 0)

    @property
    def uses_background(self) -> bool:
        return self.ablation != "baseline"

    def check_input(self, image: torch.Tensor) -> None:
        h, w = image.shape[-2:]
        p = self.cfg.patch_size
        if h % p or w % p:
            raise ShapeError(f"input {h}x{w} must have both sides divisible by {p}")

    def forward_features(self, image: torch.Tensor, background: torch.Tensor | None = None) -> dict:
        """Forward pass returning every intermediate (token grids, stage maps, logits, alpha)."""
        self.check_input(image)
        if self.uses_background:
            if background is None:
                raise ShapeError(f"the {self.ablation} model needs a background input")
            if background.shape != image.shape:
                raise ShapeError(
                    f"background {tuple(background.shape)} vs image {tuple(image.shape)}")
        out = {}
        if self.ablation == "concat_condition":
            tokens = self.backbone(torch.cat([image, background], 1))
            aligned = tokens.to_map()
        else:
            tokens = self.backbone(image)
            if self.fbam is not None:
                out["bg_tokens"] = self.backbone(background)
                aligned = self.fbam(tokens, out["bg_tokens"])
            else:
                aligned = tokens.to_map()
        feat = tokens.to_map()
        out["tokens"], out["aligned"] = tokens, aligned
        hires = self.upsampler(feat, image) if self.upsampler is not None else None
        out["hires"] = hires
        out["stages"] = self.decoder.stage_features(aligned, feat, hires)
        extra = self.conv_branch(image) if self.conv_branch is not None else None
        out["logits"] = self.decoder.head_logits(out["stages"][-1], extra)
        out["alpha"] = torch.sigmoid(out["logits"])
        return out

    def forward(self, image: torch.Tensor, background: torch.Tensor | None = None) -> torch.Tensor:
        return self.forward_features(image, background)["alpha"]

    def module_groups(self) -> dict[str, nn.Module]:
        groups = {"backbone": self.backbone, "fbam": self.fbam, "upsampler": self.upsampler,
                  "decoder": self.decoder, "conv_branch": self.conv_branch}
        return {k: v for k, v in groups.items() if v is not None}

    def parameter_groups(self) -> list[dict]:
        """Optimizer groups: FBAM/decoder (and unfrozen backbone) at lr_main, upsampler at lr_upsampler."""
        main, ups = [], []
        for name, mod in self.module_groups().items():
            params = [p for p in mod.parameters() if p.requires_grad]
            (ups if name == "upsampler" else main).extend(params)
        groups = [{"params": main, "lr": self.cfg.lr_main, "name": "main"}]
        if ups and self.cfg.lr_upsampler > 0:
            groups.append({"params": ups, "lr": self.cfg.lr_upsampler, "name": "upsampler"})
        return groups


def build_model(cfg: TrainConfig, seed: int | None = None) -> CineMatte:
    """Seeded construction; the global torch RNG is left untouched."""
    seed = cfg.seed if seed is None else seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CineMatte(cfg)
    return model.to(cfg.torch_dtype)


def parameter_counts(model: CineMatte) -> dict[str, int]:
    counts = {name: sum(p.numel() for p in mod.parameters())
              for name, mod in model.module_groups().items()}
    counts["total"] = sum(p.numel() for p in model.parameters())
    return counts


@dataclass
class Checkpoint:
    model: CineMatte
    config: TrainConfig
    step: int = 0
    optimizer_state: dict | None = None
    rng_state: torch.Tensor | None = None
    history: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def state(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "config": self.config.to_dict(),
            "step": self.step,
            "optimizer": self.optimizer_state,
            "rng": self.rng_state,
            "history": self.history,
            "notes": self.notes,
        }

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state(), path)

    @classmethod
    def from_state(cls, state: dict) -> "Checkpoint":
        cfg = TrainConfig.from_dict(state["config"])
        model = CineMatte(cfg).to(cfg.torch_dtype)
        model.load_state_dict(state["model"])
        return cls(model, cfg, state["step"], state.get("optimizer"), state.get("rng"),
                   list(state.get("history") or []), dict(state.get("notes") or {}))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_state(torch.load(path, map_location="cpu", weights_only=True))

