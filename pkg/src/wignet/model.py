"""Full WiGNet: stem, four stages of WiGNet blocks, downsampling and head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import functional as F
from .layers import FFNLayer, GrapherLayer, WiGNetBlock
from .nn import BatchNorm, Conv2d, Linear, Module
from .tensor import DimensionError, Parameter, Tensor, get_default_dtype
from .windowing import effective_window, padding_for, region_map


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    stage_dims: tuple[int, int, int, int]
    stage_depths: tuple[int, int, int, int]
    ffn_ratio: int = 4
    k: int = 9
    window: int = 8
    num_classes: int = 1000
    input_resolution: tuple[int, int] = (224, 224)
    head_hidden: int = 1024
    shift: bool = True
    adaptive_k: bool = True
    operator: str = "max_relative"
    update_groups: int = 4
    seed: int = 0

    def with_(self, **kw) -> "ModelConfig":
        if "input_resolution" in kw and isinstance(kw["input_resolution"], int):
            kw["input_resolution"] = (kw["input_resolution"], kw["input_resolution"])
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("stage_dims", "stage_depths", "input_resolution"):
            d[key] = tuple(d[key])
        return cls(**d)


VARIANTS: dict[str, ModelConfig] = {
    "Ti": ModelConfig("Ti", (48, 96, 240, 384), (2, 2, 6, 2)),
    "S": ModelConfig("S", (80, 160, 400, 640), (2, 2, 6, 2)),
    "M": ModelConfig("M", (96, 192, 384, 768), (2, 2, 16, 2)),
    # desk-scale configurations
    "toy-narrow": ModelConfig("toy-narrow", (16, 32, 48, 64), (1, 1, 2, 1), k=4, window=4,
                              num_classes=4, input_resolution=(64, 64)),
    "toy-deep": ModelConfig("toy-deep", (16, 32, 48, 64), (2, 2, 2, 2), k=4, window=4,
                            num_classes=4, input_resolution=(64, 64)),
}

# published size targets: (params in millions, MACs in billions at 256x256)
REFERENCE_SIZES = {"Ti": (10.8, 2.1), "S": (27.4, 5.7), "M": (49.7, 11.2)}


def get_config(variant: str, **overrides) -> ModelConfig:
    try:
        cfg = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    return cfg.with_(**overrides) if overrides else cfg


def stage_resolutions(H: int, W: int) -> list[tuple[int, int]]:
    """Grid extents of stem output and each stage, following the stride-2 convs."""
    sizes = []
    h, w = H, W
    for _ in range(2):
        h, w = F.conv_output_size(h, 3, 2, 1), F.conv_output_size(w, 3, 2, 1)
    sizes.append((h, w))
    for _ in range(3):
        h, w = F.conv_output_size(h, 3, 2, 1), F.conv_output_size(w, 3, 2, 1)
        sizes.append((h, w))
    return sizes


class WiGNetModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        D = config.stage_dims
        self.stem = [
            Conv2d(3, D[0] // 2, 3, 2, 1, rng), BatchNorm(D[0] // 2),
            Conv2d(D[0] // 2, D[0], 3, 2, 1, rng), BatchNorm(D[0]),
            Conv2d(D[0], D[0], 3, 1, 1, rng), BatchNorm(D[0]),
        ]
        h, w = stage_resolutions(*config.input_resolution)[0]
        self.pos_embed = Parameter(np.zeros((1, h, w, D[0]), get_default_dtype()), "pos_embed")
        self.stages: list[list[WiGNetBlock]] = []
        self.downsamples: list[Module] = []
        for s, (dim, depth) in enumerate(zip(D, config.stage_depths)):
            blocks = []
            for j in range(depth):
                g = GrapherLayer(
                    dim, config.k, config.window, rng,
                    shifted=config.shift and j % 2 == 1,
                    adaptive=config.adaptive_k,
                    operator=config.operator,
                    groups=config.update_groups,
                )
                blocks.append(WiGNetBlock(g, FFNLayer(dim, config.ffn_ratio, rng)))
            self.stages.append(blocks)
            if s < 3:
                self.downsamples.append(_Downsample(dim, D[s + 1], rng))
        self.head_fc1 = Linear(D[3], config.head_hidden, rng)
        self.head_fc2 = Linear(config.head_hidden, config.num_classes, rng)

    def _children(self):
        yield from super()._children()
        for s, blocks in enumerate(self.stages):
            for j, b in enumerate(blocks):
                yield f"stages.{s}.{j}", b

    def features(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[-1] != 3:
            raise DimensionError(f"expected images [B, H, W, 3], got {images.shape}")
        if tuple(images.shape[1:3]) != tuple(self.config.input_resolution):
            raise DimensionError(
                f"model built for {self.config.input_resolution}, got input {images.shape[1:3]}"
            )
        x = images
        for i, layer in enumerate(self.stem):
            x = layer(x)
            if isinstance(layer, BatchNorm) and i < len(self.stem) - 1:
                x = F.gelu(x)
        x = x + self.pos_embed
        for s, blocks in enumerate(self.stages):
            for b in blocks:
                x = b(x)
            if s < 3:
                x = self.downsamples[s](x)
        return x

    def forward(self, images: Tensor) -> Tensor:
        x = F.global_avg_pool(self.features(images))
        return self.head_fc2(F.gelu(self.head_fc1(x)))

    def graphers(self) -> list[GrapherLayer]:
        return [b.grapher for blocks in self.stages for b in blocks]


class _Downsample(Module):
    def __init__(self, cin: int, cout: int, rng):
        self.conv = Conv2d(cin, cout, 3, 2, 1, rng)
        self.bn = BatchNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))


def build(config: ModelConfig | str, **overrides) -> WiGNetModel:
    if isinstance(config, str):
        config = get_config(config, **overrides)
    elif overrides:
        config = config.with_(**overrides)
    return WiGNetModel(config)


def count_params(m: Module) -> int:
    return int(sum(p.data.size for p in m.parameters()))


def stage_params(m: WiGNetModel) -> dict[str, int]:
    """Parameter totals grouped by top-level component."""
    out: dict[str, int] = {}
    for name, p in m.named_parameters():
        head = name.split(".")[0]
        if head == "stages":
            key = f"stage{int(name.split('.')[1]) + 1}"
        elif head == "downsamples":
            key = f"downsample{int(name.split('.')[1]) + 1}"
        elif head.startswith("head"):
            key = "head"
        elif head in ("stem", "pos_embed"):
            key = "stem"
        else:
            key = head
        out[key] = out.get(key, 0) + p.data.size
    return out


def _grapher_knn_pairs(h: int, w: int, window: int, shifted: bool) -> tuple[int, int]:
    """(distance pairs, effective window) of one Grapher on an ``h x w`` grid."""
    M = effective_window(h, w, window)
    single = h <= M and w <= M
    S = M // 2 if shifted and not single else 0
    ph, pw = padding_for(h, w, M)
    labels = region_map(h, w, M, S, bool(S), ph, pw).labels
    real = (labels >= 0).sum(axis=1).astype(np.int64)
    return int(np.sum(real**2)), M


def mac_breakdown(config: ModelConfig | Module, resolution=None) -> list[tuple[str, int]]:
    """Analytic multiply-accumulate count per layer for a single image.

    Convolutions: ``Ho*Wo*kh*kw*Cin*Cout``; linear maps: ``nodes*Fin*Fout``;
    k-NN: one MAC per feature per distance pair. Batch norm, activations,
    gathers and the max reduction are not counted.
    """
    if isinstance(config, WiGNetModel):
        config = config.config
    if resolution is None:
        resolution = config.input_resolution
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    H, W = resolution
    D = config.stage_dims
    rows: list[tuple[str, int]] = []
    h, w = H, W
    for i, (cin, cout, stride) in enumerate([(3, D[0] // 2, 2), (D[0] // 2, D[0], 2), (D[0], D[0], 1)]):
        h, w = F.conv_output_size(h, 3, stride, 1), F.conv_output_size(w, 3, stride, 1)
        rows.append((f"stem.conv{i + 1}", h * w * 9 * cin * cout))
    for s, (dim, depth) in enumerate(zip(D, config.stage_depths)):
        n = h * w
        for j in range(depth):
            shifted = config.shift and j % 2 == 1
            pairs, _ = _grapher_knn_pairs(h, w, config.window, shifted)
            p = f"stage{s + 1}.block{j + 1}"
            groups = config.update_groups if (2 * dim) % config.update_groups == 0 else 1
            rows.append((f"{p}.grapher.fc_in", n * dim * 2 * dim))
            rows.append((f"{p}.grapher.knn", pairs * 2 * dim))
            rows.append((f"{p}.grapher.update", n * (4 * dim) * (2 * dim) // groups))
            if config.operator == "graphsage":
                rows.append((f"{p}.grapher.pool", n * (2 * dim) ** 2))
            if config.operator == "edgeconv":
                rows[-1] = (f"{p}.grapher.update", n * config.k * (4 * dim) * (2 * dim) // groups)
            rows.append((f"{p}.grapher.fc_out", n * 2 * dim * dim))
            hidden = dim * config.ffn_ratio
            rows.append((f"{p}.ffn.fc1", n * dim * hidden))
            rows.append((f"{p}.ffn.fc2", n * hidden * dim))
        if s < 3:
            h, w = F.conv_output_size(h, 3, 2, 1), F.conv_output_size(w, 3, 2, 1)
            rows.append((f"downsample{s + 1}", h * w * 9 * dim * D[s + 1]))
    rows.append(("head.fc1", D[3] * config.head_hidden))
    rows.append(("head.fc2", config.head_hidden * config.num_classes))
    return rows


def count_macs(config: ModelConfig | Module, resolution=None) -> int:
    return int(sum(v for _, v in mac_breakdown(config, resolution)))
