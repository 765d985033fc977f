"""MobileNetV2 backbone, the classification head and its ablation variants."""

from dataclasses import asdict, dataclass, field, replace

from .graph import INPUT, GraphBuilder
from .layers import (Add, BatchNorm, Concat, Conv, Dense, Dropout, Flatten, GlobalAvgPool,
                     GlobalMaxPool, ReLU, Softmax)
from .ops import ConvSpec
from .errors import ConfigError

# (expansion t, output channels c, repeats n, first stride s)
MOBILENET_V2_TABLE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

VARIANTS = ("DeepMediX", "Model1", "Model2", "Model3", "Model4",
            "Model5", "Model6", "Model7", "Model8")


def make_divisible(value, divisor=8, min_value=8):
    """Round a scaled channel count to a multiple of ``divisor`` (never below ``min_value``)."""
    new = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


@dataclass(frozen=True)
class InvertedResidualSpec:
    in_channels: int
    out_channels: int
    expansion: int = 6
    stride: int = 1

    def __post_init__(self):
        if self.expansion < 1:
            raise ConfigError("expansion factor must be >= 1")
        if self.stride not in (1, 2):
            raise ConfigError("inverted-residual stride must be 1 or 2")

    @property
    def residual(self):
        return self.stride == 1 and self.in_channels == self.out_channels

    @property
    def expanded(self):
        return self.in_channels * self.expansion


@dataclass(frozen=True)
class BackboneSpec:
    width_multiplier: float = 1.0
    input_size: tuple = (224, 224, 3)
    table: tuple = MOBILENET_V2_TABLE
    stem_channels: int = 32
    last_channels: int = 1280

    def __post_init__(self):
        if self.width_multiplier <= 0:
            raise ConfigError("width multiplier must be positive")
        if len(self.input_size) != 3 or any(int(d) < 1 for d in self.input_size):
            raise ConfigError(f"bad input size {self.input_size}")
        if not self.table:
            raise ConfigError("backbone table is empty")
        for row in self.table:
            t, c, n, s = row
            if t < 1 or c < 1 or n < 1 or s not in (1, 2):
                raise ConfigError(f"invalid backbone table row {row}")

    @property
    def feature_dim(self):
        if self.width_multiplier > 1.0:
            return make_divisible(self.last_channels * self.width_multiplier)
        return self.last_channels

    def blocks(self):
        """The flattened list of :class:`InvertedResidualSpec`."""
        out = []
        cin = make_divisible(self.stem_channels * self.width_multiplier)
        for t, c, n, s in self.table:
            cout = make_divisible(c * self.width_multiplier)
            for i in range(n):
                out.append(InvertedResidualSpec(cin, cout, t, s if i == 0 else 1))
                cin = cout
        return out


@dataclass(frozen=True)
class HeadSpec:
    feature_dim: int
    num_classes: int
    drop_rate: float = 0.4
    hidden_sizes: tuple = (64, 32, 16)
    skip_connection: bool = True
    dropout_modules: bool = True
    pool: str = "avg"

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.hidden_sizes) != 3 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be three positive widths")
        if self.pool not in ("avg", "max"):
            raise ConfigError(f"unknown pool {self.pool!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError("drop_rate must be in [0, 1)")


def _conv_bn(b, name, x, spec, relu=True):
    x = b.add(f"{name}.conv", Conv(spec), x)
    x = b.add(f"{name}.bn", BatchNorm(spec.out_channels), x)
    if relu:
        x = b.add(f"{name}.relu", ReLU(), x)
    return x


def inverted_residual(b, name, x, spec: InvertedResidualSpec):
    """Expand (1x1) -> depthwise 3x3 -> linear projection (1x1), plus skip-add when shapes allow."""
    inp = x
    if spec.expansion != 1:
        x = _conv_bn(b, f"{name}.expand", x,
                     ConvSpec(1, spec.in_channels, spec.expanded, mode="pointwise"))
    x = _conv_bn(b, f"{name}.depthwise", x,
                 ConvSpec(3, spec.expanded, spec.expanded, spec.stride, "same", "depthwise"))
    x = _conv_bn(b, f"{name}.project", x,
                 ConvSpec(1, spec.expanded, spec.out_channels, mode="pointwise"), relu=False)
    if spec.residual:
        x = b.add(f"{name}.add", Add(), x, inp)
    return x


def build_backbone(spec: BackboneSpec):
    b = GraphBuilder(spec.input_size)
    stem = make_divisible(spec.stem_channels * spec.width_multiplier)
    x = _conv_bn(b, "stem", INPUT, ConvSpec(3, spec.input_size[2], stem, 2, "same"))
    blocks = spec.blocks()
    for i, block in enumerate(blocks):
        x = inverted_residual(b, f"block{i}", x, block)
    x = _conv_bn(b, "final", x, ConvSpec(1, blocks[-1].out_channels, spec.feature_dim, mode="pointwise"))
    return b.build(x)


def build_head(spec: HeadSpec, spatial=(None, None)):
    """The classification head over an ``h x w x d`` feature map, ending in softmax."""
    h1, h2, h3 = spec.hidden_sizes
    d, k = spec.feature_dim, spec.num_classes
    b = GraphBuilder((*spatial, d))

    def drop(name, x):
        return b.add(name, Dropout(spec.drop_rate), x) if spec.dropout_modules else x

    def dense_block(name, x, d_in, d_out, bn):
        x = b.add(f"{name}", Dense(d_in, d_out), x)
        x = b.add(f"{name}.relu", ReLU(), x)
        if bn and spec.dropout_modules:
            x = b.add(f"{name}.bn", BatchNorm(d_out), x)
        return x

    x = drop("drop1", INPUT)
    pool = GlobalAvgPool() if spec.pool == "avg" else GlobalMaxPool()
    x = b.add("pool", pool, x)
    flat = b.add("flatten", Flatten(), x)
    x = drop("drop2", flat)
    x = dense_block("dense1", x, d, h1, True)
    x = drop("drop3", x)
    x = dense_block("dense2", x, h1, h2, True)
    width = h2
    if spec.skip_connection:
        x = b.add("concat", Concat(), flat, x)
        width = d + h2
    x = drop("drop4", x)
    x = dense_block("dense3", x, width, h3, True)
    x = drop("drop5", x)
    x = b.add("dense4", Dense(h3, k), x)
    x = b.add("softmax", Softmax(), x)
    return b.build(x)


_VARIANT_OPTIONS = {
    "DeepMediX": {},
    "Model1": {"pool": "max"},
    "Model2": {"skip_connection": False},
    "Model3": {"dropout_modules": False},
    "Model4": {"skip_connection": False, "dropout_modules": False},
    "Model5": {"hidden_sizes": (256, 256, 256)},
    "Model6": {"hidden_sizes": (256, 256, 256), "skip_connection": False},
    "Model7": {"hidden_sizes": (256, 256, 256), "dropout_modules": False},
    "Model8": {"hidden_sizes": (256, 256, 256), "skip_connection": False, "dropout_modules": False},
}


def variant_head_spec(variant, feature_dim, num_classes):
    if variant not in _VARIANT_OPTIONS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return replace(HeadSpec(feature_dim, num_classes), **_VARIANT_OPTIONS[variant])


def build_variant(variant, backbone: BackboneSpec, num_classes):
    """Full classifier ``softmax ∘ head ∘ backbone``; node names are prefixed ``base.`` / ``head.``."""
    head = variant_head_spec(variant, backbone.feature_dim, num_classes)
    return build_backbone(backbone).compose(build_head(head))


@dataclass
class ArchitectureConfig:
    """Serializable description of a full model."""

    variant: str = "DeepMediX"
    width_multiplier: float = 1.0
    input_size: tuple = (224, 224, 3)
    num_classes: int = 4
    table: tuple = field(default=MOBILENET_V2_TABLE)

    def backbone_spec(self):
        return BackboneSpec(self.width_multiplier, tuple(self.input_size),
                            tuple(tuple(r) for r in self.table))

    def build(self):
        return build_variant(self.variant, self.backbone_spec(), self.num_classes)

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["table"] = [list(r) for r in self.table]
        d["head"] = asdict(variant_head_spec(self.variant, self.backbone_spec().feature_dim,
                                             self.num_classes))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("head", None)
        unknown = set(d) - {"variant", "width_multiplier", "input_size", "num_classes", "table"}
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        if "input_size" in d:
            d["input_size"] = tuple(d["input_size"])
        if "table" in d:
            d["table"] = tuple(tuple(r) for r in d["table"])
        return cls(**d)
