"""Segmentation architectures: a simple FCN and an adapted DeepLab.

Both map (batch, bands, H, W) standardized reflectance to per-class score
maps of the same spatial size.  The DeepLab path keeps full resolution
through the first two entry blocks, downsamples once to H/2, runs residual
separable blocks and an exit block, pools multi-scale context with an
atrous spatial pyramid (1x1, three atrous 3x3, image-level branch), then
decodes against a projected low-level feature and upsamples bilinearly.
The FCN extracts four full-resolution convolutions, downsamples once with
parallel max/average pooling concatenated along channels, stacks four more
convolutions and a 1x1 classifier, and upsamples back.

Every convolution is followed by batch normalization and ReLU except the
final classifier.  Weights use seeded He initialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .autograd import (
    Tensor,
    add,
    avg_pool2x2,
    batch_norm,
    bilinear_upsample,
    concat_channels,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    max_pool2x2,
    relu,
)

FCN = "fcn"
DEEPLAB = "deeplab"


@dataclass
class ModelConfig:
    architecture: str = DEEPLAB
    in_bands: int = 6
    n_classes: int = 4
    patch_size: int = 48
    atrous_rates: tuple = (1, 2, 4)
    learning_rate: float = 0.0002
    epochs: int = 12
    batch_size: int = 8
    seed: int = 0
    # channel plan
    entry_channels: tuple = (32, 64, 128)
    middle_channels: int = 128
    middle_blocks: int = 3
    exit_channels: int = 256
    aspp_channels: int = 64
    low_level_channels: int = 32
    decoder_channels: int = 64
    fcn_widths: tuple = (32, 32, 64, 64)
    fcn_head_width: int = 96

    def __post_init__(self):
        if self.architecture not in (FCN, DEEPLAB):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        rates = tuple(self.atrous_rates)
        if any(r < 1 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"atrous rates must be >= 1 and strictly increasing: {rates}")
        if self.patch_size % 2:
            raise ValueError(f"patch_size must be even, got {self.patch_size}")
        self.atrous_rates = rates
        self.entry_channels = tuple(self.entry_channels)
        self.fcn_widths = tuple(self.fcn_widths)


@dataclass
class ModelParams:
    """Named trainable tensors plus batch-norm running moments."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    running: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        return self.tensors

    def check_finite(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"non-finite values in parameter {name!r}")

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for name, t in self.tensors.items():
            clone = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.tensors[name] = clone
        out.running = {k: v.copy() for k, v in self.running.items()}
        return out


class ParamBuilder:
    def __init__(self, params: ModelParams, rng: np.random.Generator | None):
        self.params = params
        self.rng = rng

    def _tensor(self, name: str, shape, fan_in: int) -> Tensor:
        if self.rng is not None:
            if name in self.params.tensors:
                raise ValueError(f"duplicate parameter name {name!r}")
            data = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            self.params.tensors[name] = Tensor(data, requires_grad=True)
        return self.params.tensors[name]

    def _zeros(self, name: str, shape) -> Tensor:
        if self.rng is not None:
            self.params.tensors[name] = Tensor(np.zeros(shape), requires_grad=True)
        return self.params.tensors[name]

    def _ones(self, name: str, shape) -> Tensor:
        if self.rng is not None:
            self.params.tensors[name] = Tensor(np.ones(shape), requires_grad=True)
        return self.params.tensors[name]

    def _running(self, name: str, channels: int) -> tuple[np.ndarray, np.ndarray]:
        if self.rng is not None:
            self.params.running[f"{name}.running_mean"] = np.zeros(channels)
            self.params.running[f"{name}.running_var"] = np.ones(channels)
        return (
            self.params.running[f"{name}.running_mean"],
            self.params.running[f"{name}.running_var"],
        )

    def conv_bn_relu(self, name, x, c_in, c_out, k=3, stride=1, dilation=1, training=False,
                     activate=True):
        w = self._tensor(f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        out = conv2d(x, w, stride=stride, dilation=dilation, padding="same")
        out = self.bn(f"{name}.bn", out, c_out, training)
        return relu(out) if activate else out

    def sepconv_bn_relu(self, name, x, c_in, c_out, stride=1, training=False, activate=True):
        # depthwise 3x3 then pointwise 1x1, batch norm after each conv
        dw = self._tensor(f"{name}.depthwise", (c_in, 3, 3), 9)
        out = depthwise_conv2d(x, dw, stride=stride, padding="same")
        out = self.bn(f"{name}.bn_dw", out, c_in, training)
        pw = self._tensor(f"{name}.pointwise", (c_out, c_in, 1, 1), c_in)
        out = conv2d(out, pw, padding="same")
        out = self.bn(f"{name}.bn_pw", out, c_out, training)
        return relu(out) if activate else out

    def bn(self, name, x, channels, training):
        gamma = self._ones(f"{name}.gamma", channels)
        beta = self._zeros(f"{name}.beta", channels)
        rm, rv = self._running(name, channels)
        return batch_norm(x, gamma, beta, rm, rv, training)

    def classifier(self, name, x, c_in, n_classes):
        w = self._tensor(f"{name}.weight", (n_classes, c_in, 1, 1), c_in)
        b = self._zeros(f"{name}.bias", n_classes)
        return conv2d(x, w, bias=b, padding="same")


def aspp_forward(
    builder: ParamBuilder,
    x: Tensor,
    c_in: int,
    rates: tuple,
    branch_channels: int,
    training: bool,
    prefix: str = "aspp",
) -> Tensor:
    """Atrous spatial pyramid: 1x1, three atrous 3x3, image-level branch.

    The five branch outputs are concatenated along channels and fused by a
    1x1 convolution; spatial dimensions are preserved.
    """
    if any(r < 1 for r in rates):
        raise ValueError(f"atrous rates must be >= 1, got {rates}")
    n, _, h, w = x.data.shape
    branches = [builder.conv_bn_relu(f"{prefix}.branch0", x, c_in, branch_channels, k=1,
                                     training=training)]
    for i, rate in enumerate(rates):
        branches.append(
            builder.conv_bn_relu(
                f"{prefix}.branch{i + 1}", x, c_in, branch_channels,
                k=3, dilation=int(rate), training=training,
            )
        )
    # image-level branch: pool -> 1x1 conv -> upsample.  No batch norm here;
    # normalizing over batch-many 1x1 features is pure batch noise.
    pooled = global_avg_pool(x)
    iw = builder._tensor(f"{prefix}.image.weight", (branch_channels, c_in, 1, 1), c_in)
    ib = builder._zeros(f"{prefix}.image.bias", branch_channels)
    image = relu(conv2d(pooled, iw, ib, padding="same"))
    branches.append(bilinear_upsample(image, h, w))
    merged = concat_channels(branches)
    return builder.conv_bn_relu(
        f"{prefix}.fuse", merged, branch_channels * len(branches), branch_channels,
        k=1, training=training,
    )


def _deeplab_forward(config: ModelConfig, builder: ParamBuilder, x: Tensor, training: bool) -> Tensor:
    e1, e2, e3 = config.entry_channels
    out = builder.sepconv_bn_relu("entry1", x, config.in_bands, e1, training=training)
    out = builder.sepconv_bn_relu("entry2", out, e1, e2, training=training)
    out = builder.sepconv_bn_relu("entry3", out, e2, e3, stride=2, training=training)
    low_level = out  # H/2 feature from the entry flow, reused by the decoder
    for i in range(config.middle_blocks):
        branch = builder.sepconv_bn_relu(
            f"middle{i + 1}", out, config.middle_channels, config.middle_channels,
            training=training, activate=False,
        )
        out = relu(add(out, branch))
    out = builder.sepconv_bn_relu("exit", out, config.middle_channels, config.exit_channels,
                                  training=training)
    out = aspp_forward(builder, out, config.exit_channels, config.atrous_rates,
                       config.aspp_channels, training)
    low = builder.conv_bn_relu("decoder.low_level", low_level, e3,
                               config.low_level_channels, k=1, training=training)
    out = concat_channels([out, low])
    out = builder.conv_bn_relu("decoder.conv1", out,
                               config.aspp_channels + config.low_level_channels,
                               config.decoder_channels, training=training)
    out = builder.conv_bn_relu("decoder.conv2", out, config.decoder_channels,
                               config.decoder_channels, training=training)
    logits = builder.classifier("decoder.classifier", out, config.decoder_channels,
                                config.n_classes)
    return bilinear_upsample(logits, x.data.shape[2], x.data.shape[3])


def _fcn_forward(config: ModelConfig, builder: ParamBuilder, x: Tensor, training: bool) -> Tensor:
    widths = config.fcn_widths
    out = x
    c = config.in_bands
    for i, width in enumerate(widths):
        out = builder.conv_bn_relu(f"enc{i + 1}", out, c, width, training=training)
        c = width
    pooled = concat_channels([max_pool2x2(out), avg_pool2x2(out)])
    c = 2 * c
    head = config.fcn_head_width
    for i in range(4):
        pooled = builder.conv_bn_relu(f"head{i + 1}", pooled, c, head, training=training)
        c = head
    logits = builder.classifier("classifier", pooled, c, config.n_classes)
    return bilinear_upsample(logits, x.data.shape[2], x.data.shape[3])


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded parameter initialization via a dry-run forward pass."""
    params = ModelParams()
    rng = np.random.default_rng(config.seed)
    probe = Tensor(np.zeros((1, config.in_bands, config.patch_size, config.patch_size)))
    builder = ParamBuilder(params, rng)
    if config.architecture == DEEPLAB:
        _deeplab_forward(config, builder, probe, training=False)
    else:
        _fcn_forward(config, builder, probe, training=False)
    # the dry run polluted the running moments; reset them
    for name, arr in params.running.items():
        arr.fill(0.0 if name.endswith("running_mean") else 1.0)
    return params


def model_forward(config: ModelConfig, params: ModelParams, x: Tensor,
                  training: bool = False) -> Tensor:
    """Per-class score map of shape (batch, n_classes, H, W)."""
    if x.data.ndim != 4 or x.data.shape[1] != config.in_bands:
        raise ValueError(
            f"expected (batch, {config.in_bands}, H, W) input, got {x.data.shape}"
        )
    if x.data.shape[2] % 2 or x.data.shape[3] % 2:
        raise ValueError(f"spatial dims must be even, got {x.data.shape[2:]}")
    builder = ParamBuilder(params, rng=None)
    if config.architecture == DEEPLAB:
        return _deeplab_forward(config, builder, x, training)
    return _fcn_forward(config, builder, x, training)


# ---------------------------------------------------------------------------
# Serialization: text manifest + float32 payload in manifest order
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = [f.name for f in ModelConfig.__dataclass_fields__.values()]  # type: ignore


def save_params(config: ModelConfig, params: ModelParams, manifest_path, payload_path
                ) -> None:
    entries = [(name, t.data) for name, t in params.tensors.items()]
    entries += [(name, arr) for name, arr in params.running.items()]
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for key, value in asdict(config).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"config {key}={value}\n")
        for name, arr in entries:
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"param {name} {dims}\n")
    with open(payload_path, "wb") as fh:
        for _, arr in entries:
            fh.write(arr.astype("<f4").tobytes())


def _parse_config(lines: list[str]) -> ModelConfig:
    kwargs = {}
    for line in lines:
        key, _, value = line.partition("=")
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"unknown config key {key!r} in manifest")
        if key in ("atrous_rates", "entry_channels", "fcn_widths"):
            kwargs[key] = tuple(int(v) for v in value.split(","))
        elif key in ("architecture",):
            kwargs[key] = value
        elif key in ("learning_rate",):
            kwargs[key] = float(value)
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def load_params(manifest_path, payload_path) -> tuple[ModelConfig, ModelParams]:
    config_lines, entries = [], []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("config "):
                config_lines.append(line.removeprefix("config "))
            elif line.startswith("param "):
                parts = line.split()
                entries.append((parts[1], tuple(int(d) for d in parts[2:])))
    config = _parse_config(config_lines)
    params = ModelParams()
    with open(payload_path, "rb") as fh:
        blob = fh.read()
    offset = 0
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).astype(np.float64)
        arr = arr.reshape(shape)
        offset += 4 * n
        if name.endswith(".running_mean") or name.endswith(".running_var"):
            params.running[name] = arr.copy()
        else:
            params.tensors[name] = Tensor(arr, requires_grad=True)
    if offset != len(blob):
        raise ValueError(
            f"payload size mismatch: manifest implies {offset} bytes, file has {len(blob)}"
        )
    return config, params
