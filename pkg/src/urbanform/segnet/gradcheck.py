"""Central-difference validation of every backward pass.

For each layer type a small seeded probe network is built; a random subset
of parameters (at most 200 per layer type, all of them when fewer exist) is
perturbed by h = 1e-5 and the two-sided difference quotient is compared
against the analytic gradient.  The error is reported as

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)

so tiny gradients are judged on an absolute scale (1e-8 at the default
tolerance) that still sits five orders of magnitude below any real backward
bug, while ordinary gradients are judged relatively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor,
    avg_pool2x2,
    batch_norm,
    bilinear_upsample,
    conv2d,
    depthwise_conv2d,
    masked_cross_entropy,
    max_pool2x2,
)
from .models import (
    DEEPLAB,
    FCN,
    ModelConfig,
    ModelParams,
    ParamBuilder,
    aspp_forward,
    init_params,
    model_forward,
)

H_STEP = 1e-5
REL_FLOOR = 1e-3
MAX_SAMPLES = 200


@dataclass
class LayerCheck:
    layer_type: str
    n_checked: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list[LayerCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def format(self) -> str:
        lines = [f"gradient check, tolerance {self.tolerance:g}, h {H_STEP:g}"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(
                f"  {status}  {c.layer_type:<28} params {c.n_checked:>4}  "
                f"max rel err {c.max_rel_error:.3e}"
            )
        return "\n".join(lines) + "\n"


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def _check_tensors(loss_fn, tensors: list[Tensor], rng, max_samples=MAX_SAMPLES) -> tuple[int, float]:
    """Compare analytic and central-difference gradients on sampled entries."""
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    flat_sizes = [t.data.size for t in tensors]
    total = sum(flat_sizes)
    n_samples = min(max_samples, total)
    picks = rng.choice(total, size=n_samples, replace=False)
    worst = 0.0
    for pick in np.sort(picks):
        ti = 0
        while pick >= flat_sizes[ti]:
            pick -= flat_sizes[ti]
            ti += 1
        flat = tensors[ti].data.reshape(-1)
        saved = flat[pick]
        flat[pick] = saved + H_STEP
        up = loss_fn().item()
        flat[pick] = saved - H_STEP
        down = loss_fn().item()
        flat[pick] = saved
        numeric = (up - down) / (2.0 * H_STEP)
        analytic = grads[ti].reshape(-1)[pick]
        worst = max(worst, _rel_error(analytic, numeric))
    return n_samples, worst


def _projection_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar loss sum(out * fixed_random); linear, so exact for linear ops."""
    proj = Tensor(np.array((out.data * weights).sum()))
    proj._parents = (out,)

    def backward(g):
        out.accumulate(weights * g)

    proj._backward = backward
    return proj


def _probe(rng, shape, scale=1.0, offset=0.0):
    return Tensor(offset + scale * rng.standard_normal(shape), requires_grad=True)


def _suite(config_arch: str, seed: int = 0):
    """(name, loss_fn, tensors) probes covering every layer type."""
    cases = []
    rng = np.random.default_rng(seed)

    def linear_case(name, build):
        x, params, fwd = build()
        shape = fwd(x).data.shape
        # unit-scale loss keeps central-difference roundoff ~1e-11 absolute
        r = rng.standard_normal(shape) / np.prod(shape)
        cases.append((name, lambda: _projection_loss(fwd(x), r), [x] + params))

    def conv_case(name, dilation, stride=1):
        def build():
            x = _probe(rng, (2, 3, 10, 10))
            w = _probe(rng, (4, 3, 3, 3), scale=0.5)
            b = _probe(rng, (4,), scale=0.1)
            return x, [w, b], lambda t: conv2d(t, w, b, stride=stride, dilation=dilation)
        linear_case(name, build)

    conv_case("conv 3x3 rate 1", dilation=1)
    conv_case("atrous conv rate 2", dilation=2)
    conv_case("atrous conv rate 4", dilation=4)
    conv_case("conv 3x3 stride 2", dilation=1, stride=2)

    def sep_build():
        x = _probe(rng, (2, 4, 10, 10))
        dw = _probe(rng, (4, 3, 3), scale=0.5)
        pw = _probe(rng, (6, 4, 1, 1), scale=0.5)
        return x, [dw, pw], lambda t: conv2d(depthwise_conv2d(t, dw), pw)
    linear_case("separable conv", sep_build)

    def pool_build(op):
        def build():
            x = _probe(rng, (2, 5, 8, 8))
            return x, [], lambda t: op(t)
        return build
    linear_case("max pool 2x2", pool_build(max_pool2x2))
    linear_case("avg pool 2x2", pool_build(avg_pool2x2))

    def up_build():
        x = _probe(rng, (2, 3, 5, 7))
        return x, [], lambda t: bilinear_upsample(t, 12, 13)
    linear_case("bilinear upsample", up_build)

    def bn_case():
        x = _probe(rng, (3, 6, 7, 7), offset=0.5)
        gamma = _probe(rng, (6,), scale=0.2, offset=1.0)
        beta = _probe(rng, (6,), scale=0.2)
        rm, rv = np.zeros(6), np.ones(6)
        r = rng.standard_normal((3, 6, 7, 7)) / (3 * 6 * 7 * 7)
        fn = lambda: _projection_loss(
            batch_norm(x, gamma, beta, rm, rv, training=True), r
        )
        cases.append(("batch norm (training)", fn, [x, gamma, beta]))
    bn_case()

    def aspp_case():
        params = ModelParams()
        build_rng = np.random.default_rng(seed + 1)
        x = _probe(rng, (1, 8, 8, 8), offset=0.2)
        builder = ParamBuilder(params, build_rng)
        out = aspp_forward(builder, x, 8, (1, 2, 4), 6, training=True)
        r = rng.standard_normal(out.data.shape) / out.data.size
        reuse = ParamBuilder(params, None)
        fn = lambda: _projection_loss(
            aspp_forward(reuse, x, 8, (1, 2, 4), 6, training=True), r
        )
        cases.append(("ASPP block", fn, [x] + list(params.tensors.values())))
    aspp_case()

    def full_case(arch, name):
        config = ModelConfig(
            architecture=arch, in_bands=6, n_classes=3, patch_size=16, seed=seed + 2,
            entry_channels=(8, 12, 16), middle_channels=16, middle_blocks=2,
            exit_channels=24, aspp_channels=8, low_level_channels=8,
            decoder_channels=12, fcn_widths=(8, 8, 12, 12), fcn_head_width=16,
        )
        params = init_params(config)
        lrng = np.random.default_rng(seed + 3)
        x = Tensor(lrng.standard_normal((1, 6, 16, 16)) * 0.5 + 0.5)
        labels = lrng.integers(0, 3, size=(1, 16, 16))
        mask = lrng.random((1, 16, 16)) < 0.4
        fn = lambda: masked_cross_entropy(
            model_forward(config, params, x, training=True), labels, mask
        )
        cases.append((name, fn, list(params.tensors.values())))
    if config_arch in (FCN, "both"):
        full_case(FCN, "full FCN loss")
    if config_arch in (DEEPLAB, "both"):
        full_case(DEEPLAB, "full DeepLab loss")
    return cases


def run_gradcheck(architecture: str = "both", tolerance: float = 1e-5,
                  seed: int = 0) -> GradCheckReport:
    """Check every layer type plus the requested full-model losses."""
    rng = np.random.default_rng(seed + 1000)
    checks = []
    for name, loss_fn, tensors in _suite(architecture, seed):
        n, worst = _check_tensors(loss_fn, tensors, rng)
        checks.append(LayerCheck(name, n, worst, worst < tolerance))
    return GradCheckReport(tolerance, checks)


def finite_difference_check(
    config: ModelConfig,
    params: ModelParams,
    probe: Tensor,
    tolerance: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Check the full-model loss gradient for the given parameters and probe."""
    rng = np.random.default_rng(seed)
    n, h, w = probe.data.shape[0], probe.data.shape[2], probe.data.shape[3]
    labels = rng.integers(0, config.n_classes, size=(n, h, w))
    mask = rng.random((n, h, w)) < 0.5
    fn = lambda: masked_cross_entropy(
        model_forward(config, params, probe, training=True), labels, mask
    )
    n_checked, worst = _check_tensors(fn, list(params.tensors.values()), rng)
    check = LayerCheck(f"full {config.architecture} loss", n_checked, worst,
                       worst < tolerance)
    return GradCheckReport(tolerance, [check])
