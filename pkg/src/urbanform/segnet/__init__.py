from .autograd import (
    Adam,
    Tensor,
    add,
    avg_pool2x2,
    batch_norm,
    bilinear_upsample,
    concat_channels,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    masked_cross_entropy,
    max_pool2x2,
    no_grad,
    relu,
    softmax_channels,
)
from .gradcheck import GradCheckReport, finite_difference_check, run_gradcheck
from .models import (
    DEEPLAB,
    FCN,
    ModelConfig,
    ModelParams,
    ParamBuilder,
    aspp_forward,
    init_params,
    load_params,
    model_forward,
    save_params,
)
from .training import EpochLog, predict_map, save_training_log, train_model

__all__ = [
    "Adam", "Tensor", "add", "avg_pool2x2", "batch_norm", "bilinear_upsample",
    "concat_channels", "conv2d", "depthwise_conv2d", "global_avg_pool",
    "masked_cross_entropy", "max_pool2x2", "no_grad", "relu", "softmax_channels",
    "GradCheckReport", "finite_difference_check", "run_gradcheck",
    "DEEPLAB", "FCN", "ModelConfig", "ModelParams", "ParamBuilder", "aspp_forward",
    "init_params", "load_params", "model_forward", "save_params",
    "EpochLog", "predict_map", "save_training_log", "train_model",
]
