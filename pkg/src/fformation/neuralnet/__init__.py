"""From-scratch LSTM classifier: model, loss, BPTT, Adam and gradient checking."""

from .adam import AdamState, adam_step
from .backend import available, get_backend
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, gradient_suite, tiny_problem
from .model import (
    ModelParams,
    NonFiniteError,
    class_weights,
    count_parameters,
    evaluate_loss,
    forward,
    forward_batch,
    init_params,
    loss_and_grads,
    lstm_cell_forward,
    predict_logits,
    softmax,
    weighted_cross_entropy,
    zero_params,
)

__all__ = [
    "AdamState", "ModelParams", "NonFiniteError", "adam_step", "available", "class_weights",
    "count_parameters", "evaluate_loss", "finite_diff_check", "forward", "forward_batch",
    "get_backend", "gradient_suite", "init_params", "load_checkpoint", "loss_and_grads", "lstm_cell_forward",
    "predict_logits", "save_checkpoint", "softmax", "tiny_problem", "weighted_cross_entropy",
    "zero_params",
]
