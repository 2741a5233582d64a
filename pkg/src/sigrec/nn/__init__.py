from .core import (
    AdamState,
    DenseParams,
    GruLayerParams,
    adam_update,
    cross_entropy,
    dense_softmax_forward,
    dropout_mask,
    finite_difference_gradient,
    gru_cell_backward,
    gru_cell_forward,
    gru_layer_backward,
    gru_layer_forward,
    gru_sequence_forward,
    max_relative_error,
    softmax,
)

__all__ = [
    "AdamState",
    "DenseParams",
    "GruLayerParams",
    "adam_update",
    "cross_entropy",
    "dense_softmax_forward",
    "dropout_mask",
    "finite_difference_gradient",
    "gru_cell_backward",
    "gru_cell_forward",
    "gru_layer_backward",
    "gru_layer_forward",
    "gru_sequence_forward",
    "max_relative_error",
    "softmax",
]
