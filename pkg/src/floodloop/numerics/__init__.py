from .adam import AdamState, adam_step
from .gradcheck import grad_check
from .tape import (
    LEAKY_SLOPE,
    Tensor,
    add,
    backward,
    broadcast_to,
    concat,
    const,
    elu,
    getitem,
    glu,
    leaky_relu,
    masked_mse,
    matmul,
    mean,
    mse,
    mul,
    param,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    sum_all,
    tanh,
    transpose,
)
