from .core import (
    GradError,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    concat,
    conv_out_length,
    div,
    dump_graph,
    enable_grad,
    exp,
    fold1d,
    getitem,
    grad,
    is_grad_enabled,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    ones,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softplus,
    sqrt,
    stack,
    sub,
    sum_to,
    tanh,
    transpose,
    tsum,
    unfold1d,
    where,
    zeros,
)
from .nn import (
    ParamSet,
    avgpool1d,
    batchnorm1d,
    conv1d,
    conv1d_transposed,
    dropout,
    linear,
    transposed_out_length,
    uniform_init,
)
from .optim import AdamState, NonFiniteError, adam_step, check_finite
