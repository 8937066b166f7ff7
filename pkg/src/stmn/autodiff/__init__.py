from .gradcheck import check_parameters, grad_check
from .nn import (
    BatchNormState,
    LSTMParams,
    batch_norm,
    conv2d,
    global_average_pool,
    l2_normalize,
    log_softmax,
    lstm_cell,
    softmax,
)
from .tensor import (
    Tensor,
    add,
    concat,
    div,
    exp,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    lift,
    log,
    matmul,
    maximum,
    mul,
    no_grad,
    power,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    sqrt,
    stack,
    sub,
    tanh,
    topological_order,
    transpose,
)
