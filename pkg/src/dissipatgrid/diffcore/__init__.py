from .adam import AdamState, adam_step
from .linalg import SingularMatrixError, jacobi_eigh, mat_inverse, min_eig_sym
from .nn import MlpParams, gelu, init_mlp, mlp_forward, softplus
from .tape import (
    ContractError,
    NonFiniteError,
    Tape,
    Var,
    absolute,
    diag_embed,
    diagonal,
    max_select,
    reduce_mean,
    reduce_sum,
    square,
    transpose,
    tril_from_vector,
    value_of,
)

__all__ = [
    "AdamState",
    "ContractError",
    "MlpParams",
    "NonFiniteError",
    "SingularMatrixError",
    "Tape",
    "Var",
    "absolute",
    "adam_step",
    "diag_embed",
    "diagonal",
    "gelu",
    "init_mlp",
    "jacobi_eigh",
    "mat_inverse",
    "max_select",
    "min_eig_sym",
    "mlp_forward",
    "reduce_mean",
    "reduce_sum",
    "softplus",
    "square",
    "transpose",
    "tril_from_vector",
    "value_of",
]
