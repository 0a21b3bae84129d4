"""Dense float64 linear algebra, a reverse-mode tape and the NCMX matrix format."""

from .linalg import (
    affine,
    as_matrix,
    check_finite,
    matmul,
    mse_loss,
    softmax,
    softmax_cross_entropy,
)
from .io import read_matrix, write_matrix, pack_matrix, unpack_matrix
from .tape import Tape, Var
from .gradcheck import finite_difference_check, numeric_gradient

__all__ = [
    "affine",
    "as_matrix",
    "check_finite",
    "matmul",
    "mse_loss",
    "softmax",
    "softmax_cross_entropy",
    "read_matrix",
    "write_matrix",
    "pack_matrix",
    "unpack_matrix",
    "Tape",
    "Var",
    "finite_difference_check",
    "numeric_gradient",
]
