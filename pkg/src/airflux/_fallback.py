"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in bytes(data):
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def sgns_grad(emb, centers, contexts, labels, c_slot, o_slot, out) -> float:
    dtype = emb.dtype
    n = centers.shape[0]
    ec = emb[centers]
    eo = emb[contexts]
    z = np.einsum("ij,ij->i", ec, eo).astype(np.float64)
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    y = labels.astype(np.float64)
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    coef = ((sig - y) * (1.0 / n)).astype(dtype)
    np.add.at(out, c_slot, coef[:, None] * eo)
    np.add.at(out, o_slot, coef[:, None] * ec)
    return loss


def apply_rows(theta, rows, values, alpha) -> None:
    theta[rows] -= theta.dtype.type(alpha) * values
