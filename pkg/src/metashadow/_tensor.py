"""Per-qubit tensor kernels over basis-grouped probability arrays.

A grouped array has shape ``(nb**n, 2**n)``: rows are basis strings in
mixed-radix order (qubit 0 most significant), columns bit strings.
"""

from __future__ import annotations

import numpy as np

# upper bound on K**n dense entries (born tables, shadow value tables)
MAX_TABLE_ENTRIES = 2**22


def apply_local(arr: np.ndarray, mats: np.ndarray, n: int) -> np.ndarray:
    """Apply ``mats[i]`` (2x2) to the bit index of every qubit measured in basis ``i``.

    Equivalent to multiplying each group vector by the Kronecker product of
    the per-qubit blocks, without materializing it.
    """
    nb = mats.shape[0]
    x = np.asarray(arr).reshape((nb,) * n + (2,) * n)
    for q in range(n):
        x = np.moveaxis(x, (q, n + q), (-2, -1))
        x = np.einsum("...ib,icb->...ic", x, mats)
        x = np.moveaxis(x, (-2, -1), (q, n + q))
    return x.reshape(nb**n, 2**n)


def local_weights(weights: np.ndarray, n: int) -> np.ndarray:
    """Product weights ``prod_q weights[i_q, b_q]`` as a grouped array."""
    nb = weights.shape[0]
    out = np.ones((1, 1))
    for _ in range(n):
        # outer product over (basis, bit) for one more qubit
        out = np.einsum("ab,ic->aibc", out, weights).reshape(out.shape[0] * nb, out.shape[1] * 2)
    return out


def ports_to_groups(t: np.ndarray, n: int, nb: int) -> np.ndarray:
    """Reorder a ``(K,)*n`` port tensor (port = 2*basis + bit) into grouped form."""
    x = np.asarray(t).reshape((nb, 2) * n)
    order = [2 * q for q in range(n)] + [2 * q + 1 for q in range(n)]
    return x.transpose(order).reshape(nb**n, 2**n)


def contract_local(rho: np.ndarray, ops: np.ndarray, n: int) -> np.ndarray:
    """``Tr(rho * ops[k_1] (x) ... (x) ops[k_n])`` for every port string.

    ``rho`` is a ``2**n x 2**n`` matrix and ``ops`` has shape ``(K, 2, 2)``.
    Returns a real ``(K,)*n`` tensor.
    """
    # Tr(rho O) = sum rho[a, a'] O[a', a]; ot[k, a, a'] = ops[k, a', a]
    ot = np.transpose(ops, (0, 2, 1))
    x = np.asarray(rho).reshape((2,) * (2 * n))
    for q in range(n):
        rem = n - q
        x = np.tensordot(x, ot, axes=([0, rem], [1, 2]))
    return x.real


def bit_index(bits: np.ndarray) -> np.ndarray:
    """Row-wise bit arrays ``(m, n)`` to column indices."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[1]
    return bits @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))


def basis_index(basis: np.ndarray, nb: int) -> np.ndarray:
    basis = np.asarray(basis, dtype=np.int64)
    n = basis.shape[1]
    return basis @ (nb ** np.arange(n - 1, -1, -1, dtype=np.int64))


def index_to_digits(index: np.ndarray, base: int, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    out = np.empty(index.shape + (n,), dtype=np.int8)
    for q in range(n - 1, -1, -1):
        out[..., q] = index % base
        index = index // base
    return out
