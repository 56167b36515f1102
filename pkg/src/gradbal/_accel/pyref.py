"""Pure-numpy reference implementation of the balancing kernels.

Semantics are the contract for ``gradbal._accel._native``: the compiled
module must be drop-in interchangeable with this one. All arrays are
C-contiguous float64; ``signs`` buffers are int8 and filled with +1/-1.

Sign convention (shared by every kernel here): +1 when the inner product
of the running accumulator with the incoming vector is <= 0, so the zero
accumulator ties break to +1 and the signed update never grows the
squared L2 norm by more than the vector's own.
"""

import numpy as np


def det_balance(acc, vecs, signs):
    """Sequential sign-and-accumulate; mutates ``acc``, fills ``signs``."""
    for i in range(vecs.shape[0]):
        v = vecs[i]
        if acc @ v <= 0.0:
            signs[i] = 1
            acc += v
        else:
            signs[i] = -1
            acc -= v


def prob_balance(acc, vecs, c, uniforms, signs):
    """Sequential probabilistic sign-and-accumulate.

    The +1 probability is clamp(0.5 * (1 - <acc, v>/c), 0, 1) and
    ``uniforms[i]`` is the variate deciding row i. Returns the number of
    rows whose |<acc, v>| exceeded ``c`` (probability was clamped).
    """
    overflow = 0
    for i in range(vecs.shape[0]):
        v = vecs[i]
        ip = acc @ v
        if ip > c or ip < -c:
            overflow += 1
        p = 0.5 * (1.0 - ip / c)
        if p < 0.0:
            p = 0.0
        elif p > 1.0:
            p = 1.0
        if uniforms[i] < p:
            signs[i] = 1
            acc += v
        else:
            signs[i] = -1
            acc -= v
    return overflow


def det_signs_frozen(acc, vecs, signs):
    """Signs against a frozen accumulator; ``acc`` is not modified."""
    signs[:] = np.where(vecs @ acc <= 0.0, 1, -1)


def prob_signs_frozen(acc, vecs, c, uniforms, signs):
    """Probabilistic signs against a frozen accumulator; returns overflow count."""
    ips = vecs @ acc
    p = np.clip(0.5 * (1.0 - ips / c), 0.0, 1.0)
    signs[:] = np.where(uniforms < p, 1, -1)
    return int(np.count_nonzero(np.abs(ips) > c))


def det_tree_descend(nodes, vecs, depth, leaves, last_signs):
    """Walk each row down a level-order accumulator tree.

    At each of the ``depth`` internal levels the node's sign is taken, the
    node accumulates the signed row, and the walk moves to the left child
    on +1, right on -1. ``leaves[i]`` gets the landing leaf in
    [0, 2**depth) and ``last_signs[i]`` the deepest sign.
    """
    first_leaf = (1 << depth) - 1
    for i in range(vecs.shape[0]):
        v = vecs[i]
        idx = 0
        s = 1
        for _ in range(depth):
            node = nodes[idx]
            if node @ v <= 0.0:
                s = 1
                node += v
                idx = 2 * idx + 1
            else:
                s = -1
                node -= v
                idx = 2 * idx + 2
        leaves[i] = idx - first_leaf
        last_signs[i] = s


def prob_tree_descend(nodes, vecs, depth, c, uniforms, leaves, last_signs):
    """Probabilistic tree walk; uniforms are consumed example-major.

    ``uniforms`` must hold ``vecs.shape[0] * depth`` variates: row i uses
    uniforms[i*depth : (i+1)*depth] from the root down. Returns overflow count.
    """
    overflow = 0
    first_leaf = (1 << depth) - 1
    k = 0
    for i in range(vecs.shape[0]):
        v = vecs[i]
        idx = 0
        s = 1
        for _ in range(depth):
            node = nodes[idx]
            ip = node @ v
            if ip > c or ip < -c:
                overflow += 1
            p = 0.5 * (1.0 - ip / c)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            if uniforms[k] < p:
                s = 1
                node += v
                idx = 2 * idx + 1
            else:
                s = -1
                node -= v
                idx = 2 * idx + 2
            k += 1
        leaves[i] = idx - first_leaf
        last_signs[i] = s
    return overflow


def max_prefix_inf(vecs):
    """Max over prefixes of the infinity norm of the running row sum."""
    if vecs.shape[0] == 0:
        return 0.0
    return float(np.abs(np.cumsum(vecs, axis=0)).max())
