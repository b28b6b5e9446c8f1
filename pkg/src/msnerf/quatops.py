"""Columnwise quaternion algebra on (4, M) stacks.

Every function routes through the autodiff dispatch layer, so the same
code path serves plain numpy arrays and tape variables. Quaternions are
(w, x, y, z); no hemisphere canonicalization happens here because sign
flips would not be differentiable (and the distance below is sign
invariant anyway).
"""

import numpy as np

from . import autodiff as ad


def _ncols(A):
    val = A.value if isinstance(A, ad.Var) else np.asarray(A)
    return val.shape[1]


def conj_vec(q):
    """Conjugate of a single (4,) quaternion."""
    return ad.concat([ad.getitem(q, 0), ad.neg(ad.getitem(q, slice(1, 4)))])


def conj_cols(Q):
    return ad.stack_rows([ad.getrow(Q, 0), ad.neg(ad.getrow(Q, 1)),
                          ad.neg(ad.getrow(Q, 2)), ad.neg(ad.getrow(Q, 3))])


def mul_cols(A, B):
    """Hamilton product column by column."""
    aw, ax, ay, az = (ad.getrow(A, k) for k in range(4))
    bw, bx, by, bz = (ad.getrow(B, k) for k in range(4))
    w = ad.sub(ad.sub(ad.mul(aw, bw), ad.mul(ax, bx)),
               ad.add(ad.mul(ay, by), ad.mul(az, bz)))
    x = ad.add(ad.add(ad.mul(aw, bx), ad.mul(ax, bw)),
               ad.sub(ad.mul(ay, bz), ad.mul(az, by)))
    y = ad.add(ad.sub(ad.mul(aw, by), ad.mul(ax, bz)),
               ad.add(ad.mul(ay, bw), ad.mul(az, bx)))
    z = ad.add(ad.add(ad.mul(aw, bz), ad.mul(ax, by)),
               ad.sub(ad.mul(az, bw), ad.mul(ay, bx)))
    return ad.stack_rows([w, x, y, z])


def norm_cols(A):
    return ad.sqrt(ad.colsum(ad.mul(A, A)))


def normalize_cols(Q):
    return ad.div(Q, ad.tile_rows(norm_cols(Q), 4))


def mul_cols_single(Q, p):
    """Right-multiply every column of Q by one quaternion p."""
    return mul_cols(Q, ad.tile_cols(p, _ncols(Q)))


def gauge_to_vertex0(Q):
    """Right-multiply all columns by the inverse of column 0."""
    return mul_cols_single(Q, conj_vec(ad.getcol(Q, 0)))


def d_q_cols(A, B):
    """Sign-invariant quaternion distance per column, in [0, sqrt(2)]."""
    return ad.minimum(norm_cols(ad.sub(A, B)), norm_cols(ad.add(A, B)))


def rotate_cols(q, X):
    """Rotate the (3, M) point columns X by the single quaternion q."""
    m = _ncols(X)
    zero = np.zeros((1, m))
    P = ad.vconcat([zero, X])
    out = mul_cols(mul_cols(ad.tile_cols(q, m), P),
                   ad.tile_cols(conj_vec(q), m))
    return ad.stack_rows([ad.getrow(out, 1), ad.getrow(out, 2),
                          ad.getrow(out, 3)])
