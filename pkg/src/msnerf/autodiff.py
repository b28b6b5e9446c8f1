"""Minimal reverse-mode automatic differentiation on a flat tape.

Values are float64 numpy arrays: scalars as shape (), vectors as (n,),
matrices as (m, n). There is no general broadcasting; elementwise ops
accept equal shapes or a scalar paired with an array (the one documented
mixed case). Every op here doubles as a plain numpy function when called
with arrays instead of Vars, so forward-only code paths and recorded
code paths share one implementation:

    import msnerf.autodiff as ad
    y = ad.sin(x)        # x: Var -> recorded; x: ndarray -> np.sin(x)

Recording a non-finite value raises immediately. backward() is a pure
function of the frozen tape: repeated calls are bit-identical, and
leaves the output does not depend on get exact zero gradients.

Subgradient conventions, chosen so a loss sitting exactly at a kink or
at zero residual gets a zero (stationary) gradient: minimum() puts 0 on
ties, sqrt() puts 0 at 0.
"""

import numpy as np


class Var:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.tape.values[self.idx].shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"


class Tape:
    """Append-only record of primitive ops, topologically ordered."""

    def __init__(self):
        self.values = []
        self.parents = []
        self.vjps = []   # None marks a leaf

    def __len__(self):
        return len(self.values)

    def var(self, value):
        """Record a leaf (parameter, input, or constant)."""
        return self._record(np.asarray(value, dtype=float), (), None)

    def _record(self, value, parents, vjp):
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise ValueError("recorded a non-finite value")
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        return Var(self, len(self.values) - 1)

    def lift(self, x):
        """Return x if it already lives here, else record it as a leaf."""
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("Var belongs to a different tape")
            return x
        return self.var(x)

    def backward(self, out):
        """Reverse accumulation from a scalar output; returns Gradients."""
        out = self.lift(out)
        if out.value.shape != ():
            raise ValueError("backward requires a scalar output")
        adjoint = [None] * (out.idx + 1)
        adjoint[out.idx] = np.array(1.0)
        for i in range(out.idx, -1, -1):
            g = adjoint[i]
            if g is None or self.vjps[i] is None:
                continue
            for p, pg in zip(self.parents[i], self.vjps[i](g)):
                adjoint[p] = pg if adjoint[p] is None else adjoint[p] + pg
        return Gradients(self, adjoint)


class Gradients:
    """Per-leaf gradients from one backward pass."""

    def __init__(self, tape, adjoint):
        self._tape = tape
        self._adjoint = adjoint

    def __getitem__(self, var):
        if var.idx < len(self._adjoint) and self._adjoint[var.idx] is not None:
            return self._adjoint[var.idx]
        return np.zeros_like(var.value)


def value_of(x):
    """Concrete numpy value of a Var or array-like (no recording)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _check_elementwise(a, b):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g, shape):
    # The only mixing allowed is scalar-with-array, so reduction is a
    # full sum back to the scalar.
    if shape == () and np.ndim(g) != 0:
        return np.asarray(g).sum()
    return g


def _binary(a, b, fwd, vjp_builder):
    t = _tape_of(a, b)
    if t is None:
        av, bv = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        _check_elementwise(av, bv)
        return fwd(av, bv)
    a, b = t.lift(a), t.lift(b)
    av, bv = a.value, b.value
    _check_elementwise(av, bv)
    with np.errstate(all="ignore"):
        value = fwd(av, bv)
    return t._record(value, (a.idx, b.idx), vjp_builder(av, bv))


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda x, y: lambda g: (_reduce_to(g, x.shape),
                                           _reduce_to(g, y.shape)))


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda x, y: lambda g: (_reduce_to(g, x.shape),
                                           _reduce_to(-g, y.shape)))


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda x, y: lambda g: (_reduce_to(g * y, x.shape),
                                           _reduce_to(g * x, y.shape)))


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda x, y: lambda g: (_reduce_to(g / y, x.shape),
                                           _reduce_to(-g * x / (y * y), y.shape)))


def minimum(a, b):
    """Elementwise min; subgradient 0 at ties (covers min-with-constant)."""
    return _binary(a, b, np.minimum,
                   lambda x, y: lambda g: (_reduce_to(g * (x < y), x.shape),
                                           _reduce_to(g * (y < x), y.shape)))


def _unary(x, fwd, vjp_builder):
    if not isinstance(x, Var):
        return fwd(np.asarray(x, dtype=float))
    v = x.value
    with np.errstate(all="ignore"):
        value = fwd(v)
    return x.tape._record(value, (x.idx,), vjp_builder(v))


def neg(x):
    return _unary(x, lambda v: -v, lambda v: lambda g: (-g,))


def sin(x):
    return _unary(x, np.sin, lambda v: lambda g: (g * np.cos(v),))


def cos(x):
    return _unary(x, np.cos, lambda v: lambda g: (-g * np.sin(v),))


def exp(x):
    if not isinstance(x, Var):
        return np.exp(np.asarray(x, dtype=float))
    y = np.exp(x.value)
    return x.tape._record(y, (x.idx,), lambda g: (g * y,))


def log(x):
    return _unary(x, np.log, lambda v: lambda g: (g / v,))


def sqrt(x):
    """Square root; subgradient 0 at exactly 0."""
    if not isinstance(x, Var):
        return np.sqrt(np.asarray(x, dtype=float))
    v = x.value
    y = np.sqrt(v)
    safe = np.where(v > 0.0, np.where(y > 0.0, y, 1.0), 1.0)
    dydx = np.where(v > 0.0, 0.5 / safe, 0.0)
    return x.tape._record(y, (x.idx,), lambda g: (g * dydx,))


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(np.asarray(x, dtype=float))
    y = np.tanh(x.value)
    return x.tape._record(y, (x.idx,), lambda g: (g * (1.0 - y * y),))


def _sigmoid_np(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    if not isinstance(x, Var):
        return _sigmoid_np(np.asarray(x, dtype=float))
    y = _sigmoid_np(np.atleast_1d(np.asarray(x.value)))
    y = y.reshape(x.value.shape)
    return x.tape._record(y, (x.idx,), lambda g: (g * y * (1.0 - y),))


def softplus(x):
    """log(1 + exp(x)), evaluated stably."""
    if not isinstance(x, Var):
        return np.logaddexp(0.0, np.asarray(x, dtype=float))
    v = x.value
    y = np.logaddexp(0.0, v)
    s = _sigmoid_np(np.atleast_1d(v)).reshape(v.shape)
    return x.tape._record(y, (x.idx,), lambda g: (g * s,))


def vsum(x):
    """Sum of all elements, as a scalar."""
    if not isinstance(x, Var):
        return np.asarray(x, dtype=float).sum()
    shape = x.value.shape
    return x.tape._record(x.value.sum(), (x.idx,),
                          lambda g: (np.broadcast_to(g, shape).copy(),))


def cumsum(x):
    """Running sum over a 1-d array."""
    if not isinstance(x, Var):
        return np.cumsum(np.asarray(x, dtype=float))
    assert x.value.ndim == 1
    return x.tape._record(np.cumsum(x.value), (x.idx,),
                          lambda g: (np.cumsum(g[::-1])[::-1],))


def _excl_cumsum_rows(v):
    out = np.zeros_like(v)
    out[:, 1:] = np.cumsum(v[:, :-1], axis=1)
    return out


def cumsum_rows_exclusive(x):
    """out[:, i] = sum of x[:, :i] per row; column 0 is zero."""
    if not isinstance(x, Var):
        return _excl_cumsum_rows(np.asarray(x, dtype=float))
    assert x.value.ndim == 2

    def vjp(g):
        back = np.zeros_like(g)
        back[:, :-1] = np.cumsum(g[:, :0:-1], axis=1)[:, ::-1]
        return (back,)

    return x.tape._record(_excl_cumsum_rows(x.value), (x.idx,), vjp)


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.asarray(x, dtype=float).reshape(shape)
    orig = x.value.shape
    return x.tape._record(x.value.reshape(shape), (x.idx,),
                          lambda g: (np.asarray(g).reshape(orig),))


def dot(a, b):
    """Inner product built from mul and vsum."""
    return vsum(mul(a, b))


def matvec(W, x):
    t = _tape_of(W, x)
    if t is None:
        return np.asarray(W, dtype=float) @ np.asarray(x, dtype=float)
    W, x = t.lift(W), t.lift(x)
    Wv, xv = W.value, x.value
    assert Wv.ndim == 2 and xv.ndim == 1 and Wv.shape[1] == xv.shape[0]
    return t._record(Wv @ xv, (W.idx, x.idx),
                     lambda g: (np.outer(g, xv), Wv.T @ g))


def matmul(A, B):
    t = _tape_of(A, B)
    if t is None:
        return np.asarray(A, dtype=float) @ np.asarray(B, dtype=float)
    A, B = t.lift(A), t.lift(B)
    Av, Bv = A.value, B.value
    assert Av.ndim == 2 and Bv.ndim == 2 and Av.shape[1] == Bv.shape[0]
    return t._record(Av @ Bv, (A.idx, B.idx),
                     lambda g: (g @ Bv.T, Av.T @ g))


def normalize(v):
    """v / ||v|| for a 1-d vector."""
    if not isinstance(v, Var):
        v = np.asarray(v, dtype=float)
        return v / np.linalg.norm(v)
    val = v.value
    n = np.linalg.norm(val)
    if n < 1e-300:
        raise ValueError("cannot normalize a zero vector")
    y = val / n

    def vjp(g):
        return ((g - y * np.dot(g, y)) / n,)

    return v.tape._record(y, (v.idx,), vjp)


def concat(parts):
    """Concatenate 1-d pieces."""
    t = _tape_of(*parts)
    if t is None:
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float))
                               for p in parts])
    parts = [t.lift(p) for p in parts]
    vals = [np.atleast_1d(p.value) for p in parts]
    sizes = [v.shape[0] for v in vals]
    offsets = np.cumsum([0] + sizes)
    shapes = [p.value.shape for p in parts]

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]].reshape(shapes[i])
                     for i in range(len(parts)))

    return t._record(np.concatenate(vals), tuple(p.idx for p in parts), vjp)


def stack_rows(rows):
    """Stack 1-d rows into a (k, n) matrix."""
    t = _tape_of(*rows)
    if t is None:
        return np.stack([np.asarray(r, dtype=float) for r in rows])
    rows = [t.lift(r) for r in rows]

    def vjp(g):
        return tuple(g[i] for i in range(len(rows)))

    return t._record(np.stack([r.value for r in rows]),
                     tuple(r.idx for r in rows), vjp)


def vconcat(parts):
    """Concatenate pieces along axis 0 (vectors or matrices, uniform ndim)."""
    t = _tape_of(*parts)
    if t is None:
        return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=0)
    parts = [t.lift(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return t._record(np.concatenate([p.value for p in parts], axis=0),
                     tuple(p.idx for p in parts), vjp)


def getitem(x, key):
    """Index or slice a 1-d vector."""
    if not isinstance(x, Var):
        return np.asarray(x, dtype=float)[key]
    val = x.value
    assert val.ndim == 1

    def vjp(g):
        out = np.zeros_like(val)
        out[key] = g
        return (out,)

    return x.tape._record(val[key], (x.idx,), vjp)


def getrow(M, i):
    if not isinstance(M, Var):
        return np.asarray(M, dtype=float)[i]
    val = M.value

    def vjp(g):
        out = np.zeros_like(val)
        out[i] = g
        return (out,)

    return M.tape._record(val[i], (M.idx,), vjp)


def getcol(M, j):
    if not isinstance(M, Var):
        return np.asarray(M, dtype=float)[:, j]
    val = M.value

    def vjp(g):
        out = np.zeros_like(val)
        out[:, j] = g
        return (out,)

    return M.tape._record(val[:, j], (M.idx,), vjp)


def gather_cols(M, idx):
    """Select columns by integer index array (duplicates allowed)."""
    idx = np.asarray(idx, dtype=int)
    if not isinstance(M, Var):
        return np.asarray(M, dtype=float)[:, idx]
    val = M.value

    def vjp(g):
        out = np.zeros_like(val)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return M.tape._record(val[:, idx], (M.idx,), vjp)


def scatter_cols(M, idx, n_out):
    """Sum-scatter the columns of M into an (rows, n_out) matrix by index."""
    idx = np.asarray(idx, dtype=int)
    if not isinstance(M, Var):
        Mv = np.asarray(M, dtype=float)
        out = np.zeros((Mv.shape[0], n_out))
        np.add.at(out, (slice(None), idx), Mv)
        return out
    val = M.value
    out = np.zeros((val.shape[0], n_out))
    np.add.at(out, (slice(None), idx), val)
    return M.tape._record(out, (M.idx,), lambda g: (g[:, idx],))


def colsum(M):
    """Sum over rows: (m, n) -> (n,)."""
    if not isinstance(M, Var):
        return np.asarray(M, dtype=float).sum(axis=0)
    shape = M.value.shape
    return M.tape._record(M.value.sum(axis=0), (M.idx,),
                          lambda g: (np.broadcast_to(g, shape).copy(),))


def tile_cols(v, n):
    """Repeat a (m,) vector as n columns: -> (m, n)."""
    if not isinstance(v, Var):
        return np.repeat(np.asarray(v, dtype=float)[:, None], n, axis=1)
    val = v.value
    return v.tape._record(np.repeat(val[:, None], n, axis=1), (v.idx,),
                          lambda g: (g.sum(axis=1),))


def tile_rows(v, m):
    """Repeat a (n,) vector as m rows: -> (m, n)."""
    if not isinstance(v, Var):
        return np.repeat(np.asarray(v, dtype=float)[None, :], m, axis=0)
    val = v.value
    return v.tape._record(np.repeat(val[None, :], m, axis=0), (v.idx,),
                          lambda g: (g.sum(axis=0),))


def addcol(M, v):
    """Add a (m,) vector to every column of a (m, n) matrix."""
    t = _tape_of(M, v)
    if t is None:
        return np.asarray(M, dtype=float) + np.asarray(v, dtype=float)[:, None]
    M, v = t.lift(M), t.lift(v)
    return t._record(M.value + v.value[:, None], (M.idx, v.idx),
                     lambda g: (g, g.sum(axis=1)))
