import numpy as np
import pytest

import msnerf.autodiff as ad
from msnerf.autodiff import Tape


def test_mul_example():
    t = Tape()
    a, b = t.var(2.0), t.var(3.0)
    out = a * b
    assert out.value == 6.0
    g = t.backward(out)
    assert g[a] == 3.0 and g[b] == 2.0


def test_sin_at_half_pi():
    t = Tape()
    x = t.var(np.pi / 2)
    y = ad.sin(x)
    assert abs(y.value - 1.0) < 1e-15
    assert abs(t.backward(y)[x]) < 1e-12


def test_square_gradient():
    t = Tape()
    x = t.var(3.0)
    y = x * x
    assert t.backward(y)[x] == 6.0


def test_disconnected_leaf_zero_gradient():
    t = Tape()
    x, z = t.var(1.5), t.var(np.ones(4))
    out = ad.exp(x)
    g = t.backward(out)
    assert np.array_equal(g[z], np.zeros(4))


def test_normalize_jacobian_analytic():
    rng = np.random.default_rng(0)
    for _ in range(10):
        v = rng.normal(size=5)
        u = rng.normal(size=5)
        t = Tape()
        vv = t.var(v)
        out = ad.dot(ad.normalize(vv), u)
        g = t.backward(out)[vv]
        n = np.linalg.norm(v)
        y = v / n
        expected = (np.eye(5) - np.outer(y, y)) / n @ u
        assert np.abs(g - expected).max() < 1e-10


def test_backward_requires_scalar():
    t = Tape()
    v = t.var(np.ones(3))
    with pytest.raises(ValueError):
        t.backward(v)


def test_non_finite_record_rejected():
    t = Tape()
    a, b = t.var(1.0), t.var(0.0)
    with pytest.raises(ValueError):
        ad.div(a, b)
    with pytest.raises(ValueError):
        ad.log(t.var(-1.0))


def test_shape_mismatch_rejected():
    t = Tape()
    with pytest.raises(ValueError):
        ad.add(t.var(np.ones(3)), t.var(np.ones(4)))


def test_cross_tape_rejected():
    t1, t2 = Tape(), Tape()
    with pytest.raises(ValueError):
        ad.add(t1.var(1.0), t2.var(2.0))


def test_minimum_tie_subgradient_zero():
    t = Tape()
    a, b = t.var(1.0), t.var(1.0)
    out = ad.minimum(a, b)
    g = t.backward(out)
    assert g[a] == 0.0 and g[b] == 0.0


def test_min_with_constant_kink():
    # below the constant the gradient passes; above (and at) it is 0
    for x0, expected in [(-0.5, 1.0), (0.0, 0.0), (0.5, 0.0)]:
        t = Tape()
        x = t.var(x0)
        out = ad.minimum(x, 0.0)
        assert t.backward(out)[x] == expected


def test_sqrt_subgradient_at_zero():
    t = Tape()
    x = t.var(np.array([0.0, 4.0]))
    out = ad.vsum(ad.sqrt(x))
    g = t.backward(out)[x]
    assert g[0] == 0.0 and g[1] == 0.25


def test_repeated_backward_bit_identical():
    rng = np.random.default_rng(1)
    t = Tape()
    x = t.var(rng.normal(size=6))
    W = t.var(rng.normal(size=(4, 6)))
    out = ad.vsum(ad.tanh(ad.matvec(W, x)))
    g1, g2 = t.backward(out), t.backward(out)
    assert np.array_equal(g1[x], g2[x])
    assert np.array_equal(g1[W], g2[W])


def test_linearity_bit_exact_power_of_two():
    # exact scaling by powers of two commutes with IEEE754 rounding, so
    # the two accumulation routes must agree bit for bit here
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=7)
    a, b = 0.5, 2.0

    t = Tape()
    x = t.var(x0)
    f = ad.vsum(ad.sin(x))
    g = ad.vsum(ad.cos(x))
    gf = t.backward(f)[x]
    gg = t.backward(g)[x]
    combined = t.backward(a * f + b * g)[x]
    assert np.array_equal(combined, a * gf + b * gg)


def test_linearity_general_coefficients():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=7)
    a, b = 0.37, 1.91
    t = Tape()
    x = t.var(x0)
    f = ad.vsum(ad.sin(x))
    g = ad.vsum(ad.exp(0.3 * x))
    gf, gg = t.backward(f)[x], t.backward(g)[x]
    combined = t.backward(a * f + b * g)[x]
    assert np.allclose(combined, a * gf + b * gg, rtol=1e-12, atol=1e-15)


def test_forward_only_numpy_dispatch():
    x = np.array([0.1, 0.2])
    assert np.allclose(ad.sin(x), np.sin(x))
    assert np.allclose(ad.matvec(np.eye(2), x), x)
    assert ad.vsum(x) == pytest.approx(0.3)
    assert np.allclose(ad.softplus(x), np.logaddexp(0.0, x))


# ---------------------------------------------------------------------------
# finite-difference matrix: every primitive used anywhere in training
# ---------------------------------------------------------------------------

def _fd_gradients(build, inputs, h=1e-6):
    """Central finite differences of build(*) w.r.t. every input entry."""
    def value_at(vals):
        t = Tape()
        out = build(t, [t.var(v) for v in vals])
        return float(out.value)

    grads = []
    for i, v in enumerate(inputs):
        flat = np.asarray(v, dtype=float).ravel()
        g = np.zeros_like(flat)
        for j in range(flat.size):
            bump = [np.array(x, dtype=float, copy=True) for x in inputs]
            bump[i].ravel()[j] += h
            f_plus = value_at(bump)
            bump[i].ravel()[j] -= 2 * h
            f_minus = value_at(bump)
            g[j] = (f_plus - f_minus) / (2 * h)
        grads.append(g.reshape(np.shape(v)))
    return grads


RNG = np.random.default_rng(42)
_V5 = RNG.normal(size=5)
_W5 = RNG.normal(size=5)
_M34 = RNG.normal(size=(3, 4))
_M43 = RNG.normal(size=(4, 3))
_C4 = RNG.normal(size=4)
_C3 = RNG.normal(size=3)
_IDX = np.array([0, 2, 2, 1])

FD_CASES = [
    ("add", [_V5, _W5], lambda t, v: ad.dot(ad.add(v[0], v[1]), _W5)),
    ("add_scalar_mix", [_V5, np.array(0.7)],
     lambda t, v: ad.dot(ad.add(v[0], v[1]), _W5)),
    ("sub", [_V5, _W5], lambda t, v: ad.dot(ad.sub(v[0], v[1]), _W5)),
    ("mul", [_V5, _W5], lambda t, v: ad.dot(ad.mul(v[0], v[1]), _W5)),
    ("mul_scalar_mix", [np.array(1.3), _V5],
     lambda t, v: ad.dot(ad.mul(v[0], v[1]), _W5)),
    ("div", [_V5, _W5 + 3.0], lambda t, v: ad.dot(ad.div(v[0], v[1]), _W5)),
    ("neg", [_V5], lambda t, v: ad.dot(ad.neg(v[0]), _W5)),
    ("sin", [_V5], lambda t, v: ad.dot(ad.sin(v[0]), _W5)),
    ("cos", [_V5], lambda t, v: ad.dot(ad.cos(v[0]), _W5)),
    ("exp", [_V5], lambda t, v: ad.dot(ad.exp(v[0]), _W5)),
    ("log", [np.abs(_V5) + 0.5], lambda t, v: ad.dot(ad.log(v[0]), _W5)),
    ("sqrt", [np.abs(_V5) + 0.5], lambda t, v: ad.dot(ad.sqrt(v[0]), _W5)),
    ("tanh", [_V5], lambda t, v: ad.dot(ad.tanh(v[0]), _W5)),
    ("sigmoid", [_V5], lambda t, v: ad.dot(ad.sigmoid(v[0]), _W5)),
    ("softplus", [_V5], lambda t, v: ad.dot(ad.softplus(v[0]), _W5)),
    ("minimum", [_V5, _W5], lambda t, v: ad.dot(ad.minimum(v[0], v[1]), _W5)),
    ("min_const", [_V5], lambda t, v: ad.dot(ad.minimum(v[0], 0.2), _W5)),
    ("vsum", [_V5], lambda t, v: ad.vsum(v[0])),
    ("cumsum", [_V5], lambda t, v: ad.dot(ad.cumsum(v[0]), _W5)),
    ("matvec", [_M34, _C4], lambda t, v: ad.dot(ad.matvec(v[0], v[1]), _C3)),
    ("matmul", [_M34, _M43],
     lambda t, v: ad.vsum(ad.mul(ad.matmul(v[0], v[1]), RNG_W33))),
    ("normalize", [_V5], lambda t, v: ad.dot(ad.normalize(v[0]), _W5)),
    ("concat", [_V5, _C3],
     lambda t, v: ad.dot(ad.concat([v[0], v[1]]), np.arange(8.0))),
    ("stack_rows", [_V5, _W5],
     lambda t, v: ad.vsum(ad.mul(ad.stack_rows([v[0], v[1]]), RNG_W25))),
    ("vconcat", [_M34, np.ones((2, 4))],
     lambda t, v: ad.vsum(ad.mul(ad.vconcat([v[0], v[1]]), RNG_W54))),
    ("getitem_int", [_V5], lambda t, v: ad.mul(ad.getitem(v[0], 2), 1.7)),
    ("getitem_slice", [_V5],
     lambda t, v: ad.dot(ad.getitem(v[0], slice(1, 4)), _C3)),
    ("getrow", [_M34], lambda t, v: ad.dot(ad.getrow(v[0], 1), _C4)),
    ("getcol", [_M34], lambda t, v: ad.dot(ad.getcol(v[0], 2), _C3)),
    ("gather_cols", [_M34],
     lambda t, v: ad.vsum(ad.mul(ad.gather_cols(v[0], _IDX), RNG_W34))),
    ("scatter_cols", [_M34],
     lambda t, v: ad.vsum(ad.mul(ad.scatter_cols(v[0], _IDX, 6), RNG_W36))),
    ("colsum", [_M34], lambda t, v: ad.dot(ad.colsum(v[0]), _C4)),
    ("tile_cols", [_C3],
     lambda t, v: ad.vsum(ad.mul(ad.tile_cols(v[0], 4), RNG_W34))),
    ("tile_rows", [_C4],
     lambda t, v: ad.vsum(ad.mul(ad.tile_rows(v[0], 3), RNG_W34))),
    ("addcol", [_M34, _C3],
     lambda t, v: ad.vsum(ad.mul(ad.addcol(v[0], v[1]), RNG_W34))),
    ("cumsum_rows_exclusive", [_M34],
     lambda t, v: ad.vsum(ad.mul(ad.cumsum_rows_exclusive(v[0]), RNG_W34))),
    ("reshape", [_M34],
     lambda t, v: ad.dot(ad.reshape(v[0], (12,)), RNG_W12)),
]

RNG_W33 = RNG.normal(size=(3, 3))
RNG_W12 = RNG.normal(size=12)
RNG_W25 = RNG.normal(size=(2, 5))
RNG_W54 = RNG.normal(size=(5, 4))
RNG_W34 = RNG.normal(size=(3, 4))
RNG_W36 = RNG.normal(size=(3, 6))


@pytest.mark.parametrize("name,inputs,build",
                         [(c[0], c[1], c[2]) for c in FD_CASES],
                         ids=[c[0] for c in FD_CASES])
def test_fd_matrix(name, inputs, build):
    t = Tape()
    vs = [t.var(v) for v in inputs]
    out = build(t, vs)
    grads = t.backward(out)
    fd = _fd_gradients(build, inputs)
    for v, g_fd in zip(vs, fd):
        g_ad = grads[v]
        assert np.allclose(g_ad, g_fd, rtol=1e-5, atol=1e-6), (
            f"{name}: ad={g_ad} fd={g_fd}")
