"""Per-operator gradient checks for the reverse-mode core.

Every vjp is compared against central finite differences through a
scalar probe loss; complex intermediates are exercised explicitly since
the cotangent convention (dL/dRe + i dL/dIm) is easy to get wrong.
"""

import numpy as np
import pytest

from ceoptics import autodiff as ad


def numeric_grad(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        g[idx] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


def check(fn, x, rtol=1e-6):
    var = ad.Var(x)
    loss = fn(var)
    (g,) = ad.grad(loss, [var])
    g_num = numeric_grad(lambda v: float(ad.value_of(fn(ad.Var(v)))), x)
    scale = max(np.abs(g_num).max(), 1e-12)
    assert np.allclose(g, g_num, atol=rtol * scale), (g, g_num)


RNG = np.random.default_rng(7)


def test_elementwise_chain():
    x = RNG.normal(size=(4, 3)) + 2.5
    check(lambda v: ad.vsum(ad.vlog(v) * ad.vsqrt(v) + ad.vsin(v) / ad.vexp(v)), x)


def test_sub_div_pow():
    x = RNG.normal(size=7) + 3.0
    check(lambda v: ad.vsum((v - 1.0) / (v + 2.0) + v**3), x)


def test_sigmoid_softplus():
    x = RNG.normal(size=9) * 3
    check(lambda v: ad.vsum(ad.sigmoid(v) * ad.softplus(v)), x)


def test_broadcast_add_mul():
    x = RNG.normal(size=(5, 3))
    b = ad.Var(RNG.normal(size=3))
    loss = ad.vsum(ad.mul(ad.add(x, b), ad.add(x, b)))
    (g,) = ad.grad(loss, [b])
    g_num = numeric_grad(
        lambda v: float(np.sum((x + v) ** 2)), ad.value_of(b).copy()
    )
    assert np.allclose(g, g_num, atol=1e-6)


def test_matmul_all_ranks():
    a = RNG.normal(size=(4, 3))
    b = RNG.normal(size=(3, 2))
    v = RNG.normal(size=3)
    check(lambda x: ad.vsum(ad.matmul(x, b) ** 2), a)
    check(lambda x: ad.vsum(ad.matmul(a, x) ** 2), b)
    check(lambda x: ad.vsum(ad.matmul(a, x) ** 2), v.copy())
    check(lambda x: ad.vsum(ad.matmul(x, v) ** 2), a)


def test_sum_axis():
    x = RNG.normal(size=(6, 2))
    check(lambda v: ad.vsum(ad.vsum(v, axis=1) ** 2), x)


def test_phase_exp_abs2():
    phi = RNG.normal(size=(8, 8))
    const = RNG.normal(size=(8, 8)) + 1j * RNG.normal(size=(8, 8))
    # interference with a fixed field so the modulus depends on phase
    check(lambda v: ad.vsum(ad.abs2(ad.add(const, ad.phase_exp(v)))), phi.copy())


def test_real_mul_conj_cross():
    phi = RNG.normal(size=(6, 6))
    coeff = np.linspace(0.0, 1.0, 36).reshape(6, 6)

    def fn(v):
        e = ad.phase_exp(v)
        f = ad.crop_center(ad.fft2_centered(e), 4)
        g = ad.crop_center(ad.fft2_centered(ad.mul(e, 1j * coeff)), 4)
        return ad.vsum(ad.real_mul_conj(f, g))

    check(fn, phi.copy(), rtol=1e-5)


def test_fft_adjoint_identity():
    # <F(x), y> == <x, F^H(y)> for the centered transform
    x = RNG.normal(size=(8, 8)) + 1j * RNG.normal(size=(8, 8))
    y = RNG.normal(size=(8, 8)) + 1j * RNG.normal(size=(8, 8))
    fx = ad.fft2_centered(x)
    adj_y = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y))) * y.size
    lhs = np.vdot(y, fx)
    rhs = np.vdot(adj_y, x)
    assert np.allclose(lhs, rhs)


def test_fft_through_loss():
    # crop the spectrum so the squared modulus is not a Parseval constant
    phi = RNG.normal(size=(8, 8))
    check(lambda v: ad.vsum(ad.abs2(ad.crop_center(ad.fft2_centered(ad.phase_exp(v)), 4))),
          phi.copy(), rtol=1e-5)


def test_embed_crop_duality():
    x = RNG.normal(size=(4, 4))
    check(lambda v: ad.vsum(ad.embed_center(v, 8) ** 2), x)
    y = RNG.normal(size=(8, 8))
    check(lambda v: ad.vsum(ad.crop_center(v, 4) ** 2), y)


def test_scatter_support():
    support = RNG.uniform(size=(5, 5)) > 0.4
    vec = RNG.normal(size=int(support.sum()))
    check(lambda v: ad.vsum(ad.scatter_support(v, support) ** 3), vec)


def test_real_filter_self_adjoint_and_grad():
    n = 8
    transfer = np.sinc(np.fft.fftfreq(n))[:, None] * np.sinc(np.fft.rfftfreq(n))[None, :]
    x = RNG.normal(size=(n, n))
    y = RNG.normal(size=(n, n))
    ax = ad.real_filter(x, transfer)
    ay = ad.real_filter(y, transfer)
    assert np.allclose(np.sum(ax * y), np.sum(x * ay))  # self-adjoint
    check(lambda v: ad.vsum(ad.real_filter(v, transfer) ** 2), x.copy())


def test_stack_sym_and_inverse_tail():
    vals = RNG.normal(size=21)

    def loss_of(vec):
        m = np.zeros((6, 6))
        k = 0
        for i in range(6):
            for j in range(i, 6):
                m[i, j] = m[j, i] = vec[k]
                k += 1
        m = m + 40.0 * np.eye(6)
        ridge = 1e-9 * np.trace(m) / 6
        inv = np.linalg.inv(m + ridge * np.eye(6))
        return np.sum(np.sqrt(np.diag(inv)))

    var = ad.Var(vals)
    entries = [ad.vsum(ad.mul(var, np.eye(21)[i])) for i in range(21)]
    m = ad.stack_sym(entries, 6)
    diag = ad.stack_sym([40.0 if i == j else 0.0
                         for i in range(6) for j in range(i, 6)], 6)
    out = ad.sqrt_diag_inv_sum(ad.add(m, diag), 1e-9)
    assert np.isclose(float(out.value), loss_of(vals))
    (g,) = ad.grad(out, [var])
    g_num = numeric_grad(loss_of, vals, eps=1e-6)
    assert np.allclose(g, g_num, atol=1e-8 * max(1, np.abs(g_num).max()))


def test_grad_requires_real_scalar():
    v = ad.Var(np.ones(3))
    with pytest.raises(ValueError):
        ad.grad(ad.mul(v, 2.0), [v])


def test_unused_param_gets_zeros():
    a, b = ad.Var(np.ones(2)), ad.Var(np.ones(3))
    loss = ad.vsum(ad.mul(a, a))
    ga, gb = ad.grad(loss, [a, b])
    assert np.allclose(ga, 2.0)
    assert np.allclose(gb, 0.0)
