"""Reverse-mode differentiation over a small, closed operator set.

This is deliberately not a general tensor framework: the design loss
only needs elementwise arithmetic, a centered padded FFT, reductions,
and a small symmetric matrix inverse, so that is all there is. Every
helper below dispatches on its argument type - plain numpy arrays fall
through to numpy (used by the fast evaluation path), while ``Var``
inputs record the operation for the backward pass. Writing the physics
once and running it in both modes keeps the two paths from drifting.

Complex arrays use the real-pair cotangent convention: the gradient
stored for a complex variable z is dL/d(Re z) + i dL/d(Im z). Under
that convention the adjoint of the unnormalized FFT is the inverse FFT
scaled by the element count, and the adjoint of a holomorphic
elementwise factor is multiplication by its conjugate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Var",
    "value_of",
    "grad",
    "vsum",
    "vsqrt",
    "vexp",
    "vlog",
    "vsin",
    "vcos",
    "sigmoid",
    "softplus",
    "matmul",
    "phase_exp",
    "real_mul_conj",
    "abs2",
    "scatter_support",
    "embed_center",
    "crop_center",
    "fft2_centered",
    "real_filter",
    "stack_sym",
    "sqrt_diag_inv_sum",
]


class Var:
    """A node in the computation graph wrapping a numpy array."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_real(self):
        return not np.iscomplexobj(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    # arithmetic sugar; the heavy lifting is in the module-level ops
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the parent's shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _accumulate(parent, contribution):
    if not isinstance(parent, Var):
        return
    g = _unbroadcast(contribution, parent.value.shape)
    if parent.is_real and np.iscomplexobj(g):
        g = g.real
    if parent.grad is None:
        parent.grad = np.array(g, dtype=g.dtype)
    else:
        parent.grad = parent.grad + g


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if not isinstance(node, Var) or id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for p in node.parents:
                if isinstance(p, Var) and id(p) not in seen:
                    stack.append((p, False))
    return order


def grad(loss: Var, params):
    """Gradients of a real scalar loss with respect to params.

    Returns numpy arrays in the order of params; parameters the loss
    does not depend on get zeros.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var")
    if loss.value.ndim != 0 or not loss.is_real:
        raise ValueError("loss must be a real scalar")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    for p in params:
        p.grad = None
    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise FloatingPointError(
                f"non-finite gradient flowing through {node!r}"
            )
        node.vjp(node.grad)
    out = []
    for p in params:
        if p.grad is None:
            out.append(np.zeros_like(p.value))
        else:
            out.append(np.asarray(p.grad))
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    if not _is_var(a, b):
        return np.add(a, b)
    va, vb = value_of(a), value_of(b)
    out = Var(va + vb, parents=(a, b))

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, g)

    out.vjp = vjp
    return out


def sub(a, b):
    if not _is_var(a, b):
        return np.subtract(a, b)
    va, vb = value_of(a), value_of(b)
    out = Var(va - vb, parents=(a, b))

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    out.vjp = vjp
    return out


def mul(a, b):
    if not _is_var(a, b):
        return np.multiply(a, b)
    va, vb = value_of(a), value_of(b)
    out = Var(va * vb, parents=(a, b))

    def vjp(g):
        _accumulate(a, np.conj(vb) * g)
        _accumulate(b, np.conj(va) * g)

    out.vjp = vjp
    return out


def div(a, b):
    if not _is_var(a, b):
        return np.divide(a, b)
    va, vb = value_of(a), value_of(b)
    out = Var(va / vb, parents=(a, b))

    def vjp(g):
        _accumulate(a, g / np.conj(vb))
        _accumulate(b, -g * np.conj(va) / np.conj(vb) ** 2)

    out.vjp = vjp
    return out


def power(a, exponent):
    if not _is_var(a):
        return np.power(a, exponent)
    va = value_of(a)
    out = Var(va**exponent, parents=(a,))

    def vjp(g):
        _accumulate(a, g * exponent * np.conj(va) ** (exponent - 1))

    out.vjp = vjp
    return out


def _elementwise(np_fn, deriv_fn):
    def op(a):
        if not _is_var(a):
            return np_fn(a)
        va = value_of(a)
        out = Var(np_fn(va), parents=(a,))

        def vjp(g, _va=va, _out=out):
            _accumulate(a, g * deriv_fn(_va, _out.value))

        out.vjp = vjp
        return out

    return op


vexp = _elementwise(np.exp, lambda x, y: y)
vlog = _elementwise(np.log, lambda x, y: 1.0 / x)
vsin = _elementwise(np.sin, lambda x, y: np.cos(x))
vcos = _elementwise(np.cos, lambda x, y: -np.sin(x))
vsqrt = _elementwise(np.sqrt, lambda x, y: 0.5 / y)
sigmoid = _elementwise(expit, lambda x, y: y * (1.0 - y))
softplus = _elementwise(lambda x: np.logaddexp(0.0, x), lambda x, y: expit(x))


def vsum(a, axis=None):
    if not _is_var(a):
        return np.sum(a, axis=axis)
    va = value_of(a)
    out = Var(np.sum(va, axis=axis), parents=(a,))

    def vjp(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, va.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), va.shape))

    out.vjp = vjp
    return out


def matmul(a, b):
    if not _is_var(a, b):
        return np.matmul(a, b)
    va, vb = value_of(a), value_of(b)
    out = Var(va @ vb, parents=(a, b))
    # promote vectors to matrices so one vjp covers all rank combinations
    a2 = va[None, :] if va.ndim == 1 else va
    b2 = vb[:, None] if vb.ndim == 1 else vb

    def vjp(g):
        g2 = np.asarray(g)
        if va.ndim == 1:
            g2 = g2[None, :] if vb.ndim == 2 else np.asarray(g).reshape(1, 1)
        elif vb.ndim == 1:
            g2 = g2[:, None]
        _accumulate(a, (g2 @ b2.T).reshape(va.shape))
        _accumulate(b, (a2.T @ g2).reshape(vb.shape))

    out.vjp = vjp
    return out


# ---------------------------------------------------------------------------
# complex field ops


def phase_exp(phi):
    """exp(1j * phi) for a real phase image."""
    if not _is_var(phi):
        return np.exp(1j * phi)
    vphi = value_of(phi)
    w = np.exp(1j * vphi)
    out = Var(w, parents=(phi,))

    def vjp(g):
        # d/dphi of (cos, sin): gradient is Im(conj(w) * g)
        _accumulate(phi, np.imag(np.conj(w) * g))

    out.vjp = vjp
    return out


def real_mul_conj(a, b):
    """Re(conj(a) * b); with a is b this is the squared modulus."""
    if not _is_var(a, b):
        return np.real(np.conj(a) * b)
    va, vb = value_of(a), value_of(b)
    out = Var(np.real(np.conj(va) * vb), parents=(a, b))

    def vjp(g):
        _accumulate(a, g * vb)
        _accumulate(b, g * va)

    out.vjp = vjp
    return out


def abs2(a):
    return real_mul_conj(a, a)


def scatter_support(vec, support):
    """Embed a vector of per-support-sample values into a zero grid."""
    if not _is_var(vec):
        out = np.zeros(support.shape, dtype=np.asarray(vec).dtype)
        out[support] = vec
        return out
    vv = value_of(vec)
    full = np.zeros(support.shape, dtype=vv.dtype)
    full[support] = vv
    out = Var(full, parents=(vec,))

    def vjp(g):
        _accumulate(vec, np.asarray(g)[support])

    out.vjp = vjp
    return out


def _embed(arr, n_out):
    n = arr.shape[0]
    lo = (n_out - n) // 2
    out = np.zeros((n_out, n_out), dtype=arr.dtype)
    out[lo : lo + n, lo : lo + n] = arr
    return out


def _crop(arr, n):
    lo = (arr.shape[0] - n) // 2
    return arr[lo : lo + n, lo : lo + n]


def embed_center(a, n_out):
    if not _is_var(a):
        return _embed(np.asarray(a), n_out)
    va = value_of(a)
    out = Var(_embed(va, n_out), parents=(a,))

    def vjp(g):
        _accumulate(a, _crop(np.asarray(g), va.shape[0]))

    out.vjp = vjp
    return out


def crop_center(a, n):
    if not _is_var(a):
        return _crop(np.asarray(a), n)
    va = value_of(a)
    out = Var(_crop(va, n), parents=(a,))

    def vjp(g):
        _accumulate(a, _embed(np.asarray(g), va.shape[0]))

    out.vjp = vjp
    return out


def _fft2_centered(x):
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x)))


def fft2_centered(a):
    """2-D FFT with centered input and output conventions.

    The adjoint of the unnormalized FFT is the inverse FFT scaled by
    the number of elements, wrapped in the mirrored shift pair.
    """
    if not _is_var(a):
        return _fft2_centered(np.asarray(a))
    va = value_of(a)
    out = Var(_fft2_centered(va), parents=(a,))

    def vjp(g):
        g = np.asarray(g)
        _accumulate(a, np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(g))) * g.size)

    out.vjp = vjp
    return out


def _apply_real_filter(x, transfer_half):
    n = x.shape[-1]
    return np.fft.irfft2(np.fft.rfft2(x) * transfer_half, s=(n, n))


def real_filter(a, transfer_half):
    """Cyclic convolution of a real image with a symmetric real kernel.

    transfer_half is the kernel's rfft2 spectrum (real and even), so
    the operator is self-adjoint and its vjp is itself.
    """
    if not _is_var(a):
        return _apply_real_filter(np.asarray(a), transfer_half)
    va = value_of(a)
    out = Var(_apply_real_filter(va, transfer_half), parents=(a,))

    def vjp(g):
        _accumulate(a, _apply_real_filter(np.asarray(g), transfer_half))

    out.vjp = vjp
    return out


# ---------------------------------------------------------------------------
# small symmetric matrix tail of the loss


def stack_sym(upper, dim):
    """Build a symmetric (dim, dim) matrix from upper-triangle scalars.

    upper lists the entries (i, j) with i <= j in row-major order.
    """
    idx = [(i, j) for i in range(dim) for j in range(i, dim)]
    if len(upper) != len(idx):
        raise ValueError(f"need {len(idx)} entries for dim {dim}")
    if not _is_var(*upper):
        m = np.zeros((dim, dim))
        for (i, j), s in zip(idx, upper):
            m[i, j] = m[j, i] = np.asarray(s)
        return m
    m = np.zeros((dim, dim))
    for (i, j), s in zip(idx, upper):
        m[i, j] = m[j, i] = value_of(s)
    out = Var(m, parents=tuple(upper))

    def vjp(g):
        g = np.asarray(g)
        for (i, j), s in zip(idx, upper):
            _accumulate(s, g[i, j] if i == j else g[i, j] + g[j, i])

    out.vjp = vjp
    return out


def _ridge_inv(m, ridge_rel):
    dim = m.shape[0]
    eps = ridge_rel * np.trace(m) / dim
    return np.linalg.inv(m + eps * np.eye(dim)), eps


def sqrt_diag_inv_sum(m, ridge_rel=1e-9):
    """sum_i sqrt([ (M + ridge I)^-1 ]_ii) for a symmetric matrix M.

    The ridge is relative Tikhonov: ridge_rel * tr(M) / dim. The vjp
    uses the matrix-inverse adjoint -B^T G B^T plus the trace term the
    ridge contributes.
    """
    if not _is_var(m):
        inv, _ = _ridge_inv(np.asarray(m), ridge_rel)
        return np.sum(np.sqrt(np.diag(inv)))
    vm = value_of(m)
    inv, _ = _ridge_inv(vm, ridge_rel)
    d = np.diag(inv)
    if np.any(d <= 0):
        raise FloatingPointError("inverse information has non-positive diagonal")
    out = Var(np.sum(np.sqrt(d)), parents=(m,))

    def vjp(g):
        dim = vm.shape[0]
        g_inv = np.diag(float(g) * 0.5 / np.sqrt(d))
        g_a = -inv.T @ g_inv @ inv.T
        g_m = g_a + (ridge_rel / dim) * np.trace(g_a) * np.eye(dim)
        _accumulate(m, g_m)

    out.vjp = vjp
    return out
