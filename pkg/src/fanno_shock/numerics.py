"""Shared discretization helpers.

Finite differences on uniform grids, Fourier derivatives on the 2-torus,
local Lagrange interpolation and a Gauss-Legendre collocation integrator
for linear ODE systems.
"""
from __future__ import annotations

import numpy as np

# Fourth-order stencils: centred interior, one-sided near the ends.
_C1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_B1 = np.array(
    [
        [-25.0, 48.0, -36.0, 16.0, -3.0],
        [-3.0, -10.0, 18.0, -6.0, 1.0],
    ]
) / 12.0
_C2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_B2 = np.array(
    [
        [45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
        [10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
    ]
) / 12.0


def fd_derivative(f, h, axis=0, order=1):
    """Fourth-order accurate derivative of samples on a uniform grid.

    Parameters
    ----------
    f : ndarray
        Samples; the differentiated axis needs at least 6 points.
    h : float
        Grid spacing.
    axis : int
        Axis to differentiate along.
    order : {1, 2}
        Derivative order.
    """
    f = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
    n = f.shape[0]
    if n < 6:
        raise ValueError("grid too coarse for the fourth-order stencil (need >= 6 points)")
    out = np.empty_like(f)
    if order == 1:
        out[2:-2] = sum(_C1[k] * f[k : n - 4 + k] for k in range(5)) / h
        for i in range(2):
            out[i] = np.tensordot(_B1[i], f[:5], axes=(0, 0)) / h
            out[n - 1 - i] = -np.tensordot(_B1[i], f[::-1][:5], axes=(0, 0)) / h
    elif order == 2:
        out[2:-2] = sum(_C2[k] * f[k : n - 4 + k] for k in range(5)) / h**2
        for i in range(2):
            out[i] = np.tensordot(_B2[i], f[:6], axes=(0, 0)) / h**2
            out[n - 1 - i] = np.tensordot(_B2[i], f[::-1][:6], axes=(0, 0)) / h**2
    else:
        raise ValueError("order must be 1 or 2")
    return np.moveaxis(out, 0, axis)


def wavenumbers(n):
    """Integer wavenumbers of an n-point periodic grid of period 2*pi, Nyquist zeroed."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def torus_derivative(f, axis, order=1):
    """Spectral derivative along a periodic axis of period 2*pi (last two axes)."""
    f = np.asarray(f, dtype=float)
    n = f.shape[axis]
    k = wavenumbers(n)
    shape = [1] * f.ndim
    shape[axis] = n
    k = k.reshape(shape)
    fh = np.fft.fft(f, axis=axis)
    if n % 2 == 0:
        idx = [slice(None)] * f.ndim
        idx[axis] = n // 2
        fh[tuple(idx)] = 0.0
    return np.real(np.fft.ifft((1j * k) ** order * fh, axis=axis))


def torus_laplacian(f):
    """Spectral Laplacian over the last two (periodic) axes."""
    return torus_derivative(f, -1, 2) + torus_derivative(f, -2, 2)


def torus_mean(f):
    """Mean over the last two axes."""
    return np.mean(f, axis=(-2, -1))


def lagrange_weights(nodes, x):
    """Weights w with sum_j w_j f(nodes_j) = p(x) for the interpolating polynomial."""
    nodes = np.asarray(nodes, dtype=float)
    w = np.ones(len(nodes))
    for j in range(len(nodes)):
        for k in range(len(nodes)):
            if k != j:
                w[j] *= (x - nodes[k]) / (nodes[j] - nodes[k])
    return w


def gauss_legendre_tableau(stages):
    """Butcher tableau (A, b, c) of the s-stage Gauss-Legendre collocation method."""
    xg, wg = np.polynomial.legendre.leggauss(stages)
    c = 0.5 * (xg + 1.0)
    b = 0.5 * wg
    A = np.empty((stages, stages))
    for j in range(stages):
        # integral from 0 to c_i of the j-th Lagrange basis polynomial
        coeffs = np.array([1.0])
        for k in range(stages):
            if k != j:
                coeffs = np.polymul(coeffs, np.array([1.0, -c[k]]) / (c[j] - c[k]))
        anti = np.polyint(coeffs)
        A[:, j] = np.polyval(anti, c) - np.polyval(anti, 0.0)
    return A, b, c


class StageInterpolator:
    """Interpolate uniform-grid samples to Gauss stage points, local degree-7 Lagrange."""

    def __init__(self, n_intervals, c, width=8):
        n_nodes = n_intervals + 1
        if n_nodes < width:
            raise ValueError("too few axial nodes for stage interpolation")
        self.index = np.empty((n_intervals, len(c), width), dtype=int)
        self.weight = np.empty((n_intervals, len(c), width))
        half = width // 2
        for i in range(n_intervals):
            start = min(max(i - half + 1, 0), n_nodes - width)
            nodes = np.arange(start, start + width)
            for s, cs in enumerate(c):
                self.index[i, s] = nodes
                self.weight[i, s] = lagrange_weights(nodes.astype(float), i + cs)

    def __call__(self, values):
        """values: (..., n_nodes) -> (..., n_intervals, stages)."""
        v = np.asarray(values)
        return np.einsum("...ijk,ijk->...ij", v[..., self.index], self.weight)


def integrate_linear_system(matrix_fn, forcing_fn, y0, grid, stages=4):
    """Integrate y' = M(x) y + g(x) with Gauss-Legendre collocation.

    Parameters
    ----------
    matrix_fn : callable
        ``matrix_fn(x)`` returns M with shape (B, d, d) for an array x of shape (S,),
        as an array of shape (S, B, d, d).
    forcing_fn : callable
        ``forcing_fn(i, x)`` returns g at the stage points x of interval i,
        shape (S, B, d, R) for R right-hand sides.
    y0 : ndarray
        Initial data, shape (B, d, R).
    grid : ndarray
        Uniform nodes x_0 < ... < x_n.
    stages : int
        Number of Gauss stages (order 2*stages).

    Returns
    -------
    ndarray
        Solution at the nodes, shape (n+1, B, d, R).
    """
    A, b, c = gauss_legendre_tableau(stages)
    y = np.array(y0, dtype=float)
    nb, d, nr = y.shape
    out = np.empty((len(grid), nb, d, nr))
    out[0] = y
    eye = np.eye(stages * d)
    for i in range(len(grid) - 1):
        h = grid[i + 1] - grid[i]
        xs = grid[i] + c * h
        M = matrix_fn(xs)  # (S, B, d, d)
        g = forcing_fn(i, xs)  # (S, B, d, R)
        # K_s = M_s (y + h sum_j A_sj K_j) + g_s
        big = np.zeros((nb, stages * d, stages * d))
        rhs = np.empty((nb, stages * d, nr))
        for s in range(stages):
            rhs[:, s * d : (s + 1) * d] = M[s] @ y + g[s]
            for j in range(stages):
                big[:, s * d : (s + 1) * d, j * d : (j + 1) * d] = -h * A[s, j] * M[s]
        K = np.linalg.solve(eye + big, rhs)
        y = y + h * sum(b[s] * K[:, s * d : (s + 1) * d] for s in range(stages))
        out[i + 1] = y
    return out


def local_derivative(f, h, width=9, axis=0):
    """First derivative from local interpolating polynomials of ``width`` points.

    Accuracy is of order ``width - 1``; stencils shift inward near the ends.
    """
    f = np.moveaxis(np.asarray(f, dtype=float), axis, 0)
    n = f.shape[0]
    if n < width:
        raise ValueError(f"need at least {width} points")
    half = width // 2
    offsets = np.arange(width, dtype=float)
    V = np.vander(offsets, width, increasing=True)  # V[j, k] = offsets_j^k
    out = np.empty_like(f)
    cache = {}
    for i in range(n):
        start = min(max(i - half, 0), n - width)
        x = float(i - start)
        if x not in cache:
            # weights w with sum_j w_j offsets_j^k = d/dx x^k
            rhs = np.array([k * x ** (k - 1) if k > 0 else 0.0 for k in range(width)])
            cache[x] = np.linalg.solve(V.T, rhs)
        out[i] = np.tensordot(cache[x], f[start : start + width], axes=(0, 0)) / h
    return np.moveaxis(out, 0, axis)


class TorusInterpolant:
    """Trigonometric interpolant of nodal data on an ``N x N`` torus grid.

    ``values`` has the torus on its last two axes; leading axes are carried
    along.  The interpolant reproduces the nodes exactly.
    """

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        self.N = v.shape[-1]
        self.coef = np.fft.fft2(v, axes=(-2, -1)) / self.N**2
        self.k = np.fft.fftfreq(self.N, d=1.0 / self.N)

    def _basis(self, y):
        return np.exp(1j * np.multiply.outer(np.asarray(y, dtype=float), self.k))

    def __call__(self, y1, y2, derivative=None):
        """Values at points ``(y1, y2)`` (same shape); ``derivative`` in {None, 1, 2}."""
        y1 = np.asarray(y1, dtype=float)
        shape = y1.shape
        E1 = self._basis(y1.reshape(-1))
        E2 = self._basis(np.asarray(y2, dtype=float).reshape(-1))
        c = self.coef
        if derivative == 1:
            c = c * (1j * self.k)[:, None]
        elif derivative == 2:
            c = c * (1j * self.k)[None, :]
        out = np.real(np.einsum("jk,...kl,jl->...j", E1, c, E2))
        return out.reshape(out.shape[:-1] + shape)


def trig_series(terms, N):
    """Sum of ``amplitude * trig1(m1 y1) * trig2(m2 y2)`` on the ``N x N`` torus grid.

    Each term is a mapping with keys ``m1``, ``m2``, ``block`` (one of
    ``"cc"``, ``"sc"``, ``"cs"``, ``"ss"``; first letter for ``y1``) and
    ``amplitude``.
    """
    y = 2.0 * np.pi * np.arange(N) / N
    y1, y2 = np.meshgrid(y, y, indexing="ij")
    trig = {"c": np.cos, "s": np.sin}
    out = np.zeros((N, N))
    for t in terms:
        block = t.get("block", "cc")
        if len(block) != 2 or block[0] not in trig or block[1] not in trig:
            raise ValueError(f"unknown block {block!r}")
        m1, m2 = int(t["m1"]), int(t["m2"])
        if max(m1, m2) >= N // 2 or min(m1, m2) < 0:
            raise ValueError(f"mode ({m1}, {m2}) is not resolved on an {N}x{N} grid")
        out += float(t["amplitude"]) * trig[block[0]](m1 * y1) * trig[block[1]](m2 * y2)
    return out
