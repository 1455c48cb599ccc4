"""Numerical kernels: Bessel functions, Hermitian EVD, pseudo-inverse and STFT."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ORDER = 64
MAX_ARG = 1000.0
SERIES_LIMIT = 12.0


class NumericsError(ValueError):
    """Raised when a kernel receives input outside its domain."""


# ---------------------------------------------------------------------------
# Bessel functions of the first kind
# ---------------------------------------------------------------------------

def _series_table(nmax: int, x: np.ndarray) -> np.ndarray:
    # ascending power series, J_n(x) = sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)
    half = x / 2.0
    out = np.empty((nmax + 1, x.size))
    q = -(half * half)
    for n in range(nmax + 1):
        term = np.ones_like(x)
        # (x/2)^n / n!
        for j in range(1, n + 1):
            term = term * half / j
        total = term.copy()
        for k in range(1, 80):
            term = term * q / (k * (k + n))
            total += term
            if np.all(np.abs(term) <= 1e-17 * np.abs(total) + 1e-300):
                break
        out[n] = total
    return out


def _miller_table(nmax: int, x: np.ndarray) -> np.ndarray:
    # backward recurrence from a start order well above max(nmax, x),
    # normalised with J_0 + 2 sum_k J_2k = 1
    xmax = float(np.max(x))
    start = int(max(nmax, xmax) + 30 + 3.0 * np.sqrt(max(nmax, xmax)))
    start += start % 2
    out = np.zeros((nmax + 1, x.size))
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    inv_x = 1.0 / x
    for n in range(start, 0, -1):
        j_prev = 2.0 * n * inv_x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        # j_cur now holds the (unnormalised) J_{n-1}
        m = n - 1
        if m <= nmax:
            out[m] = j_cur
        if m % 2 == 0 and m > 0:
            norm += 2.0 * j_cur
        # growth per step stays below ~200 for x >= SERIES_LIMIT, so checking
        # every 8 steps cannot overflow
        if n % 8:
            continue
        big = np.abs(j_cur) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            j_cur = j_cur * scale
            j_next = j_next * scale
            norm = norm * scale
            out[: nmax + 1] *= scale
    norm += j_cur
    return out / norm


def bessel_table(nmax: int, x) -> np.ndarray:
    """Return ``J_n(x)`` for ``n = 0..nmax`` as an array of shape ``(nmax + 1, *x.shape)``.

    Small arguments use the ascending series, larger ones a normalised
    Miller backward recurrence.
    """
    if not 0 <= nmax <= MAX_ORDER:
        raise NumericsError(f"order {nmax} outside [0, {MAX_ORDER}]")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericsError("non-finite Bessel argument")
    if np.any(np.abs(x) > MAX_ARG):
        raise NumericsError(f"|x| > {MAX_ARG}")
    shape = x.shape
    flat = np.abs(x).ravel()
    out = np.empty((nmax + 1, flat.size))
    small = flat < SERIES_LIMIT
    if np.any(small):
        out[:, small] = _series_table(nmax, flat[small])
    if np.any(~small):
        out[:, ~small] = _miller_table(nmax, flat[~small])
    # J_n(-x) = (-1)^n J_n(x)
    neg = x.ravel() < 0
    if np.any(neg):
        odd = np.arange(nmax + 1) % 2 == 1
        out[np.ix_(odd, neg)] *= -1.0
    return out.reshape((nmax + 1,) + shape)


def bessel_orders(orders, x) -> np.ndarray:
    """``J_orders(x)`` for a sequence of signed integer orders.

    Result has shape ``(len(orders), *x.shape)``.
    """
    orders = np.asarray(orders, dtype=int)
    if orders.size == 0:
        return np.empty((0,) + np.shape(x))
    if np.any(np.abs(orders) > MAX_ORDER):
        raise NumericsError(f"order outside [-{MAX_ORDER}, {MAX_ORDER}]")
    table = bessel_table(int(np.max(np.abs(orders))), x)
    sign = np.where((orders < 0) & (orders % 2 == 1), -1.0, 1.0)
    sign = sign.reshape((-1,) + (1,) * np.ndim(x))
    return sign * table[np.abs(orders)]


def bessel_j(order: int, x):
    """Bessel function of the first kind of integer ``order``.

    Accepts scalar or array ``x``; returns a float for scalar input.
    """
    if int(order) != order:
        raise NumericsError("Bessel order must be an integer")
    out = bessel_orders([int(order)], x)[0]
    return float(out) if np.ndim(x) == 0 else out


class BesselInterpolator:
    """Cubic Hermite interpolation of ``J_orders`` on ``[x_min, x_max]``.

    The table is filled once with ``bessel_orders``; derivatives come from
    ``J_n' = (J_{n-1} - J_{n+1}) / 2``.  With the default step the
    interpolation error is below ``1e-12``.
    """

    def __init__(self, orders, x_min: float, x_max: float, step: float = 2e-3):
        self.orders = np.asarray(orders, dtype=int)
        if x_max <= x_min or step <= 0:
            raise NumericsError("need x_min < x_max and a positive step")
        self.x0 = float(x_min)
        self.step = float(step)
        n = int(np.ceil((x_max - x_min) / step)) + 2
        grid = self.x0 + step * np.arange(n)
        lo, hi = int(self.orders.min()) - 1, int(self.orders.max()) + 1
        table = bessel_orders(np.arange(lo, hi + 1), grid)
        idx = self.orders - lo
        self.values = table[idx]
        self.slopes = 0.5 * (table[idx - 1] - table[idx + 1]) * step
        self.x_max = float(grid[-1])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x0) or np.any(x > self.x_max):
            raise NumericsError("argument outside the interpolation range")
        u = (x - self.x0) / self.step
        i = np.minimum(u.astype(int), self.values.shape[1] - 2)
        t = u - i
        t2, t3 = t * t, t * t * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        return (h00 * self.values[:, i] + h10 * self.slopes[:, i]
                + h01 * self.values[:, i + 1] + h11 * self.slopes[:, i + 1])


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise NumericsError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericsError("matrix has non-finite entries")
    return a


def hermitian_evd(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues in descending order.

    Returns ``(eigenvalues, eigenvectors)`` with ``a ~= Q diag(w) Q^H``.
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise NumericsError("matrix is not square")
    scale = max(np.linalg.norm(a), 1e-300)
    if np.linalg.norm(a - a.conj().T) > 1e-10 * scale:
        raise NumericsError("matrix is not Hermitian")
    w, q = np.linalg.eigh(0.5 * (a + a.conj().T))
    return w[::-1].copy(), q[:, ::-1].copy()


def pseudo_inverse(a, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via the SVD.

    Singular values at or below ``tol`` (default ``1e-12 * s_max``) are
    treated as zero.
    """
    a = _as_matrix(a)
    if tol is not None and tol < 0:
        raise NumericsError("tol must be non-negative")
    m, n = a.shape
    if a.size == 0 or not np.any(a):
        return np.zeros((n, m), dtype=complex)
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if tol is None:
        tol = 1e-12 * s[0]
    keep = s > tol
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * s_inv) @ u.conj().T


# ---------------------------------------------------------------------------
# Short-time Fourier transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrogram:
    """STFT magnitudes, ``magnitudes[f, t]``; one column per frame."""

    times: np.ndarray
    freqs: np.ndarray
    magnitudes: np.ndarray

    def __post_init__(self):
        if self.magnitudes.shape != (self.freqs.size, self.times.size):
            raise NumericsError("spectrogram axes do not match magnitudes")

    @property
    def time_bins(self) -> int:
        return self.times.size

    @property
    def freq_bins(self) -> int:
        return self.freqs.size

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0


def stft_window(window_len: int, kind: str = "gaussian") -> np.ndarray:
    n = np.arange(window_len) - (window_len - 1) / 2.0
    if kind == "gaussian":
        sigma = window_len / 6.0
        return np.exp(-0.5 * (n / sigma) ** 2)
    if kind == "hann":
        return np.hanning(window_len)
    raise NumericsError(f"unknown window {kind!r}")


def stft(signal, sample_rate: float, window_len: int, hop: int,
         window: str = "gaussian", zero_pad: int = 4) -> Spectrogram:
    """Magnitude STFT with a centred frequency axis in ``(-fs/2, fs/2]``."""
    x = np.asarray(signal, dtype=complex).ravel()
    if x.size == 0:
        raise NumericsError("empty signal")
    if window_len > x.size:
        raise NumericsError("window longer than signal")
    if window_len < 2 or hop < 1:
        raise NumericsError("window_len must be >= 2 and hop >= 1")
    win = stft_window(window_len, window)
    starts = np.arange(0, x.size - window_len + 1, hop)
    idx = starts[:, None] + np.arange(window_len)[None, :]
    frames = x[idx] * win[None, :]
    nfft = int(zero_pad) * window_len
    spec = np.fft.fft(frames, n=nfft, axis=1)
    # bins -nfft/2+1 .. nfft/2 so the axis covers (-fs/2, fs/2]
    k = np.arange(-(nfft // 2) + 1, nfft // 2 + 1) if nfft % 2 == 0 else \
        np.arange(-(nfft // 2), nfft // 2 + 1)
    mags = np.abs(spec[:, k % nfft]).T
    freqs = k * sample_rate / nfft
    times = (starts + (window_len - 1) / 2.0) / sample_rate
    return Spectrogram(times=times, freqs=freqs, magnitudes=mags)
