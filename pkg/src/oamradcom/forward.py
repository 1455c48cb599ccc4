"""Transmit signals, far-field echoes and the communication link."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import bessel_orders, bessel_table, pseudo_inverse
from .scene import TargetState, scatterer_position, unit_vector

WEIGHT_TOL = 1e-12


class ForwardModelError(ValueError):
    pass


def normalize_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ForwardModelError("weights must be non-negative")
    power = np.sum(w * w)
    if power <= 0:
        raise ForwardModelError("weights have zero power")
    return w / np.sqrt(power)


def equal_weights(n_modes: int) -> np.ndarray:
    return np.full(n_modes, 1.0 / np.sqrt(n_modes))


@dataclass(frozen=True)
class OamSystemConfig:
    """Array geometry, mode/subcarrier sets, noise and beam weights.

    ``gain`` folds the dipole and array constants of the radar echo,
    ``comm_gain`` the constant of the communication channel.
    """

    n_tx: int
    n_rx: int
    radius: float
    modes: np.ndarray
    wavenumbers: np.ndarray
    noise_variance: float
    weights: np.ndarray = None
    psk_order: int = 4
    gain: float = 1.0
    comm_gain: float = 1.0

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=int)
        ks = np.asarray(self.wavenumbers, dtype=float)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "wavenumbers", ks)
        if self.weights is None:
            object.__setattr__(self, "weights", equal_weights(modes.size))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        if modes.ndim != 1 or modes.size < 1 or np.any(np.diff(modes) != 1):
            raise ForwardModelError("modes must be consecutive integers")
        if ks.ndim != 1 or ks.size < 1 or np.any(np.abs(np.diff(ks) - 1.0) > 1e-9):
            raise ForwardModelError("wavenumbers must be spaced by exactly 1 rad/m")
        if np.any(ks <= 0):
            raise ForwardModelError("wavenumbers must be positive")
        if modes.size > self.n_tx:
            raise ForwardModelError("more OAM modes than transmit elements")
        if self.psk_order < 2 or self.psk_order & (self.psk_order - 1):
            raise ForwardModelError("psk_order must be a power of two >= 2")
        if self.radius <= 0:
            raise ForwardModelError("radius must be positive")
        if self.noise_variance < 0:
            raise ForwardModelError("noise variance must be >= 0")
        if weights.shape != modes.shape:
            raise ForwardModelError("one weight per mode required")
        if np.any(weights < 0):
            raise ForwardModelError("weights must be non-negative")
        if abs(np.sum(weights ** 2) - 1.0) > WEIGHT_TOL:
            raise ForwardModelError("weights must satisfy sum |A_u|^2 = 1")

    @property
    def n_modes(self) -> int:
        return self.modes.size

    @property
    def n_subcarriers(self) -> int:
        return self.wavenumbers.size

    def replace(self, **changes) -> "OamSystemConfig":
        return replace(self, **changes)


def snr_to_noise_variance(snr_db: float) -> float:
    """Unit transmit power, so the noise variance is the inverse linear SNR."""
    return 10.0 ** (-snr_db / 10.0)


def psk_symbols(rng: np.random.Generator, order: int, shape) -> np.ndarray:
    return np.exp(2j * np.pi * rng.integers(0, order, size=shape) / order)


def element_angles(n: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


# ---------------------------------------------------------------------------
# Transmitter
# ---------------------------------------------------------------------------

def element_signal(cfg: OamSystemConfig, u: int, w: int, m: int, symbol: int) -> complex:
    """Signal of transmit element ``m`` (0-based) on mode ``u`` and subcarrier ``w``."""
    if not (0 <= u < cfg.n_modes and 0 <= w < cfg.n_subcarriers and 0 <= m < cfg.n_tx):
        raise ForwardModelError("index out of range")
    if not 0 <= symbol < cfg.psk_order:
        raise ForwardModelError("symbol index out of range")
    phi_m = 2 * np.pi * m / cfg.n_tx
    phase = cfg.modes[u] * phi_m + 2 * np.pi * symbol / cfg.psk_order
    return complex(cfg.weights[u] * np.exp(1j * phase))


def _check_far_field(cfg, r):
    if np.any(np.asarray(r) <= 20 * cfg.radius):
        raise ForwardModelError("point is not in the far field (r <= 20 R)")


def transmit_field(cfg: OamSystemConfig, point, u: int, w: int, symbol: int) -> complex:
    """Closed-form far field of the UCA (Bessel approximation)."""
    r, theta, phi = point
    _check_far_field(cfg, r)
    ell, k = int(cfg.modes[u]), cfg.wavenumbers[w]
    s = np.exp(2j * np.pi * symbol / cfg.psk_order)
    jl = bessel_orders([ell], k * cfg.radius * np.sin(theta))[0]
    return complex(cfg.gain * cfg.weights[u] * cfg.n_tx * np.exp(1j * k * r)
                   * np.exp(1j * ell * phi) / r * (1j) ** (-ell) * jl * s)


def transmit_field_elements(cfg: OamSystemConfig, point, u: int, w: int, symbol: int) -> complex:
    """Far field as an explicit sum over transmit elements (no Bessel step)."""
    r, theta, phi = point
    _check_far_field(cfg, r)
    ell, k = int(cfg.modes[u]), cfg.wavenumbers[w]
    s = np.exp(2j * np.pi * symbol / cfg.psk_order)
    phi_m = element_angles(cfg.n_tx)
    k_dot_r = k * cfg.radius * np.sin(theta) * np.cos(phi - phi_m)
    total = np.sum(np.exp(-1j * (k_dot_r - ell * phi_m)))
    return complex(cfg.gain * cfg.weights[u] * np.exp(1j * k * r) / r * total * s)


# ---------------------------------------------------------------------------
# Radar echo
# ---------------------------------------------------------------------------

def scattering_kernel(cfg: OamSystemConfig, r, theta, phi, subcarriers=None) -> np.ndarray:
    """Per-scatterer compensated echo terms.

    ``r, theta, phi`` share a shape ``S``; the result has shape
    ``(U, W', *S)`` with entries ``e^{i2kr}/r^2 e^{il phi} J_l J_0``.
    """
    r, theta, phi = (np.asarray(a, dtype=float) for a in (r, theta, phi))
    ks = cfg.wavenumbers if subcarriers is None else cfg.wavenumbers[subcarriers]
    extra = (1,) * r.ndim
    x = ks.reshape((-1,) + extra) * cfg.radius * np.sin(theta)[None]
    nmax = int(np.max(np.abs(cfg.modes)))
    table = bessel_table(nmax, x)
    sign = np.where((cfg.modes < 0) & (cfg.modes % 2 == 1), -1.0, 1.0)
    jl = sign.reshape((-1, 1) + extra) * table[np.abs(cfg.modes)]
    range_term = np.exp(2j * ks.reshape((-1,) + extra) * r[None]) / (r * r)[None]
    mode_term = np.exp(1j * cfg.modes.reshape((-1,) + extra) * phi[None])
    return jl * (table[0] * range_term)[None] * mode_term[:, None]


def _target_geometry(targets, t):
    rs, ths, phs, rcs = [], [], [], []
    for tg in targets:
        for s in tg.scatterers:
            r, th, ph = scatterer_position(tg, s, t)
            rs.append(r)
            ths.append(th)
            phs.append(ph)
            rcs.append(s.rcs)
    return np.array(rs), np.array(ths), np.array(phs), np.array(rcs, dtype=complex)


def scatterer_count(targets) -> int:
    return sum(len(tg.scatterers) for tg in targets)


def noise_free_echo(cfg: OamSystemConfig, targets, t, rcs=None, subcarriers=None) -> np.ndarray:
    """Compensated, noise-free echo summed over scatterers at time ``t`` (scalar),
    shape ``(U, W')``."""
    if not targets:
        nw = cfg.n_subcarriers if subcarriers is None else len(np.atleast_1d(subcarriers))
        return np.zeros((cfg.n_modes, nw), dtype=complex)
    r, th, ph, default_rcs = _target_geometry(targets, float(t))
    amp = default_rcs if rcs is None else np.asarray(rcs, dtype=complex)
    _check_far_field(cfg, r)
    return scattering_kernel(cfg, r, th, ph, subcarriers) @ amp


def _raw_factor(cfg: OamSystemConfig, symbols) -> np.ndarray:
    # E_R = -G A_u i^{-l} s X + n
    return (-cfg.gain * cfg.weights[:, None] * (1j ** (-cfg.modes.astype(float)))[:, None]
            * symbols)


def echo_matrix(cfg: OamSystemConfig, targets, t: float, rcs=None, noise=None,
                symbols=None) -> np.ndarray:
    """Raw ``U x W`` echo before bit-synchronous compensation."""
    if symbols is None:
        symbols = np.ones((cfg.n_modes, cfg.n_subcarriers), dtype=complex)
    x = noise_free_echo(cfg, targets, t, rcs)
    out = _raw_factor(cfg, symbols) * x
    if noise is not None:
        out = out + noise
    return out


def compensate(cfg: OamSystemConfig, raw, symbols=None) -> np.ndarray:
    """Strip the known gain, weight, symbol and ``i^{-l}`` factors from a raw echo."""
    raw = np.asarray(raw, dtype=complex)
    if np.any(cfg.weights == 0):
        raise ForwardModelError("cannot compensate a mode with zero weight")
    if symbols is None:
        symbols = np.ones(raw.shape[:2], dtype=complex)
    eta = cfg.gain * cfg.weights[:, None]
    extra = (1,) * (raw.ndim - 2)
    factor = (-1.0 / eta * np.conj(symbols) / np.abs(symbols)
              * (1j ** cfg.modes.astype(float))[:, None])
    return raw * factor.reshape(factor.shape + extra)


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class EchoCube:
    """Compensated echoes indexed ``data[u, w, n, l]``."""

    data: np.ndarray
    times: np.ndarray
    sample_rate: float
    rcs: np.ndarray
    subcarriers: np.ndarray = field(default=None)

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[3]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]


def echo_cube(cfg: OamSystemConfig, targets, duration: float = 0.0, sample_rate: float = 1.0,
              snapshots: int = 1, rng: np.random.Generator | None = None,
              fluctuating: bool = True, subcarriers=None, n_samples: int | None = None,
              symbols=None) -> EchoCube:
    """Synthesize the compensated echo over slow time and independent snapshots.

    Snapshot ``l`` scales each scatterer's mean RCS by an independent
    unit-variance complex Gaussian draw when ``fluctuating``; positions are
    re-evaluated at every slow-time sample.
    """
    if rng is None:
        rng = np.random.default_rng()
    if snapshots < 1:
        raise ForwardModelError("need at least one snapshot")
    if n_samples is None:
        n_samples = max(int(round(duration * sample_rate)), 1)
    times = np.arange(n_samples) / sample_rate
    subs = np.arange(cfg.n_subcarriers) if subcarriers is None else np.atleast_1d(subcarriers)
    nw = subs.size
    n_sc = scatterer_count(targets)
    if n_sc:
        _, _, _, mean_rcs = _target_geometry(targets, 0.0)
    else:
        mean_rcs = np.zeros(0, dtype=complex)
    if fluctuating:
        draws = mean_rcs[None, :] * complex_normal(rng, (snapshots, n_sc))
    else:
        draws = np.repeat(mean_rcs[None, :], snapshots, axis=0)

    data = np.zeros((cfg.n_modes, nw, n_samples, snapshots), dtype=complex)
    idx = 0
    for tg in targets:
        for s in tg.scatterers:
            r, th, ph = scatterer_position(tg, s, times)
            _check_far_field(cfg, r)
            kern = scattering_kernel(cfg, r, th, ph, subs)  # (U, W', N)
            data += kern[..., None] * draws[None, None, None, :, idx]
            idx += 1

    if cfg.noise_variance > 0:
        if symbols is None:
            symbols = np.ones((cfg.n_modes, cfg.n_subcarriers), dtype=complex)
        raw_noise = complex_normal(rng, data.shape, cfg.noise_variance)
        data += compensate(cfg, raw_noise, np.asarray(symbols)[:, subs])
    return EchoCube(data=data, times=times, sample_rate=sample_rate, rcs=draws,
                    subcarriers=subs)


# ---------------------------------------------------------------------------
# Communication link
# ---------------------------------------------------------------------------

def channel_vector(cfg: OamSystemConfig, point, w: int) -> np.ndarray:
    """LoS channel ``h_m(k_w)`` from every transmit element to the target antenna."""
    r, theta, phi = point
    k = cfg.wavenumbers[w]
    phi_m = element_angles(cfg.n_tx)
    return (cfg.comm_gain / (2 * k * r)
            * np.exp(-1j * k * r - 1j * k * cfg.radius * np.sin(theta) * np.cos(phi + phi_m)))


def beam_matrix(cfg: OamSystemConfig) -> np.ndarray:
    """``F = [e^{i l_u phi_m}]``, ``M x U``."""
    return np.exp(1j * np.outer(element_angles(cfg.n_tx), cfg.modes))


def effective_channel(cfg: OamSystemConfig, h: np.ndarray) -> np.ndarray:
    """Per-mode channel matrix seen by the sequentially transmitted OAM beams.

    Mode ``u`` occupies its own slot, so the ``U`` received samples see the
    diagonal matrix ``diag(h F)``.
    """
    return np.diag(h @ beam_matrix(cfg))


@dataclass
class CommLink:
    channel: np.ndarray      # (W, M) true channel
    estimate: np.ndarray     # (W, M) channel seen by the receiver
    symbols: np.ndarray      # (W, U)
    received: np.ndarray     # (W, U)


def comm_received(cfg: OamSystemConfig, centroid, csi_error: float = 0.0, symbols=None,
                  rng: np.random.Generator | None = None, noise: bool = True) -> CommLink:
    """Baseband samples at the communication target, plus perturbed CSI.

    The CSI error is i.i.d. complex Gaussian with per-entry variance
    ``csi_error**2 * mean|H|^2``.
    """
    if rng is None:
        rng = np.random.default_rng()
    r, theta, phi = centroid
    _check_far_field(cfg, r)
    U, W = cfg.n_modes, cfg.n_subcarriers
    if symbols is None:
        symbols = psk_symbols(rng, cfg.psk_order, (W, U))
    symbols = np.asarray(symbols, dtype=complex)
    H = np.array([channel_vector(cfg, centroid, w) for w in range(W)])
    if csi_error > 0:
        var = csi_error ** 2 * np.mean(np.abs(H) ** 2)
        H_hat = H + complex_normal(rng, H.shape, var)
    else:
        H_hat = H.copy()
    F = beam_matrix(cfg)
    y = (H @ F) * cfg.weights[None, :] * symbols
    if noise and cfg.noise_variance > 0:
        y = y + complex_normal(rng, y.shape, cfg.noise_variance)
    return CommLink(channel=H, estimate=H_hat, symbols=symbols, received=y)


def zero_forcing_detect(cfg: OamSystemConfig, link: CommLink) -> np.ndarray:
    """Detected ``A S`` per subcarrier, shape ``(W, U)``."""
    out = np.empty_like(link.received)
    for w in range(cfg.n_subcarriers):
        g_hat = effective_channel(cfg, link.estimate[w])
        out[w] = pseudo_inverse(g_hat) @ link.received[w]
    return out


def direction_vector(point) -> np.ndarray:
    r, theta, phi = point
    return r * unit_vector(theta, phi)
