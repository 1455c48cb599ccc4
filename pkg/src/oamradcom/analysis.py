"""Fisher information, PCRB and communication-rate analysis.

The echo model used here is the raw one,

    p(l_u, k_w) = -G A_u i^{-l_u} s(l_u, k_w) sum_i sigma_i e^{i2k r_i} / r_i^2
                  e^{i l_u phi_i} J_l(k R sin theta_i) J_0(k R sin theta_i),

observed in complex Gaussian noise of variance ``xi^2``.  The key parameters
of target ``q`` are its centroid position and its spin rate; every other
scatterer parameter is treated as known.  The spin rate enters only the
vertex azimuth, through the closed-form swing ``g sin(Omega t + psi_0 + delta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import OamSystemConfig, beam_matrix, channel_vector, effective_channel
from .numerics import bessel_orders, pseudo_inverse
from .scene import TargetState, doppler_gain, scatterer_position

PARAMETERS = ("r", "theta", "phi", "omega")
SINR_CAP = 1e12
SINGULAR_COND = 1e14


class AnalysisError(ValueError):
    pass


def parameter_keys(n_targets: int) -> list[tuple[int, str]]:
    """Ordering of the key parameters: ``(r, theta, phi, omega)`` per target."""
    return [(q, name) for q in range(n_targets) for name in PARAMETERS]


# ---------------------------------------------------------------------------
# Echo model and its derivatives
# ---------------------------------------------------------------------------

@dataclass
class _Geometry:
    """Scatterer positions at a set of times, each ``(S, T)``."""

    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    rcs: np.ndarray          # (S,)
    target: np.ndarray       # (S,) owning target index
    role: list


def _geometry(targets, times, overrides=None) -> _Geometry:
    """Scatterer positions with optional key-parameter overrides.

    ``overrides`` maps ``(q, name)`` to a value.  Centroid overrides move
    the centroid scatterer only; an ``omega`` override changes the vertex
    azimuth by the closed-form swing difference.
    """
    overrides = overrides or {}
    times = np.atleast_1d(np.asarray(times, dtype=float))
    rs, ths, phs, rcs, owner, roles = [], [], [], [], [], []
    for q, tg in enumerate(targets):
        for s in tg.scatterers:
            r, th, ph = (np.broadcast_to(a, times.shape).astype(float)
                         for a in scatterer_position(tg, s, times))
            if s.role == "centroid":
                r = np.full_like(r, overrides.get((q, "r"), r))
                th = np.full_like(th, overrides.get((q, "theta"), th))
                ph = np.full_like(ph, overrides.get((q, "phi"), ph))
            elif s.role == "vertex" and (q, "omega") in overrides:
                g, delta = doppler_gain(tg, s)
                base = s.initial_phase + delta
                ph = ph + g * (np.sin(overrides[(q, "omega")] * times + base)
                               - np.sin(tg.spin_rate * times + base))
            rs.append(r)
            ths.append(th)
            phs.append(ph)
            rcs.append(s.rcs)
            owner.append(q)
            roles.append(s.role)
    return _Geometry(np.array(rs), np.array(ths), np.array(phs),
                     np.array(rcs, dtype=complex), np.array(owner), roles)


def _prefactor(cfg: OamSystemConfig, symbols=None, weights=None) -> np.ndarray:
    """``-G A_u i^{-l_u} s(l_u, k_w)``, shape ``(U, W)``."""
    s = np.ones((cfg.n_modes, cfg.n_subcarriers)) if symbols is None else np.asarray(symbols)
    a = cfg.weights if weights is None else np.asarray(weights, dtype=float)
    return (-cfg.gain * a[:, None]
            * (1j ** (-cfg.modes.astype(float)))[:, None] * s)


def _bessel_terms(cfg: OamSystemConfig, theta):
    """``J_l J_0`` and its theta derivative for every mode and subcarrier.

    ``theta`` has shape ``S``; results have shape ``(U, W, *S)``.
    """
    theta = np.asarray(theta, dtype=float)
    ks = cfg.wavenumbers.reshape((-1,) + (1,) * theta.ndim)
    x = ks * cfg.radius * np.sin(theta)[None]
    modes = cfg.modes
    orders = np.arange(min(modes.min() - 1, -1), max(modes.max() + 1, 1) + 1)
    table = bessel_orders(orders, x)
    jl = table[modes - orders[0]]
    jm = table[modes - 1 - orders[0]]
    jp = table[modes + 1 - orders[0]]
    j0 = table[-orders[0]]
    j1 = table[1 - orders[0]]
    dx = ks * cfg.radius * np.cos(theta)[None]
    value = jl * j0[None]
    slope = dx[None] * (0.5 * j0[None] * jm - 0.5 * j0[None] * jp - jl * j1[None])
    return value, slope


def model_p(cfg: OamSystemConfig, targets, t, overrides=None, symbols=None) -> np.ndarray:
    """Noise-free raw echo ``p`` at time ``t``, shape ``(U, W)``."""
    geo = _geometry(targets, [t], overrides)
    value, _ = _bessel_terms(cfg, geo.theta[:, 0])
    ks = cfg.wavenumbers[None, :, None]
    r, ph = geo.r[:, 0], geo.phi[:, 0]
    terms = (np.exp(2j * ks * r[None, None]) / (r * r)[None, None]
             * np.exp(1j * cfg.modes[:, None, None] * ph[None, None]) * value)
    return _prefactor(cfg, symbols) * (terms @ geo.rcs)


def _check_parameter(targets, parameter):
    q, name = parameter
    if name not in PARAMETERS:
        raise AnalysisError(f"unknown parameter {name!r}")
    if not 0 <= q < len(targets):
        raise AnalysisError(f"target index {q} out of range")


def echo_partials(cfg: OamSystemConfig, targets, times, symbols=None,
                  weights=None) -> np.ndarray:
    """All key-parameter derivatives of ``p``, shape ``(4Q, U, W, T)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    geo = _geometry(targets, times)
    ks = cfg.wavenumbers[None, :, None]
    ells = cfg.modes[:, None, None]
    pre = _prefactor(cfg, symbols, weights)[:, :, None]
    out = np.zeros((4 * len(targets), cfg.n_modes, cfg.n_subcarriers, times.size), dtype=complex)
    for q, tg in enumerate(targets):
        for i in np.nonzero(geo.target == q)[0]:
            role = geo.role[i]
            if role not in ("centroid", "vertex"):
                continue
            r, th, ph = geo.r[i], geo.theta[i], geo.phi[i]
            value, slope = _bessel_terms(cfg, th)
            common = (pre * geo.rcs[i] * np.exp(2j * ks * r[None, None]) / (r * r)[None, None]
                      * np.exp(1j * ells * ph[None, None]))
            if role == "centroid":
                out[4 * q] = common * value * 2 * (1j * ks - 1 / r[None, None])
                out[4 * q + 1] = common * slope
                out[4 * q + 2] = common * value * 1j * ells
            else:
                vertex = next(s for s in tg.scatterers if s.role == "vertex")
                g, delta = doppler_gain(tg, vertex)
                swing = g * times * np.cos(tg.spin_rate * times + vertex.initial_phase + delta)
                out[4 * q + 3] = common * value * 1j * ells * swing[None, None]
    return out


def partial_p(cfg: OamSystemConfig, targets, parameter, u: int, w: int, t: float,
              symbols=None) -> complex:
    """Derivative of ``p(l_u, k_w)`` at time ``t`` with respect to one key
    parameter ``(q, name)``, ``name`` in ``PARAMETERS``."""
    _check_parameter(targets, parameter)
    q, name = parameter
    d = echo_partials(cfg, targets, [t], symbols)
    return complex(d[4 * q + PARAMETERS.index(name), u, w, 0])


# ---------------------------------------------------------------------------
# Fisher information and PCRB
# ---------------------------------------------------------------------------

@dataclass
class FisherMatrix:
    matrix: np.ndarray
    keys: list = field(default_factory=list)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise AnalysisError("Fisher matrix must be square")
        scale = max(np.max(np.abs(m)), 1e-300)
        if np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise AnalysisError("Fisher matrix is not symmetric")
        self.matrix = 0.5 * (m + m.T)
        if not self.keys:
            self.keys = parameter_keys(m.shape[0] // 4)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def is_psd(self) -> bool:
        w = np.linalg.eigvalsh(self.matrix)
        return bool(w[0] >= -1e-8 * max(np.trace(self.matrix), 1e-300))


def fisher_matrix(cfg: OamSystemConfig, targets, times, noise_variance: float | None = None,
                  chunk: int = 256) -> FisherMatrix:
    """``J_ij = (1/xi^2) sum_t sum_u sum_w Re[conj(dp/di) dp/dj]``."""
    xi2 = cfg.noise_variance if noise_variance is None else noise_variance
    if xi2 <= 0:
        raise AnalysisError("noise variance must be positive")
    if not targets:
        raise AnalysisError("no targets")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = 4 * len(targets)
    total = np.zeros((n, n))
    for start in range(0, times.size, chunk):
        d = echo_partials(cfg, targets, times[start:start + chunk]).reshape(n, -1)
        total += np.real(d.conj() @ d.T)
    return FisherMatrix(total / xi2, parameter_keys(len(targets)))


def mode_fisher(cfg: OamSystemConfig, targets, times, noise_variance: float | None = None,
                chunk: int = 256) -> np.ndarray:
    """Unit-weight Fisher contribution of every mode, ``(U, 4Q, 4Q)``.

    The echo is linear in each ``A_u``, so ``J(A) = sum_u A_u^2 J_u``.
    """
    xi2 = cfg.noise_variance if noise_variance is None else noise_variance
    if xi2 <= 0:
        raise AnalysisError("noise variance must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = 4 * len(targets)
    ones = np.ones(cfg.n_modes)
    total = np.zeros((cfg.n_modes, n, n))
    for start in range(0, times.size, chunk):
        d = echo_partials(cfg, targets, times[start:start + chunk], weights=ones)
        d = np.moveaxis(d, 1, 0).reshape(cfg.n_modes, n, -1)
        total += np.real(np.einsum("uik,ujk->uij", d.conj(), d))
    return total / xi2


@dataclass
class PcrbResult:
    values: np.ndarray
    keys: list
    singular: bool = False
    condition: float = 1.0
    unidentifiable: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {f"{name}{q}": float(v) for (q, name), v in zip(self.keys, self.values)}


def pcrb(fisher: FisherMatrix) -> PcrbResult:
    """Diagonal of ``J^{-1}``.

    When ``J`` is singular (condition number above ``SINGULAR_COND``) the
    null-space directions are reported; parameters that touch them get an
    infinite bound and the rest are bounded through the identifiable block.
    """
    m = fisher.matrix
    n = m.shape[0]
    scale = np.sqrt(np.maximum(np.diag(m), 0.0))
    zero = scale == 0
    scale[zero] = 1.0
    normed = m / np.outer(scale, scale)
    w, v = np.linalg.eigh(normed)
    top = max(w[-1], 1e-300)
    tiny = w <= top / SINGULAR_COND
    cond = float(top / w[0]) if w[0] > 0 else np.inf
    if not np.any(tiny):
        inv = np.linalg.inv(normed)
        return PcrbResult(np.diag(inv) / scale ** 2, list(fisher.keys), False, cond)
    null = v[:, tiny]
    involved = np.any(np.abs(null) > 1e-6, axis=1) | zero
    combos = []
    for col in null.T:
        idx = np.nonzero(np.abs(col) > 1e-6)[0]
        combos.append({f"{fisher.keys[i][1]}{fisher.keys[i][0]}": float(col[i]) for i in idx})
    values = np.full(n, np.inf)
    keep = ~involved
    if np.any(keep):
        sub = normed[np.ix_(keep, keep)]
        values[keep] = np.diag(np.linalg.inv(sub)) / scale[keep] ** 2
    return PcrbResult(values, list(fisher.keys), True, cond, combos)


# ---------------------------------------------------------------------------
# Communication link
# ---------------------------------------------------------------------------

@dataclass
class RateReport:
    sinr: np.ndarray          # (W, U) linear
    rate: float

    def __post_init__(self):
        if np.any(self.sinr < 0):
            raise AnalysisError("SINR must be non-negative")


def sinr(cfg: OamSystemConfig, channel, estimate, weights=None,
         noise_variance: float | None = None) -> np.ndarray:
    """Zero-forcing SINR per subcarrier and mode, shape ``(W, U)``.

    ``channel`` and ``estimate`` are ``(W, M)`` rows ``h(k_w)``.  Symbols are
    unit-power and independent, so ``E{S S^H} = I``.
    """
    a = cfg.weights if weights is None else np.asarray(weights, dtype=float)
    xi2 = cfg.noise_variance if noise_variance is None else noise_variance
    channel = np.atleast_2d(channel)
    estimate = np.atleast_2d(estimate)
    if channel.shape != estimate.shape or channel.shape[0] != cfg.n_subcarriers:
        raise AnalysisError("channel and estimate must both be (W, M)")
    amat = np.diag(a)
    out = np.empty((cfg.n_subcarriers, cfg.n_modes))
    for w in range(cfg.n_subcarriers):
        g = effective_channel(cfg, channel[w])
        g_hat = effective_channel(cfg, estimate[w])
        if np.linalg.matrix_rank(g_hat, tol=1e-12 * max(np.max(np.abs(g_hat)), 1e-300)) < cfg.n_modes:
            raise AnalysisError(f"estimated channel at subcarrier {w} is rank deficient")
        zf = pseudo_inverse(g_hat)
        leak = zf @ g - np.eye(cfg.n_modes)
        r_as = amat @ amat.conj().T
        r_i = leak @ amat @ amat.conj().T @ leak.conj().T
        r_z = xi2 * zf @ zf.conj().T
        num = np.real(np.diag(r_as))
        den = np.real(np.diag(r_i)) + np.real(np.diag(r_z))
        with np.errstate(divide="ignore", invalid="ignore"):
            out[w] = np.where(den > 0, num / np.where(den > 0, den, 1.0), SINR_CAP)
    return np.minimum(out, SINR_CAP)


def average_rate(sinr_grid) -> float:
    """``(1/U) sum_w sum_u log2(1 + SINR)`` for a ``(W, U)`` grid."""
    s = np.asarray(sinr_grid, dtype=float)
    if np.any(s < 0):
        raise AnalysisError("SINR must be non-negative")
    if s.ndim != 2:
        raise AnalysisError("SINR grid must be (W, U)")
    return float(np.sum(np.log2(1.0 + s)) / s.shape[1])


def rate_report(cfg: OamSystemConfig, channel, estimate=None, weights=None) -> RateReport:
    estimate = channel if estimate is None else estimate
    grid = sinr(cfg, channel, estimate, weights)
    return RateReport(grid, average_rate(grid))


def channel_matrix(cfg: OamSystemConfig, target: TargetState) -> np.ndarray:
    """True LoS channel rows ``h(k_w)`` towards a target's centroid, ``(W, M)``."""
    point = (target.range, target.elevation, target.azimuth)
    return np.array([channel_vector(cfg, point, w) for w in range(cfg.n_subcarriers)])


def mode_gains(cfg: OamSystemConfig, channel) -> np.ndarray:
    """``|h(k_w) F|^2`` per subcarrier and mode, ``(W, U)``."""
    return np.abs(np.atleast_2d(channel) @ beam_matrix(cfg)) ** 2
