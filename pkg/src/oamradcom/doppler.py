"""Rotation-velocity detection from slow-time echoes.

Every slow-time series is turned into Doppler tracks with an STFT ridge
follower.  Subtracting the mode-0 track removes the common linear Doppler,
and the period of what remains gives the spin rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import EchoCube, OamSystemConfig
from .numerics import BesselInterpolator, Spectrogram, bessel_orders, stft

WINDOW_LEN = 128
HOP = 16
ZERO_PAD = 4
PERIODICITY_THRESHOLD = 0.3
SUBHARMONIC_CHECK = 6
SUBHARMONIC_RATIO = 0.5
CONSISTENCY = 0.05   # relative spread of mode rates around their median
MIN_MODES = 3      # agreeing modes needed before a rotation is reported
MIN_SWING = 5e-3   # Hz per unit mode; flatter rotational tracks carry no rotation
COMBINED_THRESHOLD = 0.1
TARGET_AGREEMENT = 0.05


class DopplerError(ValueError):
    pass


@dataclass
class DopplerTrack:
    times: np.ndarray
    frequencies: np.ndarray
    mode: int
    subcarrier: int = -1

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.times.shape != self.frequencies.shape:
            raise DopplerError("track times and frequencies differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DopplerError("track times must increase strictly")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


@dataclass
class SpinEstimate:
    rate: float
    mode_rates: dict = field(default_factory=dict)
    periods: dict = field(default_factory=dict)
    zero: bool = False
    excluded: list = field(default_factory=list)
    height: float = 0.0
    combined: bool = False


@dataclass(frozen=True)
class StftParams:
    window_len: int = WINDOW_LEN
    hop: int = HOP
    zero_pad: int = ZERO_PAD
    window: str = "gaussian"


# ---------------------------------------------------------------------------
# Ridges and tracks
# ---------------------------------------------------------------------------

def _interp_peak(col, k):
    """Log-parabolic offset of bin ``k``; exact for a Gaussian-windowed tone."""
    n = col.size
    if k == 0 or k == n - 1:
        return 0.0
    ym, y0, yp = col[k - 1], col[k], col[k + 1]
    if min(ym, y0, yp) <= 0:
        return 0.0
    lm, l0, lp = np.log(ym), np.log(y0), np.log(yp)
    den = lm - 2 * l0 + lp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (lm - lp) / den, -0.5, 0.5))


def frame_peaks(spec: Spectrogram, frame: int, rel_threshold: float, max_peaks: int):
    """Interpolated local-maximum frequencies and magnitudes of one frame."""
    col = spec.magnitudes[:, frame]
    top = float(np.max(col))
    if top <= 0:
        return []
    inner = (col[1:-1] > col[:-2]) & (col[1:-1] >= col[2:]) & (col[1:-1] >= rel_threshold * top)
    idx = np.nonzero(inner)[0] + 1
    idx = idx[np.argsort(-col[idx], kind="stable")][:max_peaks]
    df = spec.bin_width
    return [(float(spec.freqs[k] + _interp_peak(col, k) * df), float(col[k])) for k in idx]


def ridge_track(series, sample_rate: float, mode: int, subcarrier: int = -1,
                params: StftParams = StftParams()) -> DopplerTrack:
    """Single dominant ridge of a series, one interpolated peak per frame."""
    spec = stft(series, sample_rate, params.window_len, params.hop, params.window, params.zero_pad)
    if not np.any(spec.magnitudes > 0):
        raise DopplerError("no ridge above threshold")
    freqs = np.empty(spec.time_bins)
    for j in range(spec.time_bins):
        col = spec.magnitudes[:, j]
        k = int(np.argmax(col))
        freqs[j] = spec.freqs[k] + _interp_peak(col, k) * spec.bin_width
    return DopplerTrack(spec.times, freqs, mode, subcarrier)


def link_tracks(spec: Spectrogram, max_tracks: int, rel_threshold: float = 0.1):
    """Nearest-frequency continuation of per-frame peaks into at most ``max_tracks`` tracks.

    Returns a list of ``(times, freqs)`` pairs ordered by mean ridge strength.
    """
    if max_tracks < 1:
        raise DopplerError("max_tracks must be >= 1")
    tracks = []   # each: dict(times, freqs, power, last)
    for j in range(spec.time_bins):
        peaks = frame_peaks(spec, j, rel_threshold, max_tracks)
        free = list(range(len(peaks)))
        # continue existing tracks, closest frequency first
        pairs = sorted(((abs(peaks[p][0] - tr["last"]), t, p)
                        for t, tr in enumerate(tracks) for p in free), key=lambda x: x[0])
        used_t, used_p = set(), set()
        for d, t, p in pairs:
            if t in used_t or p in used_p:
                continue
            tr = tracks[t]
            tr["times"].append(spec.times[j])
            tr["freqs"].append(peaks[p][0])
            tr["power"] += peaks[p][1]
            tr["last"] = peaks[p][0]
            used_t.add(t)
            used_p.add(p)
        for p in free:
            if p not in used_p and len(tracks) < max_tracks:
                tracks.append({"times": [spec.times[j]], "freqs": [peaks[p][0]],
                               "power": peaks[p][1], "last": peaks[p][0]})
    tracks.sort(key=lambda tr: -tr["power"])
    return [(np.array(tr["times"]), np.array(tr["freqs"])) for tr in tracks]


def extract_tracks(cube: EchoCube, cfg: OamSystemConfig, u: int, w: int, max_tracks: int = 1,
                   params: StftParams = StftParams(), snapshot: int = 0,
                   rel_threshold: float = 0.1):
    """Doppler tracks of the raw ``(u, w)`` slow-time series of a cube."""
    series = cube.data[u, w, :, snapshot]
    if series.size < 2 * params.window_len:
        raise DopplerError("slow-time series shorter than two windows")
    spec = stft(series, cube.sample_rate, params.window_len, params.hop, params.window,
                params.zero_pad)
    if not np.any(spec.magnitudes > 0):
        raise DopplerError("no ridge above threshold")
    sub = int(cube.subcarriers[w]) if cube.subcarriers is not None else w
    return [DopplerTrack(t, f, int(cfg.modes[u]), sub)
            for t, f in link_tracks(spec, max_tracks, rel_threshold)]


def rotational_component(track: DopplerTrack, track0: DopplerTrack) -> DopplerTrack:
    """Mode-``l`` track minus the mode-0 track at the same subcarrier."""
    if track.mode == 0:
        raise DopplerError("the rotational component needs a nonzero mode")
    if track0.mode != 0:
        raise DopplerError("reference track must be mode 0")
    if track.subcarrier != track0.subcarrier:
        raise DopplerError("tracks come from different subcarriers")
    if track.times.shape != track0.times.shape or not np.allclose(track.times, track0.times):
        raise DopplerError("tracks do not share a time axis")
    return DopplerTrack(track.times, track.frequencies - track0.frequencies,
                        track.mode, track.subcarrier)


# ---------------------------------------------------------------------------
# Period and spin rate
# ---------------------------------------------------------------------------

def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Biased, mean-removed autocorrelation normalised to 1 at lag 0."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return r / r[0] if r[0] > 0 else np.zeros(n)


def _lag_peak(r, k):
    den = r[k - 1] - 2 * r[k] + r[k + 1]
    if den < 0:
        return k + float(np.clip(0.5 * (r[k - 1] - r[k + 1]) / den, -0.5, 0.5))
    return float(k)


def track_period(track: DopplerTrack):
    """Period of a track from the dominant autocorrelation peak.

    The dominant peak in the first half of the lags fixes the period
    roughly; every peak near a multiple of it then enters a least-squares
    fit ``lag_n = n T``.  Returns ``(period, peak_height)``; ``period`` is
    ``nan`` when no peak exists past the first minimum.
    """
    if track.times.size < 4:
        return np.nan, 0.0
    biased = autocorrelation(track.frequencies)
    # peak positions come from the unbiased estimate, whose lags are not
    # tapered towards zero; the height stays on the biased scale
    r = biased * biased.size / (biased.size - np.arange(biased.size))
    rising = np.nonzero(np.diff(r) > 0)[0]
    if rising.size == 0:
        return np.nan, 0.0
    start = int(rising[0])
    half = r.size // 2
    if start >= half - 1:
        return np.nan, 0.0
    k = start + int(np.argmax(r[start:half]))
    if k <= 0 or k >= r.size - 1:
        return np.nan, 0.0
    # a strong peak at a fraction of the dominant lag means the dominant one
    # is a multiple of the period
    for m in range(SUBHARMONIC_CHECK, 1, -1):
        found = []
        for n in range(1, m):
            lo = max(int(np.ceil((n - 0.25) * k / m)), start)
            hi = int(np.floor((n + 0.25) * k / m))
            if hi - lo < 2:
                break
            j = lo + int(np.argmax(r[lo:hi + 1]))
            if not (lo < j < hi and r[j] >= SUBHARMONIC_RATIO * r[k]):
                break
            found.append(j)
        if len(found) == m - 1:
            k = found[0]
            break
    height = float(biased[k])
    t1 = _lag_peak(r, k)
    orders, lags = [], []
    for n in range(1, int((half - 1) / t1) + 1):
        lo = max(int(np.ceil((n - 0.25) * t1)), 1)
        hi = min(int(np.floor((n + 0.25) * t1)), half - 1)
        if hi <= lo:
            break
        j = lo + int(np.argmax(r[lo:hi + 1]))
        if j == lo or j == hi:
            continue
        orders.append(n)
        lags.append(_lag_peak(r, j))
    orders, lags = np.array(orders, float), np.array(lags)
    period = float(orders @ lags / (orders @ orders)) if orders.size else t1
    return period * track.step, height


def combined_track(tracks) -> DopplerTrack:
    """Mode-one track from the per-sample median of ``f_l / l`` over modes.

    Rotational Doppler grows linearly with the mode, so every nonzero-mode
    track is a scaled copy of the same curve; the median discards modes
    whose ridge is lost in noise.
    """
    tracks = [t for t in tracks if t.mode != 0 and t.times.size]
    if not tracks:
        raise DopplerError("no nonzero-mode track to combine")
    n = min(t.times.size for t in tracks)
    freqs = np.median([t.frequencies[:n] / t.mode for t in tracks], axis=0)
    return DopplerTrack(tracks[0].times[:n], freqs, mode=1)


def estimate_spin(tracks, threshold: float = PERIODICITY_THRESHOLD,
                  min_swing: float = 0.0, min_modes: int = 1,
                  combined_threshold: float | None = None) -> SpinEstimate:
    """Average ``2 pi / T`` over the nonzero-mode rotational-component tracks.

    A track must span at least two periods; a track whose autocorrelation
    peak stays below ``threshold`` carries no rotation.  With no periodic
    track left the estimate is flagged zero.  Tracks whose standard
    deviation is below ``min_swing * |l|`` (Hz) are excluded as flat, and
    modes more than ``CONSISTENCY`` away from the median rate are dropped.
    Fewer than ``min_modes`` surviving modes also count as no rotation,
    unless ``combined_threshold`` is given: the swinging modes are then
    merged by ``combined_track`` and its period is used when its peak
    reaches that threshold.
    """
    rates, periods, heights, excluded, swinging = {}, {}, {}, [], []
    for tr in tracks:
        if tr.mode == 0:
            continue
        if tr.frequencies.size and np.std(tr.frequencies) < min_swing * abs(tr.mode):
            excluded.append(tr.mode)
            continue
        swinging.append(tr)
        period, height = track_period(tr)
        duration = tr.times[-1] - tr.times[0] if tr.times.size else 0.0
        if not np.isfinite(period) or height < threshold or duration < 2 * period:
            excluded.append(tr.mode)
            continue
        periods[tr.mode] = period
        heights[tr.mode] = height
        rates[tr.mode] = 2 * np.pi / period
    if rates:
        # drop modes inconsistent with the others (period-multiple slips)
        med = float(np.median(list(rates.values())))
        for mode in [m for m, v in rates.items() if abs(v - med) > CONSISTENCY * med]:
            excluded.append(mode)
            del rates[mode], periods[mode]
    if len(rates) >= max(min_modes, 1):
        return SpinEstimate(rate=float(np.mean(list(rates.values()))), mode_rates=rates,
                            periods=periods, excluded=excluded,
                            height=float(np.mean([heights[m] for m in rates])))
    excluded = excluded + list(rates)
    if combined_threshold is not None and len(swinging) >= max(min_modes, 1):
        merged = combined_track(swinging)
        period, height = track_period(merged)
        duration = merged.times[-1] - merged.times[0]
        if np.isfinite(period) and height >= combined_threshold and duration >= 2 * period:
            return SpinEstimate(rate=2 * np.pi / period, excluded=excluded, height=height,
                                combined=True)
    return SpinEstimate(rate=0.0, zero=True, excluded=excluded)


# ---------------------------------------------------------------------------
# Scatterer-focused processing
# ---------------------------------------------------------------------------

def _column_orders(modes):
    return np.arange(min(modes.min() - 1, -1), max(modes.max() + 1, 1) + 1)


def _joint_columns(cfg: OamSystemConfig, r, theta, phi, bessel=None):
    """Joint steering vectors and their ``r``, ``theta`` and ``phi`` derivatives,
    each ``(UW, P)``.  ``bessel`` may replace ``bessel_orders`` for the
    orders of ``_column_orders``."""
    ks, modes = cfg.wavenumbers, cfg.modes
    x = np.outer(ks * cfg.radius, np.sin(theta))                 # (W, P)
    orders = _column_orders(modes)
    table = bessel(x) if bessel is not None else bessel_orders(orders, x)
    jl = table[modes - orders[0]]
    jm = table[modes - 1 - orders[0]]
    jp = table[modes + 1 - orders[0]]
    j0 = table[-orders[0]]
    j1 = table[1 - orders[0]]
    base = np.exp(1j * np.outer(modes, phi))[:, None, :] * np.exp(2j * np.outer(ks, r))[None]
    v = base * jl * j0[None]
    dr = 2j * ks[None, :, None] * v
    dx = np.outer(ks * cfg.radius, np.cos(theta))[None]
    dth = base * dx * (0.5 * (jm - jp) * j0[None] - jl * j1[None])
    dph = 1j * modes[:, None, None] * v
    p = np.size(r)
    return tuple(a.reshape(-1, p) for a in (v, dr, dth, dph))


@dataclass
class DirectionTrack:
    """Slow-time scatterer positions, each field ``(N, P)``."""

    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class TrackerParams:
    """Slow-time angle tracker settings.

    Angles follow a critically damped oscillator about the starting
    position, driven by white acceleration of density ``process_noise``
    (rad^2/s^3).  Ranges are held constant within a pass and re-estimated
    between passes.  No scatterer strays further than ``max_extent`` metres
    (a full rotation diameter) from its starting position, which keeps a
    weak track from being captured by a nearby strong one.
    """

    decimation: int = 8
    iterations: int = 2
    passes: int = 2
    process_noise: float = 1.0
    spring_freq: float = 1.0
    gate: float = 5.0
    max_step: float = np.deg2rad(0.2)
    max_range_step: float = 1e-3
    max_extent: float = 3.0

    def excursion(self, r, theta) -> np.ndarray:
        """Largest angular deviation ``(2, P)`` allowed in theta and phi."""
        r = np.asarray(r, dtype=float)
        lim = self.max_extent / r
        return np.stack([lim, lim / np.maximum(np.abs(np.sin(theta)), 1e-3)])


def _measure(cfg, block, r, theta, phi, p: TrackerParams, bessel, bounds):
    """Gauss-Newton fit of all scatterers to one averaged block.

    Returns the fitted ``(r, theta, phi)`` and the angle variances.
    """
    state = np.array([r, theta, phi], dtype=float)
    limits = np.array([p.max_range_step, p.max_step, p.max_step])[:, None]
    npos = state.shape[1]
    for it in range(p.iterations + 1):
        a = np.hstack(_joint_columns(cfg, *state, bessel=bessel))
        # column scaling keeps the normal equations well conditioned
        scale = np.linalg.norm(a, axis=0)
        scale[scale == 0] = 1.0
        a = a / scale
        inv_gram = np.linalg.inv(a.conj().T @ a)
        c = (inv_gram @ (a.conj().T @ block)) / scale
        c = c.reshape(4, npos)
        amp = np.where(np.abs(c[0]) > 0, c[0], 1e-300)
        if it < p.iterations:
            state = state + np.clip(np.real(c[1:] / amp), -limits, limits)
            state[1:] = np.clip(state[1:], *bounds)
    resid = block - a @ (c.ravel() * scale)
    dof = max(a.shape[0] - a.shape[1], 1)
    s2 = np.sum(np.abs(resid) ** 2) / dof
    gram = np.real(np.diag(inv_gram)) / scale ** 2
    var = gram[2 * npos:].reshape(2, npos) * s2 / (2 * np.abs(amp) ** 2)
    return state, np.maximum(var, 1e-30)


def _track_pass(cfg, blocks, dt, r, anchor, p: TrackerParams, bessel):
    """One filter-smoother pass; returns smoothed angles ``(B, 2, P)`` and
    the mean fitted range."""
    nb = blocks.shape[1]
    w0 = 2 * np.pi * p.spring_freq
    trans = np.array([[1.0, dt], [-w0 * w0 * dt, 1.0 - 2 * w0 * dt]])
    q = p.process_noise
    noise = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    shape = anchor.shape                                   # (2, P)
    x = np.zeros(shape + (2,))                             # deviation, rate
    cov = np.zeros(shape + (2, 2))
    cov[..., 0, 0] = np.deg2rad(0.1) ** 2
    cov[..., 1, 1] = q / (4 * w0 ** 3) if w0 > 0 else 1.0
    filt = np.empty((nb,) + x.shape)
    filt_cov = np.empty((nb,) + cov.shape)
    pred = np.empty_like(filt)
    pred_cov = np.empty_like(filt_cov)
    ranges = np.full((nb, r.size), np.nan)
    limit = p.excursion(r, anchor[0])
    bounds = (anchor - limit, anchor + limit)
    for j in range(nb):
        if j:
            x = x @ trans.T
            cov = trans @ cov @ trans.T + noise
        pred[j], pred_cov[j] = x, cov
        x[..., 0] = np.clip(x[..., 0], -limit, limit)
        z, var = _measure(cfg, blocks[:, j], r, *(anchor + x[..., 0]), p, bessel, bounds)
        s = cov[..., 0, 0] + var
        innov = z[1:] - anchor - x[..., 0]
        inside = innov ** 2 <= p.gate ** 2 * s
        # clipped rather than rejected, so a drifting track is still pulled back
        lim = p.gate * np.sqrt(s)
        innov = np.clip(innov, -lim, lim)
        gain = cov[..., :, 0] / s[..., None]
        x = x + gain * innov[..., None]
        x[..., 0] = np.clip(x[..., 0], -limit, limit)
        cov = cov - gain[..., :, None] * cov[..., 0, None, :]
        filt[j], filt_cov[j] = x, cov
        ranges[j] = np.where(inside.all(axis=0), z[0], np.nan)
    smooth = filt.copy()
    for j in range(nb - 2, -1, -1):
        c = filt_cov[j] @ trans.T @ np.linalg.inv(pred_cov[j + 1])
        smooth[j] = filt[j] + (c @ (smooth[j + 1] - pred[j + 1])[..., None])[..., 0]
    good = ~np.all(np.isnan(ranges), axis=0)
    r_new = r.copy()
    r_new[good] = np.nanmean(ranges[:, good], axis=0)
    return anchor[None] + smooth[..., 0], r_new


def _interpolator(cfg, theta, margin):
    """Bessel interpolator covering every elevation within ``margin`` of ``theta``."""
    lo = np.clip(theta - margin, 0.0, np.pi)
    hi = np.clip(theta + margin, 0.0, np.pi)
    s_lo = np.minimum(np.sin(lo), np.sin(hi))
    s_hi = np.where((lo <= np.pi / 2) & (hi >= np.pi / 2), 1.0, np.maximum(np.sin(lo), np.sin(hi)))
    scale = cfg.wavenumbers * cfg.radius
    x_min = max(float(scale.min() * s_lo.min()) - 1.0, 0.0)
    x_max = float(scale.max() * s_hi.max()) + 1.0
    return BesselInterpolator(_column_orders(cfg.modes), x_min, x_max)


def track_directions(cube: EchoCube, cfg: OamSystemConfig, positions,
                     params: TrackerParams = TrackerParams(), snapshot: int = 0) -> DirectionTrack:
    """Follow every scatterer's ``(theta, phi)`` through slow time.

    The series is averaged over blocks of ``params.decimation`` samples.
    Each block is fitted by Gauss-Newton steps on the joint ``U x W`` data
    around the predicted angles, and a Kalman filter plus a
    Rauch-Tung-Striebel smoother combine the per-block fits.  Results are
    linearly interpolated back to every sample.
    """
    if params.decimation < 1 or params.iterations < 1 or params.passes < 1:
        raise DopplerError("decimation, iterations and passes must be >= 1")
    if cube.subcarriers is not None and len(cube.subcarriers) != cfg.n_subcarriers:
        raise DopplerError("tracking needs every subcarrier")
    n = cube.n_samples
    nb = n // params.decimation
    if nb < 2:
        raise DopplerError("slow-time series too short to track")
    raw = cube.data[:, :, :nb * params.decimation, snapshot]
    blocks = raw.reshape(-1, nb, params.decimation).mean(axis=2)
    centres = np.arange(nb) * params.decimation + (params.decimation - 1) / 2
    r = np.array([p[0] for p in positions], dtype=float)
    anchor = np.array([[p[1] for p in positions], [p[2] for p in positions]], dtype=float)
    dt = params.decimation / cube.sample_rate
    bessel = _interpolator(cfg, anchor[0], float(np.max(params.excursion(r, anchor[0])[0])) + 1e-3)
    for _ in range(params.passes):
        angles, r = _track_pass(cfg, blocks, dt, r, anchor, params, bessel)
    idx = np.arange(n)
    theta, phi = (np.stack([np.interp(idx, centres, angles[:, a, i]) for i in range(r.size)],
                           axis=1) for a in range(2))
    return DirectionTrack(np.broadcast_to(r, (n, r.size)).copy(), theta, phi)


def focus_scatterers(cube: EchoCube, cfg: OamSystemConfig, ranges, thetas,
                     snapshot: int = 0) -> np.ndarray:
    """Per-scatterer slow-time series, shape ``(P, U, N)``.

    For every mode and sample, the subcarrier vector is unmixed by least
    squares against the frequency-domain steering vectors at ``ranges`` and
    ``thetas``, each of shape ``(P,)`` or ``(N, P)``.  What is left in
    each output is the scatterer's azimuth phase ``e^{i l phi(t)}``.
    """
    subs = cube.subcarriers if cube.subcarriers is not None else np.arange(cfg.n_subcarriers)
    if len(subs) != cfg.n_subcarriers:
        raise DopplerError("focusing needs every subcarrier")
    r = np.asarray(ranges, dtype=float)
    npos = r.shape[-1]
    r = np.broadcast_to(r, (cube.n_samples, npos))
    th = np.broadcast_to(np.asarray(thetas, dtype=float), (cube.n_samples, npos))
    ks = cfg.wavenumbers
    x = ks[:, None, None] * cfg.radius * np.sin(th)[None]          # (W, N, P)
    orders = np.unique(np.append(cfg.modes, 0))
    table = bessel_orders(orders, x)
    j0 = table[np.searchsorted(orders, 0)]
    phase = np.exp(2j * ks[:, None, None] * r[None])
    out = np.empty((npos, cfg.n_modes, cube.n_samples), dtype=complex)
    for u, ell in enumerate(cfg.modes):
        b = np.moveaxis(phase * table[np.searchsorted(orders, ell)] * j0, 0, 1)   # (N, W, P)
        bh = np.conj(np.swapaxes(b, 1, 2))
        rhs = bh @ cube.data[u, :, :, snapshot].T[:, :, None]
        out[:, u, :] = np.linalg.solve(bh @ b, rhs)[:, :, 0].T
    return out


@dataclass
class ScattererSpin:
    estimate: SpinEstimate
    tracks: list
    components: list


def scatterer_spin(series: np.ndarray, cfg: OamSystemConfig, sample_rate: float,
                   params: StftParams = StftParams(), min_swing: float = MIN_SWING) -> ScattererSpin:
    """Spin estimate for one focused scatterer from its ``(U, N)`` mode series."""
    modes = list(cfg.modes)
    if 0 not in modes:
        raise DopplerError("the mode set must contain l = 0")
    if series.shape[-1] < 2 * params.window_len:
        raise DopplerError("slow-time series shorter than two windows")
    tracks =[ridge_track(series[u], sample_rate, int(cfg.modes[u]), -1, params)
              for u in range(cfg.n_modes)]
    ref = tracks[modes.index(0)]
    comps = [rotational_component(t, ref) for t in tracks if t.mode != 0]
    est = estimate_spin(comps, min_swing=min_swing, min_modes=MIN_MODES,
                        combined_threshold=COMBINED_THRESHOLD)
    return ScattererSpin(est, tracks, comps)


def spin_rates(cube: EchoCube, cfg: OamSystemConfig, positions,
               params: StftParams = StftParams(), tracker: TrackerParams = TrackerParams()):
    """Track, focus and estimate the spin of every scatterer at ``positions``.

    Returns a list of ``ScattererSpin`` in the order of ``positions``.
    """
    trk = track_directions(cube, cfg, positions, tracker)
    series = focus_scatterers(cube, cfg, trk.r, trk.theta)
    return [scatterer_spin(s, cfg, cube.sample_rate, params) for s in series]


def target_spin_rates(spins, targets_of, n_targets: int,
                      agreement: float = TARGET_AGREEMENT, omega_max: float = np.inf):
    """Per-target spin rate from the scatterers with a detected rotation.

    All scatterers of a rigid target spin together, so the largest group of
    rates agreeing within ``agreement`` (relative) is averaged; ties go to
    the group with the higher summed periodicity.  Rates above
    ``omega_max`` are ignored.  ``0`` when none rotates.
    """
    out = []
    for q in range(n_targets):
        found = [s.estimate for s, t in zip(spins, targets_of)
                 if t == q and not s.estimate.zero and s.estimate.rate <= omega_max]
        if not found:
            out.append(0.0)
            continue
        best = None
        for e in found:
            group = [g for g in found if abs(g.rate - e.rate) <= agreement * e.rate]
            key = (len(group), sum(g.height for g in group))
            if best is None or key > best[0]:
                best = (key, group)
        out.append(float(np.mean([g.rate for g in best[1]])))
    return out
