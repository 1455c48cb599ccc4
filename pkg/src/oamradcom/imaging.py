"""Mode-domain and frequency-domain MUSIC with 2-D peak search and fusion.

Wavenumbers are spaced by exactly 1 rad/m, so ``e^{i2kr}`` repeats every
``pi`` metres of range.  The frequency-domain search therefore runs over the
wrapped range ``[0, pi)`` and absolute ranges come from per-target coarse
range cues.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .forward import EchoCube, OamSystemConfig
from .numerics import bessel_orders, bessel_table, hermitian_evd
from .scene import unit_vector

RANGE_PERIOD = np.pi
SATURATION = 1e15
LOADING = 1e-10
MIN_CANDIDATES = 12


class ImagingError(ValueError):
    pass


@dataclass(frozen=True)
class MusicSpectrum:
    """Spectrum values on ``axis1 x axis2``; ``periods`` marks wrapped axes."""

    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray
    periods: tuple = (None, None)
    saturated: bool = False

    def __post_init__(self):
        if self.values.shape != (self.axis1.size, self.axis2.size):
            raise ImagingError("spectrum shape does not match its axes")
        for ax in (self.axis1, self.axis2):
            if ax.size > 1 and np.any(np.diff(ax) <= 0):
                raise ImagingError("grid axes must be increasing")


@dataclass
class PeakList:
    points: list
    values: list
    shortfall: bool = False


@dataclass
class PositionEstimate:
    r: float
    theta: float
    phi: float
    n_mode_peaks: int = 0
    n_freq_peaks: int = 0
    target: int = -1


@dataclass(frozen=True)
class SearchGrid:
    """Two-stage grid: coarse steps, then a local pass ``refine`` times finer."""

    theta_min: float = np.deg2rad(5.0)
    theta_max: float = np.deg2rad(90.0)
    theta_step: float = np.deg2rad(0.2)
    phi_step: float = np.deg2rad(0.2)
    r_step: float = 0.2
    refine: int = 10

    def theta_axis(self):
        n = int(np.floor((self.theta_max - self.theta_min) / self.theta_step + 1e-9)) + 1
        return self.theta_min + self.theta_step * np.arange(n)

    def phi_axis(self):
        n = int(round(2 * np.pi / self.phi_step))
        return np.arange(n) * (2 * np.pi / n)

    def range_axis(self):
        n = int(np.ceil(RANGE_PERIOD / self.r_step))
        return np.arange(n) * (RANGE_PERIOD / n)


# ---------------------------------------------------------------------------
# Covariance and subspaces
# ---------------------------------------------------------------------------

def domain_vectors(cube: EchoCube, domain: str, index: int, time_index: int = 0) -> np.ndarray:
    """Snapshot vectors as columns: ``U x L`` for a fixed subcarrier (``"w"``),
    ``W' x L`` for a fixed mode (``"u"``)."""
    if cube.data.size == 0:
        raise ImagingError("empty cube")
    if domain == "w":
        return cube.data[:, index, time_index, :]
    if domain == "u":
        return cube.data[index, :, time_index, :]
    raise ImagingError(f"unknown domain {domain!r}")


def sample_covariance(cube: EchoCube, domain: str, index: int, time_index: int = 0) -> np.ndarray:
    x = domain_vectors(cube, domain, index, time_index)
    dim, n = x.shape
    if n < dim:
        warnings.warn(f"{n} snapshots for a {dim}-dimensional covariance", RuntimeWarning)
    cov = x @ x.conj().T / n
    return 0.5 * (cov + cov.conj().T)


def noise_subspace(cov, signal_dim: int, loading: float = LOADING) -> np.ndarray:
    cov = np.asarray(cov, dtype=complex)
    dim = cov.shape[0]
    if not 0 < signal_dim < dim:
        raise ImagingError(f"signal dimension {signal_dim} must lie in [1, {dim - 1}]")
    if loading:
        cov = cov + loading * np.real(np.trace(cov)) / dim * np.eye(dim)
    _, vecs = hermitian_evd(cov)
    return vecs[:, signal_dim:]


def signal_strength(cov, signal_dim: int) -> float:
    """Ratio of the smallest signal eigenvalue to the mean noise eigenvalue."""
    vals, _ = hermitian_evd(cov)
    noise = max(float(np.mean(vals[signal_dim:])), 1e-300)
    return float(vals[signal_dim - 1] / noise)


# ---------------------------------------------------------------------------
# Steering vectors
# ---------------------------------------------------------------------------

def steering_mode_domain(cfg: OamSystemConfig, w: int, theta, phi) -> np.ndarray:
    """``a_w(theta, phi)``; trailing axes follow the broadcast of ``theta, phi``."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    x = cfg.wavenumbers[w] * cfg.radius * np.sin(theta)
    jl = bessel_orders(cfg.modes, x)
    ell = cfg.modes.reshape((-1,) + (1,) * theta.ndim)
    return np.exp(1j * ell * phi[None]) * jl


def steering_freq_domain(cfg: OamSystemConfig, u: int, r, theta) -> np.ndarray:
    """``b_u(r, theta)``; trailing axes follow the broadcast of ``r, theta``."""
    r, theta = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
    ks = cfg.wavenumbers.reshape((-1,) + (1,) * r.ndim)
    x = ks * cfg.radius * np.sin(theta)[None]
    ell = int(cfg.modes[u])
    jl = bessel_orders([ell], x)[0]
    j0 = bessel_table(0, x)[0]
    return np.exp(2j * ks * r[None]) * jl * j0


def _separable_denominator(qn, amp, phase, normalize=False):
    # a[n, i, j] = amp[n, i] * phase[n, j];  returns ||Qn^H a||^2 over (i, j)
    c = amp.T[:, None, :] * qn.conj().T[None, :, :]          # (i, d, n)
    d = c.reshape(-1, qn.shape[0]) @ phase                     # (i*d, j)
    d = d.reshape(amp.shape[1], qn.shape[1], phase.shape[1])
    den = np.sum(np.abs(d) ** 2, axis=1)
    if normalize:
        # |phase| = 1, so ||a||^2 depends on the amplitude axis only
        norm = np.sum(np.abs(amp) ** 2, axis=0)
        den = den / np.maximum(norm, 1e-300)[:, None]
    return den


def _finalize(den, axis1, axis2, periods):
    tiny = 1.0 / SATURATION
    saturated = bool(np.any(den <= tiny))
    vals = 1.0 / np.maximum(den, tiny)
    return MusicSpectrum(axis1=axis1, axis2=axis2, values=vals, periods=periods,
                         saturated=saturated)


def music_spectrum(qn, steering, axis1, axis2, periods=(None, None)) -> MusicSpectrum:
    """Generic MUSIC spectrum ``1 / ||Qn^H a||^2`` over a 2-D grid.

    ``steering(a1, a2)`` receives meshgrid arrays and returns vectors along
    the first axis.
    """
    axis1, axis2 = np.asarray(axis1, float), np.asarray(axis2, float)
    if axis1.size == 0 or axis2.size == 0:
        raise ImagingError("empty search grid")
    g1, g2 = np.meshgrid(axis1, axis2, indexing="ij")
    a = steering(g1, g2)
    proj = np.tensordot(np.asarray(qn).conj().T, a, axes=1)
    den = np.sum(np.abs(proj) ** 2, axis=0)
    return _finalize(den, axis1, axis2, periods)


def mode_domain_spectrum(cfg, qn, w, thetas, phis, normalize=False) -> MusicSpectrum:
    """Fast ``P_w(theta, phi)`` using the separable Bessel/phase structure.

    With ``normalize`` the denominator is divided by ``||a||^2``.
    """
    thetas, phis = np.asarray(thetas, float), np.asarray(phis, float)
    amp = bessel_orders(cfg.modes, cfg.wavenumbers[w] * cfg.radius * np.sin(thetas))
    phase = np.exp(1j * np.outer(cfg.modes, phis))
    den = _separable_denominator(qn, amp, phase, normalize)
    return _finalize(den, thetas, phis, (None, 2 * np.pi))


def freq_domain_spectrum(cfg, qn, u, ranges, thetas, normalize=False) -> MusicSpectrum:
    """Fast ``P_u(r, theta)`` over wrapped range and elevation."""
    ranges, thetas = np.asarray(ranges, float), np.asarray(thetas, float)
    x = np.outer(cfg.wavenumbers, cfg.radius * np.sin(thetas))
    amp = bessel_orders([int(cfg.modes[u])], x)[0] * bessel_table(0, x)[0]
    phase = np.exp(2j * np.outer(cfg.wavenumbers, ranges))
    den = _separable_denominator(qn, amp, phase, normalize).T
    return _finalize(den, ranges, thetas, (RANGE_PERIOD, None))


# ---------------------------------------------------------------------------
# Peak search and association
# ---------------------------------------------------------------------------

def _neighbour(vals, shift, axis, periodic):
    out = np.roll(vals, shift, axis=axis)
    if not periodic:
        idx = [slice(None)] * vals.ndim
        idx[axis] = 0 if shift == 1 else -1
        out[tuple(idx)] = -np.inf
    return out


def _parabolic(ym, y0, yp):
    den = ym - 2 * y0 + yp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


def peak_search(spectrum: MusicSpectrum, n_peaks: int) -> PeakList:
    """Largest strict 8-neighbour local maxima, refined by a parabola per axis."""
    if n_peaks < 1:
        raise ImagingError("n_peaks must be >= 1")
    v = spectrum.values
    p1, p2 = (p is not None for p in spectrum.periods)
    is_max = np.ones(v.shape, dtype=bool)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 == 0 and s2 == 0:
                continue
            nb = v
            if s1:
                nb = _neighbour(nb, s1, 0, p1)
            if s2:
                nb = _neighbour(nb, s2, 1, p2)
            is_max &= v > nb
    i1, i2 = np.nonzero(is_max)
    order = np.argsort(-v[i1, i2], kind="stable")[:n_peaks]
    points, values = [], []
    n1, n2 = v.shape
    for k in order:
        a, b = i1[k], i2[k]
        coords = []
        for axis, (idx, n, per, grid) in enumerate(((a, n1, p1, spectrum.axis1),
                                                     (b, n2, p2, spectrum.axis2))):
            lo, hi = idx - 1, idx + 1
            if not per and (lo < 0 or hi >= n) or n < 3:
                coords.append(float(grid[idx]))
                continue
            if axis == 0:
                ym, y0, yp = v[lo % n, b], v[a, b], v[hi % n, b]
            else:
                ym, y0, yp = v[a, lo % n], v[a, b], v[a, hi % n]
            # interpolate in log domain: MUSIC peaks are close to Lorentzian/Gaussian
            off = _parabolic(np.log(ym), np.log(y0), np.log(yp))
            step = grid[1] - grid[0]
            x = float(grid[idx] + off * step)
            period = spectrum.periods[axis]
            if period is not None:
                x = x % period
            coords.append(x)
        points.append(tuple(coords))
        values.append(float(v[a, b]))
    return PeakList(points=points, values=values, shortfall=len(points) < n_peaks)


def _wrapped_diff(a, b, period):
    d = a - b
    if period is not None:
        d = (d + period / 2) % period - period / 2
    return d


def associate_peaks(reference, candidates, scales=(1.0, 1.0), periods=(None, None)):
    """Greedy nearest-neighbour matching of each candidate list to ``reference``.

    Returns, for every candidate list, an index array ``m`` such that
    ``candidates[j][m[i]]`` is matched to ``reference[i]`` (``-1`` if none).
    """
    ref = np.atleast_2d(np.asarray(reference, float))
    out = []
    for cand in candidates:
        c = np.atleast_2d(np.asarray(cand, float))
        match = np.full(ref.shape[0], -1, dtype=int)
        if c.size == 0 or ref.size == 0:
            out.append(match)
            continue
        dist = np.zeros((ref.shape[0], c.shape[0]))
        for ax in range(ref.shape[1]):
            d = _wrapped_diff(ref[:, ax][:, None], c[:, ax][None, :], periods[ax])
            dist += (d / scales[ax]) ** 2
        dist = dist.copy()
        for _ in range(min(dist.shape)):
            i, j = np.unravel_index(np.argmin(dist), dist.shape)
            if not np.isfinite(dist[i, j]):
                break
            match[i] = j
            dist[i, :] = np.inf
            dist[:, j] = np.inf
        out.append(match)
    return out


# ---------------------------------------------------------------------------
# Algorithm driver
# ---------------------------------------------------------------------------

def refine_peak(fn, center, steps, refine: int, span: int = 1, periods=(None, None)):
    """Re-evaluate a spectrum ``refine`` times finer within ``span`` coarse
    cells of ``center``; returns the refined location and its value."""
    offs = np.arange(-span * refine, span * refine + 1) / refine
    a1 = center[0] + steps[0] * offs
    a2 = center[1] + steps[1] * offs
    if periods[0] is None:
        a1 = a1[a1 > 0]
    spec = fn(a1, a2)
    v = spec.values
    i, j = np.unravel_index(np.argmax(v), v.shape)
    p = [float(a1[i]), float(a2[j])]
    # one parabolic step per axis in the log domain
    if 0 < i < a1.size - 1:
        p[0] += _parabolic(*np.log(v[i - 1:i + 2, j])) * (a1[1] - a1[0])
    if 0 < j < a2.size - 1:
        p[1] += _parabolic(*np.log(v[i, j - 1:j + 2])) * (a2[1] - a2[0])
    p = [p[k] % periods[k] if periods[k] else p[k] for k in range(2)]
    return tuple(p), float(v[i, j])


@dataclass
class DomainPeaks:
    domain: str
    index: int
    points: list
    values: list
    shortfall: bool
    strength: float


@dataclass
class ImagingReport:
    estimates: list
    mode_peaks: list = field(default_factory=list)
    freq_peaks: list = field(default_factory=list)
    shortfall: bool = False
    references: list = field(default_factory=list)

    def spectrum_rows(self):
        rows = []
        for dp in self.mode_peaks + self.freq_peaks:
            for k, (pt, val) in enumerate(zip(dp.points, dp.values)):
                rows.append((dp.domain, dp.index, k, pt[0], pt[1], val))
        return rows


def _circular_mean(values, period, ref):
    d = _wrapped_diff(np.asarray(values), ref, period)
    return float((ref + np.mean(d)) % period)


def unwrap_range(wrapped: float, cue: float) -> float:
    n = np.round((cue - wrapped) / RANGE_PERIOD)
    return float(wrapped + n * RANGE_PERIOD)


def joint_steering(cfg, r, theta, phi) -> np.ndarray:
    """Full ``U x W`` steering ``e^{i2kr} e^{il phi} J_l J_0`` flattened row-major."""
    x = cfg.wavenumbers * cfg.radius * np.sin(theta)
    jl = bessel_orders(cfg.modes, x)
    j0 = bessel_table(0, x)[0]
    v = (np.exp(1j * cfg.modes * phi)[:, None] * jl * (j0 * np.exp(2j * cfg.wavenumbers * r))[None])
    return v.ravel()


def joint_signal_subspace(cube: EchoCube, qp: int, time_index: int = 0) -> np.ndarray:
    """Dominant ``qp`` left singular vectors of the stacked ``UW x L`` snapshots."""
    x = cube.data[:, :, time_index, :].reshape(-1, cube.data.shape[3])
    u, _, _ = np.linalg.svd(x, full_matrices=False)
    return u[:, :qp]


def joint_fit_grid(cfg, qs, thetas, n_phi: int, n_r: int, batch: int = 16) -> np.ndarray:
    """Joint subspace fit ``||Qs^H v||^2 / ||v||^2`` on a ``theta x phi x r`` grid.

    ``phi`` runs over ``2 pi n / n_phi`` and wrapped range over ``pi m / n_r``;
    both are integer-frequency sums, so every elevation costs one 2-D FFT
    per signal vector.
    """
    thetas = np.asarray(thetas, float)
    U, W = cfg.n_modes, cfg.n_subcarriers
    qp = qs.shape[1]
    x = np.outer(np.sin(thetas), cfg.wavenumbers * cfg.radius)          # (T, W)
    amp = bessel_orders(cfg.modes, x) * bessel_table(0, x)[0][None]      # (U, T, W)
    amp = np.moveaxis(amp, 1, 0)                                         # (T, U, W)
    norm = np.sum(amp ** 2, axis=(1, 2))
    q = qs.conj().T.reshape(qp, U, W)
    iu = (cfg.modes % n_phi)[:, None]
    iw = (np.arange(W) % n_r)[None, :]
    out = np.empty((thetas.size, n_phi, n_r))
    for start in range(0, thetas.size, batch):
        sl = slice(start, start + batch)
        b = amp[sl, None] * q[None]                                      # (t, qp, U, W)
        g = np.zeros(b.shape[:2] + (n_phi, n_r), dtype=complex)
        g[:, :, iu, iw] = b
        f = np.fft.ifft2(g) * (n_phi * n_r)
        out[sl] = np.sum(np.abs(f) ** 2, axis=1) / np.maximum(norm[sl], 1e-300)[:, None, None]
    return out


def joint_fit(cfg, qs, r, theta, phi) -> np.ndarray:
    """Joint subspace fit at scattered points (broadcast arrays)."""
    r, theta, phi = np.broadcast_arrays(*(np.asarray(a, float) for a in (r, theta, phi)))
    shape = r.shape
    r, theta, phi = r.ravel(), theta.ravel(), phi.ravel()
    x = np.outer(cfg.wavenumbers * cfg.radius, np.sin(theta))              # (W, n)
    amp = bessel_orders(cfg.modes, x) * bessel_table(0, x)[0][None]        # (U, W, n)
    v = (amp * np.exp(1j * np.outer(cfg.modes, phi))[:, None, :]
         * np.exp(2j * np.outer(cfg.wavenumbers, r))[None])
    v = v.reshape(-1, r.size)
    fit = np.sum(np.abs(qs.conj().T @ v) ** 2, axis=0) / np.maximum(np.sum(np.abs(v) ** 2, axis=0), 1e-300)
    return fit.reshape(shape)


def _local_maxima_3d(vals, periodic):
    # a separable 3x3x3 maximum filter finds the candidates cheaply; strictness
    # against all 26 neighbours is then checked on those few points only
    top = vals
    for axis in range(3):
        top = np.maximum(top, np.maximum(_neighbour(top, 1, axis, periodic[axis]),
                                         _neighbour(top, -1, axis, periodic[axis])))
    cand = np.nonzero(vals >= top)
    keep = np.ones(cand[0].size, dtype=bool)
    for shift in np.ndindex(3, 3, 3):
        s = np.array(shift) - 1
        if not s.any():
            continue
        inside = np.ones_like(keep)
        idx = []
        for axis, n in enumerate(vals.shape):
            j = cand[axis] + s[axis]
            if periodic[axis]:
                j = j % n
            else:
                inside &= (j >= 0) & (j < n)
                j = np.clip(j, 0, n - 1)
            idx.append(j)
        keep &= ~inside | (vals[cand] > vals[tuple(idx)])
    return tuple(c[keep] for c in cand)


def detect_scatterers(cfg, qs, qp: int, grid: SearchGrid, n_phi: int = 360,
                      oversample: int = 6):
    """Reference ``(r_wrapped, theta, phi)`` points from the joint subspace fit.

    Local maxima of the coarse joint fit are polished by three nested local
    grids and the ``qp`` best distinct ones are kept.  Returns the points, their
    fit values and a shortfall flag.
    """
    thetas = grid.theta_axis()
    n_r = max(int(np.ceil(RANGE_PERIOD / grid.r_step)) * 2, cfg.n_subcarriers)
    fit = joint_fit_grid(cfg, qs, thetas, n_phi, n_r)
    it, ip, ir = _local_maxima_3d(fit, (False, True, True))
    # elevation sidelobes sit about a degree apart at nearly full fit, so even a
    # single scatterer needs a few candidates to keep its true lobe
    order = np.argsort(-fit[it, ip, ir], kind="stable")[: max(oversample * qp, MIN_CANDIDATES)]
    cells = (grid.theta_step, 2 * np.pi / n_phi, RANGE_PERIOD / n_r)
    found = []
    for k in order:
        c = np.array([thetas[it[k]], 2 * np.pi * ip[k] / n_phi, RANGE_PERIOD * ir[k] / n_r])
        span = np.array(cells)
        for _ in range(3):
            offs = np.linspace(-1.0, 1.0, 9)
            g = list(np.meshgrid(*(c[a] + span[a] * offs for a in range(3)), indexing="ij"))
            g[0] = np.clip(g[0], grid.theta_min, grid.theta_max)
            vals = joint_fit(cfg, qs, g[2], g[0], g[1])
            idx = np.unravel_index(np.argmax(vals), vals.shape)
            c = np.array([g[a][idx] for a in range(3)])
            span = span / 4.0
        val = float(np.max(vals))
        point = (float(c[2] % RANGE_PERIOD), float(c[0]), float(c[1] % (2 * np.pi)))
        found.append((val, point))
    # greedy selection on the part of each candidate not explained by the
    # points already chosen: an ambiguity that is nearly a combination of true
    # steering vectors loses its score once those are selected
    found.sort(key=lambda t: -t[0])
    vecs = [joint_steering(cfg, p[0], p[1], p[2]) for _, p in found]
    refs, values, chosen = [], [], []
    while len(refs) < qp:
        best, best_score = -1, -np.inf
        basis = np.array([vecs[c] for c in chosen]).T if chosen else None
        for k, (val, p) in enumerate(found):
            if k in chosen or any(_same_cell(p, q, cells) for q in refs):
                continue
            v = vecs[k]
            if basis is not None:
                coef, *_ = np.linalg.lstsq(basis, v, rcond=None)
                v = v - basis @ coef
            nv = np.vdot(v, v).real
            if nv <= 1e-12 * np.vdot(vecs[k], vecs[k]).real:
                continue
            score = np.sum(np.abs(qs.conj().T @ v) ** 2) / nv
            if score > best_score:
                best, best_score = k, score
        if best < 0:
            break
        chosen.append(best)
        refs.append(found[best][1])
        values.append(found[best][0])
    return refs, values, len(refs) < qp


def _same_cell(p, q, cells):
    return (abs(_wrapped_diff(p[0], q[0], RANGE_PERIOD)) < cells[2]
            and abs(p[1] - q[1]) < cells[0]
            and abs(_wrapped_diff(p[2], q[2], 2 * np.pi)) < cells[1])


def _per_index_peaks(cfg, cube, qp, grid, domain, refs, shortfall, time_index):
    count = cfg.n_subcarriers if domain == "w" else cfg.n_modes
    subs = cube.subcarriers if cube.subcarriers is not None else np.arange(cfg.n_subcarriers)
    if domain == "u" and len(subs) != cfg.n_subcarriers:
        raise ImagingError("frequency-domain MUSIC needs every subcarrier")
    out = []
    for idx in range(count):
        cov = sample_covariance(cube, domain, idx, time_index)
        qn = noise_subspace(cov, qp)
        if domain == "w":
            fn = lambda a, b, w=int(subs[idx]): mode_domain_spectrum(cfg, qn, w, a, b)
            centers = [(th, ph) for _, th, ph in refs]
            steps, periods = (grid.theta_step, grid.phi_step), (None, 2 * np.pi)
        else:
            fn = lambda a, b, u=idx: freq_domain_spectrum(cfg, qn, u, a, b)
            centers = [(r, th) for r, th, _ in refs]
            steps, periods = (grid.r_step, grid.theta_step), (RANGE_PERIOD, None)
        pts, vals = [], []
        for c in centers:
            p, v = refine_peak(fn, c, steps, grid.refine, 1, periods)
            pts.append(p)
            vals.append(v)
        order = np.argsort(vals)[::-1]
        out.append(DomainPeaks(domain, idx, [pts[k] for k in order], [vals[k] for k in order],
                               shortfall, signal_strength(cov, qp)))
    return out


def estimate_positions(cube: EchoCube, cfg: OamSystemConfig, qp: int, grid: SearchGrid = None,
                       cues=None, time_index: int = 0) -> ImagingReport:
    """Joint mode/frequency-domain MUSIC position estimates for ``qp`` scatterers.

    Scatterers are detected and paired across the two domains on the joint
    ``UW``-dimensional signal subspace.  Every subcarrier's mode-domain
    spectrum and every mode's frequency-domain spectrum is then searched
    around each detection; ``phi`` is averaged over subcarriers, range over
    modes and elevation over both.

    ``cues`` is a list of ``(coarse_range, theta, phi)`` per target; each
    scatterer is assigned to the target nearest in angle and its wrapped
    range is unwrapped next to that target's coarse range.  Without cues the
    range is reported inside ``[0, pi)``.
    """
    if grid is None:
        grid = SearchGrid()
    if qp < 1 or qp >= min(cfg.n_modes, cfg.n_subcarriers):
        raise ImagingError("need 1 <= QP < min(U, W)")
    qs = joint_signal_subspace(cube, qp, time_index)
    refs, _, shortfall = detect_scatterers(cfg, qs, qp, grid)
    mode_peaks = _per_index_peaks(cfg, cube, qp, grid, "w", refs, shortfall, time_index)
    freq_peaks = _per_index_peaks(cfg, cube, qp, grid, "u", refs, shortfall, time_index)

    m_ref = [(th, ph) for _, th, ph in refs]
    f_ref = [(r, th) for r, th, _ in refs]
    m_assoc = associate_peaks(m_ref, [dp.points for dp in mode_peaks],
                              (grid.theta_step, grid.phi_step), (None, 2 * np.pi))
    f_assoc = associate_peaks(f_ref, [dp.points for dp in freq_peaks],
                              (grid.r_step, grid.theta_step), (RANGE_PERIOD, None))
    estimates = []
    for i, (r0, th0, ph0) in enumerate(refs):
        mp = np.array([dp.points[m[i]] for dp, m in zip(mode_peaks, m_assoc) if m[i] >= 0])
        fp = np.array([dp.points[m[i]] for dp, m in zip(freq_peaks, f_assoc) if m[i] >= 0])
        phi = _circular_mean(mp[:, 1], 2 * np.pi, ph0)
        r = _circular_mean(fp[:, 0], RANGE_PERIOD, r0)
        theta = float(np.mean(np.concatenate([mp[:, 0], fp[:, 1]])))
        target = -1
        if cues is not None and len(cues):
            target = nearest_cue(theta, phi, cues)
            r = unwrap_range(r, cues[target][0])
        estimates.append(PositionEstimate(r=float(r), theta=theta, phi=phi,
                                          n_mode_peaks=mp.shape[0], n_freq_peaks=fp.shape[0],
                                          target=target))
    return ImagingReport(estimates=estimates, mode_peaks=mode_peaks, freq_peaks=freq_peaks,
                         shortfall=shortfall, references=refs)


def nearest_cue(theta, phi, cues) -> int:
    """Index of the cue whose direction is closest (great-circle) to ``(theta, phi)``."""
    u = unit_vector(theta, phi)
    dots = [float(u @ unit_vector(c[1], c[2])) for c in cues]
    return int(np.argmax(dots))
