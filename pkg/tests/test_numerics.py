import mpmath
import numpy as np
import pytest

from oamradcom.numerics import (BesselInterpolator, NumericsError, bessel_j, bessel_orders,
                                hermitian_evd, pseudo_inverse, stft)


def random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a + a.conj().T


def j0_first_zero():
    """Bisection on our own J_0 between 2 and 3."""
    lo, hi = 2.0, 3.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if bessel_j(0, lo) * bessel_j(0, mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestBessel:
    def test_origin_values(self):
        assert bessel_j(0, 0.0) == 1.0
        assert bessel_j(1, 0.0) == 0.0
        assert bessel_j(-5, 0.0) == 0.0

    def test_first_zero_of_j0(self):
        assert abs(bessel_j(0, 2.404825557695773)) < 1e-9
        assert j0_first_zero() == pytest.approx(2.404825557695773, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_against_mpmath(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(200):
            n = int(rng.integers(-64, 65))
            x = float(rng.uniform(0, 300))
            ref = float(mpmath.besselj(n, x))
            assert bessel_j(n, x) == pytest.approx(ref, rel=1e-9, abs=1e-300)

    def test_parity(self):
        x = np.linspace(0.1, 250, 97)
        for n in range(1, 20):
            np.testing.assert_array_equal(bessel_j(-n, x), (-1) ** n * bessel_j(n, x))

    def test_recurrence(self):
        x = np.linspace(1.0, 300.0, 211)
        for n in range(1, 40):
            lhs = bessel_j(n - 1, x) + bessel_j(n + 1, x)
            rhs = 2 * n / x * bessel_j(n, x)
            scale = np.maximum(np.abs(lhs), np.abs(rhs))
            ok = scale > 1e-250
            assert np.all(np.abs(lhs - rhs)[ok] <= 1e-8 * scale[ok] + 1e-14)

    def test_negative_argument(self):
        assert bessel_j(3, -4.2) == pytest.approx(-bessel_j(3, 4.2), rel=1e-14)
        assert bessel_j(2, -4.2) == pytest.approx(bessel_j(2, 4.2), rel=1e-14)

    def test_orders_table_shape(self):
        out = bessel_orders([-2, 0, 3], np.ones((4, 5)))
        assert out.shape == (3, 4, 5)

    @pytest.mark.parametrize("order,x", [(65, 1.0), (0, np.inf), (0, np.nan), (0, 1001.0)])
    def test_domain_errors(self, order, x):
        with pytest.raises(NumericsError):
            bessel_j(order, x)

    def test_interpolator_matches_direct(self):
        interp = BesselInterpolator(np.arange(-9, 10), 150.0, 230.0)
        x = np.linspace(150.0, 230.0, 1001)
        direct = bessel_orders(np.arange(-9, 10), x)
        assert np.max(np.abs(interp(x) - direct)) < 1e-10

    def test_interpolator_range(self):
        interp = BesselInterpolator([0, 1], 10.0, 20.0)
        with pytest.raises(NumericsError):
            interp(np.array([25.0]))


class TestEvd:
    def test_identity(self):
        w, q = hermitian_evd(np.eye(3))
        np.testing.assert_allclose(w, [1, 1, 1])

    def test_diagonal(self):
        w, q = hermitian_evd(np.diag([1.0, 5.0, 2.0]))
        np.testing.assert_allclose(w, [5, 2, 1])
        assert np.allclose(np.abs(q), np.eye(3)[:, [1, 2, 0]])

    @pytest.mark.parametrize("n", [2, 8, 17])
    def test_reconstruction(self, rng, n):
        a = random_hermitian(rng, n)
        w, q = hermitian_evd(a)
        assert np.linalg.norm(q @ np.diag(w) @ q.conj().T - a) <= 1e-8 * np.linalg.norm(a)
        assert np.allclose(q.conj().T @ q, np.eye(n), atol=1e-10)
        assert np.all(np.diff(w) <= 0)
        assert np.sum(w) == pytest.approx(np.trace(a).real, rel=1e-10)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NumericsError):
            hermitian_evd(np.array([[1, 2], [0, 1]]))
        with pytest.raises(NumericsError):
            hermitian_evd(np.ones((2, 3)))


def penrose_ok(a, p, tol=1e-8):
    scale = max(np.linalg.norm(a), 1.0) * max(np.linalg.norm(p), 1.0)
    return (np.linalg.norm(a @ p @ a - a) <= tol * scale
            and np.linalg.norm(p @ a @ p - p) <= tol * scale
            and np.linalg.norm((a @ p).conj().T - a @ p) <= tol * scale
            and np.linalg.norm((p @ a).conj().T - p @ a) <= tol * scale)


class TestPseudoInverse:
    def test_invertible(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(pseudo_inverse(a), np.linalg.inv(a), atol=1e-12)

    def test_zero(self):
        assert pseudo_inverse(np.zeros((2, 5))).shape == (5, 2)
        assert not np.any(pseudo_inverse(np.zeros((2, 5))))

    def test_row_vector(self, rng):
        h = rng.standard_normal((1, 17)) + 1j * rng.standard_normal((1, 17))
        p = pseudo_inverse(h)
        assert np.linalg.norm(p @ h @ p - p) <= 1e-8 * np.linalg.norm(p)
        assert penrose_ok(h, p)

    def test_rank_deficient(self, rng):
        a = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 5))
        assert penrose_ok(a, pseudo_inverse(a))

    def test_unitary(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5)))
        np.testing.assert_allclose(pseudo_inverse(q), q.conj().T, atol=1e-10)

    def test_non_finite(self):
        with pytest.raises(NumericsError):
            pseudo_inverse(np.array([[np.nan, 1.0]]))


class TestStft:
    fs = 1000.0

    def tone(self, f, n=1024):
        t = np.arange(n) / self.fs
        return np.exp(2j * np.pi * f * t)

    def test_single_tone(self):
        spec = stft(self.tone(self.fs / 8), self.fs, 128, 32)
        ridge = spec.freqs[np.argmax(spec.magnitudes, axis=0)]
        np.testing.assert_allclose(ridge, self.fs / 8)
        assert spec.freqs.max() == pytest.approx(self.fs / 2)
        assert spec.freqs.min() > -self.fs / 2

    def test_zero_signal(self):
        spec = stft(np.zeros(256), self.fs, 64, 16)
        assert not np.any(spec.magnitudes)

    def test_two_tones(self):
        f1, f2 = 100.0, -230.0
        spec = stft(self.tone(f1) + 0.8 * self.tone(f2), self.fs, 128, 64)
        bin_width = spec.freqs[1] - spec.freqs[0]
        for col in spec.magnitudes.T:
            peaks = [i for i in range(1, col.size - 1) if col[i] > col[i - 1] and col[i] >= col[i + 1]]
            top = spec.freqs[sorted(peaks, key=lambda i: col[i])[-2:]]
            assert sorted(top) == pytest.approx(sorted([f1, f2]), abs=bin_width)
        # direct DFT oracle of the first frame
        from oamradcom.numerics import stft_window
        frame = (self.tone(f1) + 0.8 * self.tone(f2))[:128] * stft_window(128)
        direct = np.abs(np.fft.fft(frame, 512))
        k = np.round(spec.freqs / self.fs * 512).astype(int) % 512
        np.testing.assert_allclose(spec.magnitudes[:, 0], direct[k], rtol=1e-10, atol=1e-10)

    def test_frequency_shift(self):
        base = self.tone(50.0)
        shift = 4 * self.fs / (128 * 4)
        a = stft(base, self.fs, 128, 32)
        b = stft(base * self.tone(shift), self.fs, 128, 32)
        ra = a.freqs[np.argmax(a.magnitudes, axis=0)]
        rb = b.freqs[np.argmax(b.magnitudes, axis=0)]
        np.testing.assert_allclose(rb - ra, shift, atol=1e-9)

    def test_hann_window(self):
        spec = stft(self.tone(125.0), self.fs, 128, 32, window="hann")
        assert spec.freqs[np.argmax(spec.magnitudes[:, 0])] == pytest.approx(125.0)

    def test_errors(self):
        with pytest.raises(NumericsError):
            stft(np.array([]), self.fs, 4, 1)
        with pytest.raises(NumericsError):
            stft(np.ones(10), self.fs, 16, 1)
        with pytest.raises(NumericsError):
            stft(np.ones(10), self.fs, 4, 0)
