import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambiup.ambi import (AmbisonicSignal, DecoderError, acn_index, acn_to_lm, decode,
                         encode_point_source, grid_sh_matrix, pseudoinverse_decoder,
                         quadrature_error, real_sh, sampling_decoder, sh_matrix, sn3d_to_n3d)
from ambiup.grids import Direction, GridLayout, fibonacci_grid, icosahedral_design
from ambiup.scene import pink_noise
from oracles import sh_sn3d_mp

azimuths = st.floats(-np.pi, np.pi, exclude_max=True)
elevations = st.floats(-np.pi / 2, np.pi / 2)


@pytest.mark.parametrize("l,m,expected", [(0, 0, 0), (1, -1, 1), (1, 0, 2), (1, 1, 3),
                                          (3, 3, 15)])
def test_acn_index_examples(l, m, expected):
    assert acn_index(l, m) == expected


def test_acn_index_is_bijective():
    L = 6
    idx = [acn_index(l, m) for l in range(L + 1) for m in range(-l, l + 1)]
    assert sorted(idx) == list(range((L + 1) ** 2))
    assert all(acn_index(*acn_to_lm(c)) == c for c in idx)


@pytest.mark.parametrize("l,m", [(1, 2), (0, -1), (-1, 0)])
def test_acn_index_rejects_invalid(l, m):
    with pytest.raises(ValueError):
        acn_index(l, m)


@pytest.mark.parametrize("az,el,expected", [
    (0.0, 0.0, [1, 0, 0, 1]),
    (np.pi / 2, 0.0, [1, 1, 0, 0]),
    (0.0, np.pi / 2, [1, 0, 1, 0]),
])
def test_first_order_axes(az, el, expected):
    np.testing.assert_allclose(real_sh(1, Direction(az, el)), expected, atol=1e-15)


def test_order3_matches_high_precision_oracle():
    d = Direction(0.7, 0.3)
    np.testing.assert_allclose(real_sh(3, d), sh_sn3d_mp(3, 0.7, 0.3), rtol=0, atol=1e-14)


def test_higher_order_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        az, el = rng.uniform(-np.pi, np.pi), np.arcsin(rng.uniform(-1, 1))
        np.testing.assert_allclose(sh_matrix(7, az, el), sh_sn3d_mp(7, az, el), atol=1e-12)


def test_low_orders_are_bitwise_prefixes():
    rng = np.random.default_rng(0)
    az, el = rng.uniform(-np.pi, np.pi, 50), rng.uniform(-1.5, 1.5, 50)
    full = sh_matrix(3, az, el)
    assert np.array_equal(sh_matrix(1, az, el), full[:, :4])
    assert np.array_equal(sh_matrix(2, az, el), full[:, :9])


@settings(max_examples=200, deadline=None)
@given(azimuths, elevations)
def test_sh_bounded_and_omni_exact(az, el):
    y = real_sh(3, Direction(az, el))
    assert y[0] == 1.0
    assert np.all(np.abs(y) <= 1.0 + 1e-12)
    assert len(y) == 16


@settings(max_examples=100, deadline=None)
@given(azimuths, elevations, st.floats(-np.pi, np.pi))
def test_rotation_about_z(az, el, delta):
    base = sh_matrix(3, az, el)
    rotated = sh_matrix(3, az + delta, el)
    expected = base.copy()
    for l in range(4):
        for m in range(1, l + 1):
            c, s = base[acn_index(l, m)], base[acn_index(l, -m)]
            expected[acn_index(l, m)] = np.cos(m * delta) * c - np.sin(m * delta) * s
            expected[acn_index(l, -m)] = np.sin(m * delta) * c + np.cos(m * delta) * s
    np.testing.assert_allclose(rotated, expected, atol=1e-12)


def test_encode_impulse_front():
    x = np.zeros(8)
    x[0] = 1.0
    sig = encode_point_source(x, Direction(0, 0), 1)
    expected = np.zeros((4, 8))
    expected[0, 0] = expected[3, 0] = 1.0
    np.testing.assert_allclose(sig.data, expected, atol=1e-15)


def test_encode_zero_gain():
    sig = encode_point_source(np.ones(16), Direction(1.0, 0.2), 3, gain=0.0)
    assert not np.any(sig.data)


def test_encode_pink_burst_is_per_sample_scaling():
    burst = pink_noise(0.25, 48000, seed=1)
    d = Direction(np.pi / 4, 0.0)
    sig = encode_point_source(burst, d, 3)
    coeffs = sh_sn3d_mp(3, np.pi / 4, 0.0)
    for c in range(16):
        for t in range(0, len(burst), 997):
            assert sig.data[c, t] == pytest.approx(coeffs[c] * burst[t], abs=1e-15)


def test_encode_rejects_empty():
    with pytest.raises(ValueError):
        encode_point_source(np.array([]), Direction(0, 0), 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), azimuths, elevations)
def test_encode_linearity(a, b, az, el):
    rng = np.random.default_rng(7)
    s1, s2 = rng.standard_normal(64), rng.standard_normal(64)
    d = Direction(az, el)
    lhs = encode_point_source(a * s1 + b * s2, d, 3).data
    rhs = a * encode_point_source(s1, d, 3).data + b * encode_point_source(s2, d, 3).data
    scale = max(np.max(np.abs(lhs)), 1e-300)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale + 1e-15


def test_ambisonic_signal_channel_count():
    with pytest.raises(ValueError):
        AmbisonicSignal(np.zeros((5, 10)), 1)


def test_single_point_sampling_decoder():
    grid = GridLayout(np.array([[1.0, 0.0, 0.0]]))
    D = sampling_decoder(grid, 0)
    assert D.shape == (1, 1)
    assert D.matrix[0, 0] == 1.0


def test_sampling_decoder_shape_reference_grid():
    D = sampling_decoder(fibonacci_grid(16382), 3)
    assert D.shape == (16382, 16)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_round_trip_peaks_at_source_point(order):
    grid = icosahedral_design()
    D = sampling_decoder(grid, order)
    Y = grid_sh_matrix(grid, order)
    feeds = Y @ D.matrix.T  # column p: feeds for a source at point p
    for p in range(len(grid)):
        energy = feeds[:, p] ** 2
        assert np.argmax(energy) == p
        assert energy[p] > np.max(np.delete(energy, p))


def test_round_trip_peaks_on_64_point_fibonacci():
    grid = fibonacci_grid(64)
    for order in (1, 3):
        D = sampling_decoder(grid, order).matrix
        Y = grid_sh_matrix(grid, order)
        energy = (D @ Y.T) ** 2
        assert np.array_equal(np.argmax(energy, axis=0), np.arange(64))


def test_pseudoinverse_equals_sampling_on_design():
    grid = icosahedral_design()
    for order in (1, 3):
        pinv = pseudoinverse_decoder(grid, order).matrix
        samp = sampling_decoder(grid, order).matrix
        assert np.max(np.abs(pinv - samp)) < 1e-9


def test_pseudoinverse_identity_on_desk_grid():
    grid = fibonacci_grid(64)
    Y = grid_sh_matrix(grid, 3)
    D = pseudoinverse_decoder(grid, 3).matrix
    np.testing.assert_allclose(D.T @ Y, np.eye(16), atol=1e-9)


def test_pseudoinverse_underdetermined():
    with pytest.raises(DecoderError):
        pseudoinverse_decoder(fibonacci_grid(3), 1)


def test_pseudoinverse_rank_deficient_reports_condition():
    # all points on the equator: Z-type harmonics vanish
    az = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    grid = GridLayout(np.stack([np.cos(az), np.sin(az), np.zeros(20)], axis=1))
    with pytest.raises(DecoderError) as info:
        pseudoinverse_decoder(grid, 1)
    assert info.value.condition_number > 1e10


def test_decode_zero_and_omni():
    grid = fibonacci_grid(10)
    D = sampling_decoder(grid, 1)
    assert not np.any(decode(AmbisonicSignal(np.zeros((4, 5)), 1), D))
    rng = np.random.default_rng(1)
    feeds = decode(AmbisonicSignal(rng.standard_normal((1, 7)), 0), sampling_decoder(grid, 0))
    assert np.all(feeds == feeds[0])


def test_decode_shape_mismatch():
    with pytest.raises(ValueError):
        decode(AmbisonicSignal(np.zeros((4, 5)), 1), sampling_decoder(fibonacci_grid(8), 3))


def test_fibonacci_grid_sizes():
    assert len(fibonacci_grid(1)) == 1
    assert len(fibonacci_grid(16382)) == 16382
    fibonacci_grid(484).validate()


def test_fibonacci_quadrature():
    assert quadrature_error(fibonacci_grid(484), 3) < 1e-2
    sizes = [484, 1000, 2500, 5000, 10000]
    errors = [quadrature_error(fibonacci_grid(n), 3) for n in sizes]
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_quadrature_single_point():
    grid = GridLayout(np.array([[1.0, 0.0, 0.0]]))
    assert quadrature_error(grid, 1) >= 1 / 3


def test_quadrature_exact_design():
    assert quadrature_error(icosahedral_design(), 3) < 1e-10


def test_sampling_decoder_gram_on_design():
    grid = icosahedral_design()
    D = sampling_decoder(grid, 3).matrix
    w = sn3d_to_n3d(3) ** 2
    np.testing.assert_allclose(D.T @ D * len(grid) / w[:, None], np.eye(16), atol=1e-12)
