import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import formula_atoms
from lrtfs.errors import ParameterError
from lrtfs.gabor import (
    GaborDictionary,
    MatrixDictionary,
    build_tight_gabor,
    load_grid,
    matrixize,
    power_iteration,
    save_grid,
    vectorize,
)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_piano_parameters():
    d = build_tight_gabor(1024, 0.5, 22050, "real")
    assert d.hop == 512
    assert d.shape[0] == 512
    assert d.num_frames == int(np.ceil(22050 / 512))
    assert d.is_tight
    assert d.norm_sq == 1.0


def test_short_window_parameters():
    d = build_tight_gabor(128, 0.5, 4000, "real")
    assert d.hop == 64 and d.shape[0] == 64


@pytest.mark.parametrize("mode", ["complex", "real"])
@pytest.mark.parametrize("win,overlap,T", [(16, 0.5, 64), (16, 0.75, 50), (12, 0.5, 40), (8, 0.5, 9)])
def test_matches_formula(mode, win, overlap, T, rng):
    d = build_tight_gabor(win, overlap, T, mode)
    atoms = formula_atoms(d)
    alpha = crandn(rng, d.shape)
    x = rng.standard_normal(T)
    expect = atoms @ vectorize(alpha)
    if mode == "real":
        expect = 2 * expect.real
    np.testing.assert_allclose(d.synthesis(alpha), expect, atol=1e-12)
    np.testing.assert_allclose(vectorize(d.analysis(x)), atoms.conj().T @ x, atol=1e-12)


def test_overlap_add_fallback_for_non_dividing_hop(rng):
    # hop 7 does not divide 12: exercises the generic overlap-add branch
    d = build_tight_gabor(12, 0.4, 40, "complex")
    assert d.num_freqs % d.hop != 0
    alpha = crandn(rng, d.shape)
    np.testing.assert_allclose(d.synthesis(alpha), formula_atoms(d) @ vectorize(alpha), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    half=st.integers(2, 16),
    overlap=st.sampled_from([0.5, 0.75]),
    extra=st.integers(0, 100),
    mode=st.sampled_from(["real", "complex"]),
    seed=st.integers(0, 2**31),
)
def test_round_trip_and_parseval(half, overlap, extra, mode, seed):
    win = 2 * half
    T = win + extra
    d = build_tight_gabor(win, overlap, T, mode)
    x = np.random.default_rng(seed).standard_normal(T)
    y = d.analysis(x)
    np.testing.assert_allclose(d.synthesis(y), x, atol=1e-12 * max(1, np.linalg.norm(x)))
    energy = np.sum(np.abs(y) ** 2)
    # real mode keeps half of a Hermitian-symmetric grid
    np.testing.assert_allclose(2 * energy if mode == "real" else energy, x @ x, rtol=1e-12)


@pytest.mark.parametrize("mode", ["complex", "real"])
def test_adjointness(mode, rng):
    d = build_tight_gabor(32, 0.5, 200, mode)
    alpha = crandn(rng, d.shape)
    x = rng.standard_normal(200)
    lhs = np.vdot(x, d.synthesis(alpha))
    rhs = np.vdot(d.analysis(x), alpha)
    if mode == "real":
        rhs = 2 * rhs.real
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_half_bin_hermitian_pairs():
    d = build_tight_gabor(16, 0.5, 64, "complex")
    atoms = formula_atoms(d)
    F = d.num_freqs
    for n in range(d.num_frames):
        for f in range(F):
            np.testing.assert_allclose(
                atoms[:, n * F + f].conj(), atoms[:, n * F + (F - 1 - f)], atol=1e-14
            )


def test_real_mode_is_positive_half_of_complex(rng):
    dc = build_tight_gabor(32, 0.5, 128, "complex")
    dr = dc.with_mode("real")
    x = rng.standard_normal(128)
    np.testing.assert_allclose(dr.analysis(x), dc.analysis(x)[: dr.shape[0]], atol=1e-13)
    full = dc.analysis(x)
    np.testing.assert_allclose(full[::-1].conj(), full, atol=1e-12)


def test_dense_norm_of_tight_frame_is_one():
    for mode in ("complex", "real"):
        m = MatrixDictionary(formula_atoms(build_tight_gabor(8, 0.5, 24, mode)),
                             build_tight_gabor(8, 0.5, 24, mode).shape, mode)
        assert m.norm_sq == pytest.approx(1.0, rel=1e-12)


def test_norm_bound_for_non_tight_frame(rng):
    window = np.hanning(16)
    d = GaborDictionary(window, 8, 48, "complex")
    assert not d.is_tight
    dense = MatrixDictionary(formula_atoms(d), d.shape, "complex")
    assert d.norm_sq >= dense.norm_sq
    assert d.norm_sq <= 1.02 * dense.norm_sq


def test_power_iteration_on_diagonal():
    diag = np.array([1.0, 3.0, 2.0, 0.5])
    est = power_iteration(lambda v: diag * v, np.ones(4), tol=1e-12)
    assert est == pytest.approx(3.0, rel=1e-9)


def test_vectorize_is_frequency_major():
    grid = np.arange(6).reshape(2, 3)
    np.testing.assert_array_equal(vectorize(grid), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(matrixize(vectorize(grid), (2, 3)), grid)


def test_grid_file_round_trip(tmp_path, rng):
    grid = crandn(rng, (4, 5))
    save_grid(tmp_path / "alpha.json", grid, signal_len=20, mode="real")
    back, header = load_grid(tmp_path / "alpha.json")
    np.testing.assert_array_equal(back, grid)
    assert header["F_rows"] == 4 and header["N"] == 5 and header["T"] == 20
    assert header["layout"] == "freq-major"
    raw = np.frombuffer((tmp_path / "alpha.bin").read_bytes(), dtype="<f8")
    assert raw[0] == grid[0, 0].real and raw[1] == grid[0, 0].imag
    assert raw[2] == grid[1, 0].real


def test_bad_arguments():
    with pytest.raises(ParameterError):
        build_tight_gabor(15, 0.5, 100)
    with pytest.raises(ParameterError):
        build_tight_gabor(16, 0.5, 10)
    with pytest.raises(ParameterError):
        build_tight_gabor(16, 1.0, 100)
    d = build_tight_gabor(16, 0.5, 64)
    with pytest.raises(ParameterError):
        d.analysis(np.zeros(63))
    with pytest.raises(ParameterError):
        d.synthesis(np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        GaborDictionary(np.ones(16), 8, 64, "hermitian")


def _hermitian_pair(rng, T, half):
    under = crandn(rng, (T, half))
    full = np.hstack([under, under.conj()])
    stacked = 2 * np.hstack([under.real, -under.imag])
    return full, stacked


def test_stacked_real_norm_is_twice_complex_norm(rng):
    for _ in range(10):
        full, stacked = _hermitian_pair(rng, 12, 5)
        L = np.linalg.norm(full, 2) ** 2
        L_A = np.linalg.norm(stacked, 2) ** 2
        assert L_A == pytest.approx(2 * L, rel=1e-10)
        # the spectra coincide up to the same factor
        ev_full = np.sort(np.linalg.eigvalsh(full @ full.conj().T))
        ev_stacked = np.sort(np.linalg.eigvalsh(stacked @ stacked.T))
        np.testing.assert_allclose(ev_stacked, 2 * ev_full, rtol=1e-9, atol=1e-9)


def test_complex_norm_over_stacked_norm_is_one_half(rng):
    # L / L_A = 1/2 with the 2[Re, -Im] stacking, so "L = 2 L_A" does not hold
    full, stacked = _hermitian_pair(rng, 10, 4)
    ratio = np.linalg.norm(full, 2) ** 2 / np.linalg.norm(stacked, 2) ** 2
    assert ratio == pytest.approx(0.5, rel=1e-10)
    # dropping the factor 2 in the stacking gives the other reading
    half_stack = stacked / 2
    assert np.linalg.norm(full, 2) ** 2 == pytest.approx(
        2 * np.linalg.norm(half_stack, 2) ** 2, rel=1e-10
    )
