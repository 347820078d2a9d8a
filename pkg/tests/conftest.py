import numpy as np
import pytest


def formula_atoms(d):
    """Atoms straight from the definition, one column per (f, n), freq-major.

    ``phi_{f,n}(t) = g(tau) exp(2i pi (f + 1/2) tau / F)`` with
    ``tau = t - n*hop`` taken modulo the padded length; rows past ``T`` are
    dropped. Independent of the FFT code path.
    """
    F, N, hop = d.num_freqs, d.num_frames, d.hop
    rows = d.num_rows
    Tp, T = d.padded_len, d.signal_len
    cols = []
    for n in range(N):
        for f in range(rows):
            atom = np.zeros(Tp, dtype=complex)
            for tau in range(F):
                atom[(n * hop + tau) % Tp] += d.window[tau] * np.exp(
                    2j * np.pi * (f + 0.5) * tau / F
                )
            cols.append(atom[:T])
    return np.stack(cols, axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
