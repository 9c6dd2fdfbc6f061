"""Shared random generators for the test suite."""

import numpy as np


def rand_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.where(np.diagonal(r) < 0, -1.0, 1.0)


def rand_unitary(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r)
    return q * (np.conjugate(diag) / np.abs(diag))


def rand_spd(rng, d, lo=0.5, hi=2.0, complex_mode=False):
    lam = rng.uniform(lo, hi, d)
    u = rand_unitary(rng, d) if complex_mode else rand_orthogonal(rng, d)
    a = (u * lam) @ np.conjugate(u.T)
    return (a + np.conjugate(a.T)) / 2


def rand_hermitian(rng, d, complex_mode=False):
    a = rng.standard_normal((d, d))
    if complex_mode:
        a = a + 1j * rng.standard_normal((d, d))
    return (a + np.conjugate(a.T)) / 2


def rand_psd_singular(rng, d, rank, lo=0.5, hi=2.0):
    """Random PSD matrix of the given rank."""
    lam = np.zeros(d)
    lam[:rank] = rng.uniform(lo, hi, rank)
    u = rand_orthogonal(rng, d)
    a = (u * lam) @ u.T
    return (a + a.T) / 2
