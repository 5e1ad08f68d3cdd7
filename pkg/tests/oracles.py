"""Independent reference computations used by the tests.

Nothing here imports the package's band or eigen machinery: band modes are
enumerated from integer lattice indices, the potential form is assembled by
direct quadrature of plane waves against the sampled field, and constants
come from generalized Hermitian eigenproblems.
"""
import itertools
import math

import numpy as np
import scipy.linalg


def band_modes(dim, n, L, a, R):
    ks = range(-n // 2 + 1, n // 2)  # Nyquist excluded
    out = []
    for k in itertools.product(ks, repeat=dim):
        xi = 2 * math.pi * np.array(k) / L
        r = float(np.linalg.norm(xi))
        if a * (1 - 1e-12) <= r <= R * (1 + 1e-12):
            out.append(xi)
    return np.array(out)


def plane_waves(dim, n, L, xis):
    x = -L / 2 + L / n * np.arange(n)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    cols = []
    for xi in xis:
        phase = sum(xi[d] * mesh[d] for d in range(dim))
        cols.append(np.exp(1j * phase).ravel() / L ** (dim / 2))
    return np.array(cols).T, (L / n) ** dim


def forms(dim, n, L, a, R, theta, field):
    xis = band_modes(dim, n, L, a, R)
    E, w = plane_waves(dim, n, L, xis)
    B = E.conj().T @ (field.ravel()[:, None] * E) * w
    B = 0.5 * (B + B.conj().T)
    mu = np.linalg.norm(xis, axis=1) ** (2 * theta)
    return mu, B


def hardy(mu, B):
    # largest eigenvalue of B v = lam diag(mu) v, inverted
    lam = scipy.linalg.eigh(B, np.diag(mu), eigvals_only=True)
    return 1.0 / lam[-1]


def delta(mu, B, mass):
    lam = scipy.linalg.eigh(B, np.diag(mu), eigvals_only=True)
    return 1.0 / (2 * mass) + lam[0]


def positivity(mu, B, mass, subtract):
    return scipy.linalg.eigvalsh(np.diag(mu / (4 * mass)) + B)[0] - subtract
