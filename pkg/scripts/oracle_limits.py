"""Independent quadrature oracle for the radial norm synthesis.

Computes 4*pi * integral of s^2 * ||f_hat(s)||_s ds over [0.05, 0.6] for a
Gaussian shell profile, by adaptive quadrature, and compares Gauss-Legendre
grids at 16 and 32 nodes against it.  Run from the repository root:

    python3 scripts/oracle_limits.py
"""

import math

import numpy as np
import scipy.integrate


S_MIN, S_MAX = 0.05, 0.6
SIGMA = 0.2


def profile(s):
    return np.exp(-s * s / (2.0 * SIGMA * SIGMA))


def shell_norm_plain(s):
    # field g(s) * chi_2: no density component, ||.||_s = |g|
    return profile(s)


def shell_norm_weighted(s):
    # field g(s) * (chi_0 + chi_2): density picks up the 1/s^2 metric term
    return profile(s) * np.sqrt(2.0 + 1.0 / (s * s))


def exact(shell_norm):
    val, err = scipy.integrate.quad(
        lambda s: 4.0 * math.pi * s * s * shell_norm(s), S_MIN, S_MAX,
        epsabs=1e-14, epsrel=1e-14)
    return val, err


def gl_value(shell_norm, count):
    x, w = np.polynomial.legendre.leggauss(count)
    nodes = 0.5 * (S_MAX - S_MIN) * (x + 1.0) + S_MIN
    weights = 0.5 * (S_MAX - S_MIN) * w
    return float(np.sum(4.0 * math.pi * nodes ** 2 * weights * shell_norm(nodes)))


def main():
    for name, fn in (("plain", shell_norm_plain), ("weighted", shell_norm_weighted)):
        ref, quad_err = exact(fn)
        v16 = gl_value(fn, 16)
        v32 = gl_value(fn, 32)
        print(f"{name}: exact {ref:.12e} (quad err {quad_err:.1e})")
        print(f"  GL16 {v16:.12e}  rel err {abs(v16 - ref) / ref:.2e}")
        print(f"  GL32 {v32:.12e}  rel err {abs(v32 - ref) / ref:.2e}")
        print(f"  refinement change {abs(v32 - v16) / v16:.2e}")


if __name__ == "__main__":
    main()
