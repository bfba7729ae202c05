"""Regenerate ``src/rtvekit/_wada_table.py``.

Speech amplitude is modelled as a symmetric gamma variable (shape 0.4),
noise as unit-variance Gaussian.  For each SNR on the grid the statistic
``G = log E|z| - E log|z|`` of the mixture ``z = s + n`` is integrated
numerically.

    python tools/gen_wada_table.py > src/rtvekit/_wada_table.py
"""

import math

import numpy as np
from scipy import integrate, special

ALPHA = 0.4
SNR_GRID = np.arange(-20.0, 100.0 + 0.5, 1.0)


def mean_abs_shifted(m):
    # E|m + u|, u ~ N(0, 1)
    return math.sqrt(2.0 / math.pi) * math.exp(-0.5 * m * m) + m * math.erf(m / math.sqrt(2.0))


def mean_log_abs_shifted(m):
    # E log|m + u|, u ~ N(0, 1)
    if m > 40.0:
        # asymptotic expansion, error O(m^-6)
        return math.log(m) - 0.5 / m**2 - 0.75 / m**4
    phi = lambda u: math.log(abs(u + m)) * math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    lo, hi = -m - 12.0, -m + 12.0
    total = 0.0
    for a, b in ((-math.inf, lo), (lo, -m), (-m, hi), (hi, math.inf)):
        val, _ = integrate.quad(phi, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)
        total += val
    return total


def g_statistic(snr_db):
    theta = math.sqrt(10.0 ** (snr_db / 10.0) / (ALPHA * (ALPHA + 1.0)))
    norm = 1.0 / (ALPHA * special.gamma(ALPHA) * theta**ALPHA)

    # x = y**(1/alpha) removes the x**(alpha-1) singularity of the gamma pdf
    def weight(y):
        return norm * math.exp(-(y ** (1.0 / ALPHA)) / theta)

    y_max = (60.0 * theta) ** ALPHA
    pts = [((k * theta) ** ALPHA) for k in (0.01, 0.1, 1.0, 5.0, 20.0) if (k * theta) ** ALPHA < y_max]
    kw = dict(limit=400, epsabs=1e-12, epsrel=1e-11, points=pts)
    e_abs, _ = integrate.quad(lambda y: weight(y) * mean_abs_shifted(y ** (1.0 / ALPHA)), 0.0, y_max, **kw)
    e_log, _ = integrate.quad(lambda y: weight(y) * mean_log_abs_shifted(y ** (1.0 / ALPHA)), 0.0, y_max, **kw)
    mass, _ = integrate.quad(weight, 0.0, y_max, **kw)
    return math.log(e_abs / mass) - e_log / mass


def main():
    values = [g_statistic(s) for s in SNR_GRID]
    print('"""WADA lookup table: G statistic versus SNR (gamma shape 0.4 speech, Gaussian noise).')
    print("")
    print("Generated by tools/gen_wada_table.py; do not edit by hand.")
    print('"""')
    print("")
    print(f"SNR_DB_MIN = {SNR_GRID[0]:.1f}")
    print("SNR_DB_STEP = 1.0")
    print("")
    print("G_VALUES = (")
    for i in range(0, len(values), 4):
        print("    " + " ".join(f"{v:.8f}," for v in values[i:i + 4]))
    print(")")


if __name__ == "__main__":
    main()
