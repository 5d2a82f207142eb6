"""Independent reference implementations used to freeze expected values.

Everything here is written the slow, obvious way (quadrature, explicit
Python loops, analytic series) and imports nothing from branchbox, so
tests can compare the package against genuinely independent numerics.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def gaussian_pdf(x, mean, sigma):
    return math.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def gaussian_interval_mass(mean, variance, lo, hi):
    """Mass of N(mean, variance) on [lo, hi] by adaptive quadrature."""
    sigma = math.sqrt(variance)
    val, _ = quad(gaussian_pdf, lo, hi, args=(mean, sigma), epsabs=1e-15, limit=200)
    return val


def lattice_bin_masses(mean, variance, bin_width, n_sigma=6.0):
    """Brute-force offspring kernel.

    Bins of width h centered at k*h; every bin intersecting the
    [mean - n_sigma*s, mean + n_sigma*s] window is integrated over the
    clipped intersection and the result renormalized.  A window edge
    exactly on a bin edge contributes that bin nothing.
    """
    sigma = math.sqrt(variance)
    lo_t, hi_t = mean - n_sigma * sigma, mean + n_sigma * sigma
    h = bin_width
    centers, masses = [], []
    k = math.floor(lo_t / h + 0.5)
    while (k - 0.5) * h < hi_t:
        lo = max((k - 0.5) * h, lo_t)
        hi = min((k + 0.5) * h, hi_t)
        if hi > lo:
            m = gaussian_interval_mass(mean, variance, lo, hi)
            if m > 0:
                centers.append(k * h)
                masses.append(m)
        k += 1
    masses = np.array(masses)
    centers = np.array(centers)
    masses = masses / masses.sum()
    keep = masses > 0
    return centers[keep], masses[keep]


def largest_remainder(weights, total):
    """Independent largest-remainder rounding, ties to the lower index."""
    weights = list(weights)
    quotas = [w * total for w in weights]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in order[: int(leftover)]:
        counts[i] += 1
    return counts


def reflected_density(x, mean, variance, L, n_images=40):
    """Gaussian density folded into [0, L] by the method of images."""
    sigma = math.sqrt(variance)
    total = 0.0
    for j in range(-n_images, n_images + 1):
        total += gaussian_pdf(x, mean + 2 * j * L, sigma)
        total += gaussian_pdf(x, -mean + 2 * j * L, sigma)
    return total


def reflected_bin_masses(mean, variance, L, k):
    """Histogram of a wall-folded Gaussian over k equal bins, by quadrature."""
    edges = np.linspace(0.0, L, k + 1)
    out = np.empty(k)
    for i in range(k):
        val, _ = quad(
            reflected_density, edges[i], edges[i + 1],
            args=(mean, variance, L), epsabs=1e-13, limit=200,
        )
        out[i] = val
    return out / out.sum()


def box_heat_density(x, x0, t, D, L, n_terms=400):
    """Diffusion Green's function with reflecting walls (cosine series)."""
    total = 1.0 / L
    for n in range(1, n_terms + 1):
        kn = n * math.pi / L
        total += (2.0 / L) * math.exp(-D * kn * kn * t) \
            * math.cos(kn * x) * math.cos(kn * x0)
    return total


def box_heat_bin_masses(x0, t, D, L, k, n_terms=400):
    """Bin masses of the reflecting-wall heat kernel at time t."""
    edges = np.linspace(0.0, L, k + 1)
    out = np.empty(k)
    for i in range(k):
        lo, hi = edges[i], edges[i + 1]
        total = (hi - lo) / L
        for n in range(1, n_terms + 1):
            kn = n * math.pi / L
            total += (2.0 / L) * math.exp(-D * kn * kn * t) * math.cos(kn * x0) \
                * (math.sin(kn * hi) - math.sin(kn * lo)) / kn
        out[i] = total
    return out


def walk_chain_masses(kernel_sites, kernel_masses, start_site, top_site, steps):
    """Reflected lattice walk, dict-based: site index -> probability mass.

    Sites run 0..top_site; a step adds a kernel offset and folds the
    result back by mirror reflection at 0 and top_site.
    """
    mass = {start_site: 1.0}
    period = 2 * top_site
    for _ in range(steps):
        nxt: dict[int, float] = {}
        for site, m in mass.items():
            for off, km in zip(kernel_sites, kernel_masses):
                j = (site + off) % period
                if j > top_site:
                    j = period - j
                nxt[j] = nxt.get(j, 0.0) + m * km
        mass = nxt
    return mass


def gaussian_channel_entropy(packet_variance, width):
    """Entropy of a pure Gaussian after position decoherence, closed form.

    The output kernel exp(-A(x^2 + x'^2) + Bxx') has a geometric
    spectrum p_n = (1 - z) z^n with z = (B/2) / (A + sqrt(A^2 - B^2/4)),
    where A = 1/(4 s2) + 1/(8 w^2) and B = 1/(4 w^2); the entropy is
    that of the geometric distribution.
    """
    a = 1.0 / (4.0 * packet_variance) + 1.0 / (8.0 * width**2)
    b = 1.0 / (4.0 * width**2)
    z = (b / 2.0) / (a + math.sqrt(a * a - b * b / 4.0))
    return -math.log(1.0 - z) - z / (1.0 - z) * math.log(z)


def gaussian_channel_entropy_grid(packet_variance, width, n=2000, half_width=12.0):
    """Same entropy by brute force: fine free-space grid, dense eigvalsh."""
    x = np.linspace(-half_width, half_width, n)
    dx = x[1] - x[0]
    psi = np.exp(-x**2 / (4.0 * packet_variance))
    psi = psi / math.sqrt(float(psi @ psi) * dx)
    rho = np.outer(psi, psi)
    rho *= np.exp(-np.subtract.outer(x, x) ** 2 / (8.0 * width**2))
    lam = np.linalg.eigvalsh(rho) * dx
    lam = lam[lam > 1e-15]
    return float(-(lam * np.log(lam)).sum())
