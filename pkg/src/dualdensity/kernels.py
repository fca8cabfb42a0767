"""Fixed frequency-domain filter banks: Gabor, Fourier, and Haar families.

A bank is a grid of small 2D kernels organized as N groups (one per
orientation for Gabor; one per frequency pair for Fourier) with S kernels
per group (scales, or cos/sin phases).  Banks are immutable buffers: the
network never trains them, only the pointwise convolutions downstream.

Normalization convention: every kernel has unit L2 norm; every kernel
except the Fourier DC basis is exactly zero-mean, so constant image
regions produce zero response.
"""

import math
from dataclasses import dataclass, field

import numpy as np

GABOR_ANGLES = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
GABOR_SIGMAS = (1.0, 2.0)
HAAR_VARIANTS = ("LH", "HL", "HH")
FAMILIES = ("gabor", "fourier", "haar")


@dataclass(frozen=True)
class Kernel2D:
    """One fixed [k, k] filter with its construction metadata."""

    values: np.ndarray
    family: str
    angle: float
    scale: float
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class KernelBank:
    """N groups x S kernels, all of one family and size."""

    groups: tuple
    family: str
    k: int

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def n_scales(self):
        return len(self.groups[0])

    def flat(self):
        return [kern for group in self.groups for kern in group]


def _normalize(values, *, zero_mean=True):
    v = values.astype(np.float64)
    if zero_mean:
        v = v - v.mean()
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("kernel is identically zero after normalization")
    return v / n


def make_gabor_kernel(theta, sigma, wavelength, gamma=0.5, psi=0.0, k=5,
                      normalized=True):
    """Oriented Gabor filter: Gaussian envelope times a cosine carrier.

    g(x, y) = exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) * cos(2 pi x'/lambda + psi)
    with (x', y') the (theta)-rotated coordinates, evaluated on a centered
    k x k grid, then made zero-mean and unit-L2 unless normalized=False.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    half = (k - 1) // 2
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    xr = xs * math.cos(theta) + ys * math.sin(theta)
    yr = -xs * math.sin(theta) + ys * math.cos(theta)
    envelope = np.exp(-(xr ** 2 + (gamma ** 2) * (yr ** 2)) / (2.0 * sigma ** 2))
    carrier = np.cos(2.0 * math.pi * xr / wavelength + psi)
    values = envelope * carrier
    if normalized:
        values = _normalize(values)
    meta = {"sigma": sigma, "wavelength": wavelength, "gamma": gamma,
            "psi": psi, "alpha": 1.0}
    return Kernel2D(values, "gabor", theta, sigma, meta)


def make_fourier_kernel(u, v, phase, k=5):
    """2D Fourier basis kernel cos/sin(2 pi (u x + v y) / k) on the k x k grid."""
    if not (0 <= u < k and 0 <= v < k):
        raise ValueError(f"frequencies must satisfy 0 <= u,v < k, got ({u}, {v})")
    if phase not in ("cos", "sin"):
        raise ValueError(f"phase must be 'cos' or 'sin', got {phase!r}")
    if u == 0 and v == 0 and phase == "sin":
        raise ValueError("(0, 0, sin) is identically zero")
    ys, xs = np.mgrid[0:k, 0:k].astype(np.float64)
    arg = 2.0 * math.pi * (u * xs + v * ys) / k
    values = np.cos(arg) if phase == "cos" else np.sin(arg)
    dc = u == 0 and v == 0
    values = _normalize(values, zero_mean=not dc)
    meta = {"u": u, "v": v, "phase": phase, "dc": dc}
    angle = math.atan2(v, u)
    scale = math.hypot(u, v)
    return Kernel2D(values, "fourier", angle, max(scale, 1.0), meta)


def make_haar_kernel(variant):
    """2x2 Haar detail filter; LL is deliberately excluded (not zero-mean)."""
    tables = {
        "LH": [[0.5, 0.5], [-0.5, -0.5]],
        "HL": [[0.5, -0.5], [0.5, -0.5]],
        "HH": [[0.5, -0.5], [-0.5, 0.5]],
    }
    if variant not in tables:
        raise ValueError(f"unknown haar variant {variant!r}, expected LH/HL/HH")
    values = np.array(tables[variant], dtype=np.float64)
    return Kernel2D(values, "haar", 0.0, 1.0, {"variant": variant})


def build_bank(family, *, angles=None, scales=None, k=None,
               n_groups=4, n_scales=2):
    """Construct the full N-group x S-kernel bank for one family.

    gabor: one group per angle, one kernel per sigma with wavelength = 2*sigma.
    fourier: groups are the frequency pairs (1,0), (0,1), (1,1), (1,k-1),
        each with cos and sin phases.
    haar: n_groups x n_scales slots cycling over the LH/HL/HH variants.
    """
    if angles is not None and len(angles) == 0:
        raise ValueError("angle list must not be empty")
    if scales is not None and len(scales) == 0:
        raise ValueError("scale list must not be empty")

    if family == "gabor":
        k = 5 if k is None else k
        angles = GABOR_ANGLES if angles is None else tuple(angles)
        scales = GABOR_SIGMAS if scales is None else tuple(scales)
        groups = tuple(
            tuple(make_gabor_kernel(theta, s, 2.0 * s, k=k) for s in scales)
            for theta in angles
        )
        return KernelBank(groups, "gabor", k)

    if family == "fourier":
        k = 5 if k is None else k
        pairs = ((1, 0), (0, 1), (1, 1), (1, (-1) % k))
        groups = tuple(
            tuple(make_fourier_kernel(u, v, phase, k) for phase in ("cos", "sin"))
            for (u, v) in pairs
        )
        return KernelBank(groups, "fourier", k)

    if family == "haar":
        if n_groups < 1 or n_scales < 1:
            raise ValueError("haar bank needs at least one group and one kernel")
        groups = tuple(
            tuple(make_haar_kernel(HAAR_VARIANTS[(g * n_scales + s) % 3])
                  for s in range(n_scales))
            for g in range(n_groups)
        )
        return KernelBank(groups, "haar", 2)

    raise ValueError(f"unknown kernel family {family!r}, expected one of {FAMILIES}")


SEPARATOR_PX = 2
SEPARATOR_GRAY = 0
DEGENERATE_GRAY = 128


def _quantize(values):
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, DEGENERATE_GRAY, dtype=np.uint8)
    q = np.rint((values - lo) / (hi - lo) * 255.0)
    return q.astype(np.uint8)


def _resize_nearest(img, size):
    idx = (np.arange(size) * img.shape[0]) // size
    return img[np.ix_(idx, idx)]


def render_bank_grid(bank, cell_px=64):
    """Render the bank as an N-row x S-column grayscale grid.

    Each cell is the kernel min-max quantized to [0, 255] (constant kernels
    map to mid-gray 128) and nearest-resized to cell_px; cells are divided
    by 2-px black separators.
    """
    n, s = bank.n_groups, bank.n_scales
    h = n * cell_px + SEPARATOR_PX * (n - 1)
    w = s * cell_px + SEPARATOR_PX * (s - 1)
    img = np.full((h, w), SEPARATOR_GRAY, dtype=np.uint8)
    for gi, group in enumerate(bank.groups):
        for si, kern in enumerate(group):
            cell = _resize_nearest(_quantize(kern.values), cell_px)
            r = gi * (cell_px + SEPARATOR_PX)
            c = si * (cell_px + SEPARATOR_PX)
            img[r:r + cell_px, c:c + cell_px] = cell
    return img


def bank_manifest(bank, cell_px):
    """JSON-ready description written alongside a rendered bank image."""
    return {
        "family": bank.family,
        "k": bank.k,
        "n_groups": bank.n_groups,
        "n_scales": bank.n_scales,
        "angles": [group[0].angle for group in bank.groups],
        "scales": [kern.scale for kern in bank.groups[0]],
        "cell_px": cell_px,
    }
