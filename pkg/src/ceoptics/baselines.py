"""Prior-art reference masks: open aperture, depth-coding phase mask,
coded binary aperture.

The two non-trivial baselines ship as small resolution-independent data
files (regeneration scripts and provenance notes live next to them):

* the phase baseline is a 55-coefficient Zernike surface obtained by
  minimizing the static-source (blinking emitter) localization bound
  over the design depth range - the same objective that produced the
  published CMOS-optimal 3D mask, so the artifact carries its defining
  property rather than a pixel digitization;
* the amplitude baseline is a coarse binary pattern selected by a
  seeded search that maximizes depth discriminability of the defocus
  blur, echoing the published coded-aperture construction.
"""

from __future__ import annotations

import importlib.resources as resources
from pathlib import Path

import numpy as np

from .config import OpticalConfig
from .fileio import read_grid
from .optics import AMPLITUDE, PHASE, Mask, PupilGrid
from .zernike import zernike_basis

BASELINE_NAMES = ("open", "fisher", "levin")


def _data_path(name: str) -> Path:
    root = resources.files("ceoptics") / "data"
    path = Path(str(root / name))
    if not path.exists():
        raise FileNotFoundError(
            f"baseline data file {name} missing; run scripts/make_baselines.py"
        )
    return path


def open_mask(grid: PupilGrid) -> Mask:
    return Mask.open_aperture(grid)


def load_fisher_coeffs() -> np.ndarray:
    """Noll-ordered Zernike coefficients of the phase baseline, radians."""
    path = _data_path("fisher_zernike.csv")
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    order = np.argsort(rows[:, 0])
    return rows[order, 1]


def fisher_mask(grid: PupilGrid) -> Mask:
    coeffs = load_fisher_coeffs()
    basis = zernike_basis(len(coeffs), grid.rho[grid.support],
                          grid.theta[grid.support])
    values = np.zeros((grid.n, grid.n))
    values[grid.support] = basis.T @ coeffs
    return Mask(kind=PHASE, values=values)


def render_coarse_amplitude(pattern: np.ndarray, grid: PupilGrid) -> Mask:
    """Nearest-neighbour upsample of a coarse cell pattern onto the pupil."""
    k = pattern.shape[0]
    radius = grid.n / 4.0
    # map [-radius, radius) across the pupil bounding box onto k cells
    cx = np.clip(((grid.ux + radius) / (2 * radius) * k), 0, k - 1).astype(int)
    cy = np.clip(((grid.uy + radius) / (2 * radius) * k), 0, k - 1).astype(int)
    values = pattern[cy, cx] * grid.support
    return Mask(kind=AMPLITUDE, values=values.astype(float))


def levin_mask(grid: PupilGrid) -> Mask:
    pattern = read_grid(_data_path("levin_pattern.ceo1"))
    return render_coarse_amplitude(pattern, grid)


def get_baseline(name: str, grid: PupilGrid) -> Mask:
    if name == "open":
        return open_mask(grid)
    if name == "fisher":
        return fisher_mask(grid)
    if name == "levin":
        return levin_mask(grid)
    raise KeyError(f"unknown baseline {name!r}; choose from {BASELINE_NAMES}")
