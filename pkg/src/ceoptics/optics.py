"""Fourier-optics PSF model for phase and amplitude pupil masks.

Geometry: the pupil circle (diameter grid/2 samples) sits centered in
the (grid x grid) FFT plane, i.e. embedded in a 2x zero-padded grid so
the squared-modulus intensity stays critically sampled. The full FFT
output is the sensor image; shifts are therefore exactly cyclic and
total intensity follows Parseval with no crop loss. One sensor pixel
corresponds to wavelength / (4 na) in the object plane under this
calibration; positions are object-space meters and map to pixels
through magnification / pixel_pitch, implemented as a linear pupil
phase ramp so lateral derivatives are analytic and sub-pixel motion
needs no interpolation.

Defocus uses the high-NA kernel phi(rho; z) = (2 pi / lambda) z
sqrt(n^2 - (na rho)^2) for object-side depth z. Detected intensity is
pinned per frame: phase-only masks carry the full photon budget,
amplitude masks are scaled by their transmitted-energy fraction so
blocking light genuinely costs signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j1

from . import autodiff as ad
from .config import OpticalConfig
from .parallel import parallel_map

MAX_DEFOCUS = 10e-6  # design-range guard on |z|, meters

PHASE = "phase"
AMPLITUDE = "amplitude"


@dataclass(frozen=True)
class PupilGrid:
    """Discretized pupil plane: geometry, support and frequency maps."""

    n: int
    rho: np.ndarray          # normalized radius, 1.0 at the pupil edge
    theta: np.ndarray        # azimuth, radians
    support: np.ndarray      # bool, rho <= 1
    ux: np.ndarray           # centered column index per sample
    uy: np.ndarray           # centered row index per sample
    freq_x: np.ndarray       # object-plane spatial frequency, cycles/m
    freq_y: np.ndarray
    defocus_rate: np.ndarray  # d(phi_defocus)/dz on support, rad/m
    n_support: int
    pixel_transfer: np.ndarray | None  # rfft2 spectrum of the pixel aperture
    static_phase: np.ndarray           # fixed system aberration, radians

    @property
    def coords_norm(self) -> np.ndarray:
        """Support-sample coordinates in [-1, 1]^2, shape (n_support, 2)."""
        half = self.n / 4.0
        return np.stack(
            [self.ux[self.support] / half, self.uy[self.support] / half], axis=1
        )


def make_pupil_grid(cfg: OpticalConfig) -> PupilGrid:
    n = cfg.grid
    idx = np.arange(n) - n // 2
    uy, ux = np.meshgrid(idx, idx, indexing="ij")
    radius = n / 4.0  # pupil inscribed in the central half of the FFT plane
    rho = np.sqrt(ux**2 + uy**2) / radius
    support = rho <= 1.0
    theta = np.arctan2(uy, ux)
    dnu = (cfg.na / cfg.wavelength) / radius
    inside = np.minimum(rho, 1.0)
    rate = (
        (2.0 * np.pi / cfg.wavelength)
        * np.sqrt(cfg.n_medium**2 - (cfg.na * inside) ** 2)
        * support
    )
    return PupilGrid(
        n=n,
        rho=rho,
        theta=theta,
        support=support,
        ux=ux.astype(float),
        uy=uy.astype(float),
        freq_x=ux * dnu,
        freq_y=uy * dnu,
        defocus_rate=rate,
        n_support=int(support.sum()),
        pixel_transfer=pixel_aperture_transfer(n, cfg.pixel_fill),
        static_phase=_balanced_spherical(cfg, inside, support, rate),
    )


def _balanced_spherical(cfg, rho_inside, support, defocus_rate) -> np.ndarray:
    """Static system aberration: primary spherical, defocus-balanced.

    Real high-NA systems carry residual spherical aberration (index
    mismatch, relay optics); it is what gives an unmasked aperture
    first-order depth sensitivity at focus. The raw Zernike surface is
    orthogonalized against the physical defocus kernel over the pupil so
    the plane of best focus stays at z = 0, then scaled to the
    configured coefficient (radians). Applied identically to every
    mask; set aberration_spherical = 0 for the ideal symmetric system.
    """
    coeff = cfg.aberration_spherical
    if coeff == 0.0:
        return np.zeros(support.shape)
    r2 = rho_inside**2
    surface = np.sqrt(5.0) * (6.0 * r2**2 - 6.0 * r2 + 1.0)
    basis = np.stack([np.ones(int(support.sum())), defocus_rate[support]], axis=1)
    target = surface[support]
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    balanced = np.zeros(support.shape)
    balanced[support] = target - basis @ coef
    balanced[support] *= 1.0 / np.sqrt(np.mean(balanced[support] ** 2))
    return coeff * balanced


def pixel_aperture_transfer(n: int, fill: float) -> np.ndarray | None:
    """rfft2 spectrum of the square pixel aperture (fill = side fraction).

    Sensor pixels integrate intensity over their area; in the cyclic
    sensor plane that is a unit-gain separable sinc transfer. None when
    fill is zero (point sampling).
    """
    if fill <= 0:
        return None
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.rfftfreq(n)[None, :]
    return np.sinc(fill * fy) * np.sinc(fill * fx)


@dataclass
class Mask:
    """Pupil modulation: phase in radians or amplitude transmittance.

    values is a full (grid x grid) image, zero outside pupil support.
    Amplitude values must lie in [0, 1].
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (PHASE, AMPLITUDE):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mask contains non-finite values")
        if self.kind == AMPLITUDE and (
            self.values.min() < -1e-12 or self.values.max() > 1.0 + 1e-12
        ):
            raise ValueError("amplitude transmittance must lie in [0, 1]")

    def validate_support(self, grid: PupilGrid):
        if self.values.shape != (grid.n, grid.n):
            raise ValueError(
                f"mask shape {self.values.shape} does not match grid {grid.n}"
            )
        if np.any(self.values[~grid.support] != 0.0):
            raise ValueError("mask has nonzero values outside pupil support")

    @classmethod
    def open_aperture(cls, grid: PupilGrid) -> "Mask":
        return cls(kind=PHASE, values=np.zeros((grid.n, grid.n)))


@dataclass
class PsfEval:
    """PSF intensity and its position derivatives at one emitter pose."""

    h: np.ndarray
    position: tuple
    dh_dx: np.ndarray | None = None
    dh_dy: np.ndarray | None = None
    dh_dz: np.ndarray | None = None

    @property
    def derivatives(self):
        return self.dh_dx, self.dh_dy, self.dh_dz


def defocus_phase(cfg: OpticalConfig, grid: PupilGrid, z: float,
                  max_defocus: float = MAX_DEFOCUS) -> np.ndarray:
    """Depth-dependent pupil phase, radians; zero outside support."""
    if cfg.na >= cfg.n_medium:
        raise ValueError("defocus root imaginary: need na < n_medium")
    if abs(z) > max_defocus:
        raise ValueError(f"|z|={abs(z):.3g} m exceeds design range {max_defocus:.3g} m")
    return z * grid.defocus_rate


def pixel_shift(cfg: OpticalConfig, x: float, y: float) -> tuple:
    """Object-space lateral position -> sensor shift in pixels."""
    s = cfg.magnification / cfg.pixel_pitch
    return x * s, y * s


def _check_position(cfg, grid, pos):
    x, y, z = pos
    sx, sy = pixel_shift(cfg, x, y)
    half = grid.n / 2.0
    if abs(sx) > half or abs(sy) > half:
        raise ValueError(
            f"position ({x:.3g}, {y:.3g}) m maps to shift ({sx:.1f}, {sy:.1f}) px, "
            f"outside the field of view (half-width {half:.0f} px)"
        )
    return sx, sy


def psf_fields(cfg, grid, mask_values, kind, pos, want_derivs=False,
               max_defocus=MAX_DEFOCUS):
    """Intensity image (and derivative images) for one emitter pose.

    mask_values may be a plain array or an autodiff Var; the return
    values are in the same algebra. This single forward serves both the
    evaluation path and the design-loss gradient path.
    """
    x, y, z = pos
    sx, sy = _check_position(cfg, grid, pos)
    n = grid.n
    ramp = 2.0 * np.pi * (grid.ux * sx + grid.uy * sy) / n
    phi_static = defocus_phase(cfg, grid, z, max_defocus) + ramp + grid.static_phase

    if kind == PHASE:
        phi = ad.add(phi_static, mask_values)
        field = ad.mul(grid.support.astype(float), ad.phase_exp(phi))
        transmitted = 1.0
    elif kind == AMPLITUDE:
        field = ad.mul(mask_values, ad.phase_exp(phi_static))
        transmitted = ad.div(ad.vsum(ad.mul(mask_values, mask_values)), grid.n_support)
    else:
        raise ValueError(f"unknown mask kind {kind!r}")

    g = ad.fft2_centered(field)
    raw = ad.abs2(g)
    if grid.pixel_transfer is not None:
        raw = ad.real_filter(raw, grid.pixel_transfer)
    raw_total = ad.vsum(raw)
    scale = ad.div(ad.mul(cfg.psf_photons, transmitted), raw_total)
    h = ad.mul(raw, scale)
    if not want_derivs:
        return h, None

    pitch_scale = cfg.magnification / cfg.pixel_pitch
    coeff_x = 2.0 * np.pi * grid.ux / n * pitch_scale
    coeff_y = 2.0 * np.pi * grid.uy / n * pitch_scale
    derivs = []
    for coeff in (coeff_x, coeff_y, grid.defocus_rate):
        g_d = ad.fft2_centered(ad.mul(field, 1j * coeff))
        raw_d = ad.mul(2.0, ad.real_mul_conj(g, g_d))
        if grid.pixel_transfer is not None:
            raw_d = ad.real_filter(raw_d, grid.pixel_transfer)
        # quotient rule through the fixed-total normalization; the
        # pinned budget makes every derivative image sum to zero
        dh = ad.sub(ad.mul(raw_d, scale), ad.mul(h, ad.div(ad.vsum(raw_d), raw_total)))
        derivs.append(dh)
    return h, tuple(derivs)


def compute_psf(cfg: OpticalConfig, grid: PupilGrid, mask: Mask, pos) -> PsfEval:
    """PSF intensity image at an emitter position, photons per pixel."""
    mask.validate_support(grid)
    h, _ = psf_fields(cfg, grid, mask.values, mask.kind, pos, want_derivs=False)
    return PsfEval(h=h, position=tuple(pos))


def psf_gradients(cfg: OpticalConfig, grid: PupilGrid, mask: Mask, pos) -> PsfEval:
    """PSF image plus analytic derivative images d h / d(x, y, z)."""
    mask.validate_support(grid)
    h, (dx, dy, dz) = psf_fields(cfg, grid, mask.values, mask.kind, pos,
                                 want_derivs=True)
    return PsfEval(h=h, position=tuple(pos), dh_dx=dx, dh_dy=dy, dh_dz=dz)


def psf_stack(cfg, grid, mask, positions, workers: int = 1) -> list:
    """PSFs at several poses; parallel map with deterministic ordering."""
    return parallel_map(lambda p: compute_psf(cfg, grid, mask, p), positions,
                        workers=workers)


def disk_transfer(n: int, emitter_diameter: float, cfg: OpticalConfig) -> np.ndarray:
    """Half-spectrum transfer function of the magnified emitter disk."""
    d_px = emitter_diameter * cfg.magnification / cfg.pixel_pitch
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.rfftfreq(n)[None, :]
    q = np.sqrt(fx**2 + fy**2)
    arg = np.pi * d_px * q
    transfer = np.ones_like(q)
    nz = arg > 0
    transfer[nz] = 2.0 * j1(arg[nz]) / arg[nz]
    return transfer


def psf_lateral_stack(cfg: OpticalConfig, grid: PupilGrid, mask: Mask, z: float,
                      x_offsets, y_offsets, emitter_diameter: float = 0.0,
                      centered: bool = True, workers: int = 1) -> np.ndarray:
    """PSFs for every (y, x) lateral combination at one depth.

    Returns shape (len(y_offsets), len(x_offsets), n, n), identical
    per-pose to compute_psf (+ blur_emitter when a diameter is given)
    but batched through one FFT call; this is the grid-search kernel of
    the position estimator. With centered=False the images stay in the
    raw FFT layout (the caller shifts its measurement once instead).
    """
    import scipy.fft as sfft

    mask.validate_support(grid)
    n = grid.n
    if mask.kind == PHASE:
        base = grid.support * np.exp(1j * mask.values)
        transmitted = 1.0
    else:
        base = mask.values.astype(complex)
        transmitted = float(np.sum(mask.values**2)) / grid.n_support
    field_z = np.fft.ifftshift(
        base * np.exp(1j * (defocus_phase(cfg, grid, z) + grid.static_phase))
    )

    sx = np.array([pixel_shift(cfg, x, 0.0)[0] for x in x_offsets])
    sy = np.array([pixel_shift(cfg, 0.0, y)[1] for y in y_offsets])
    half = grid.n / 2.0
    if np.any(np.abs(sx) > half) or np.any(np.abs(sy) > half):
        raise ValueError("lateral offset outside the field of view")
    # separable shift ramp in the unshifted pupil layout
    u = np.fft.ifftshift(np.arange(n) - n // 2)
    ramp_col = np.exp(2j * np.pi * u[None, :] * sx[:, None] / n)  # along columns
    ramp_row = np.exp(2j * np.pi * u[None, :] * sy[:, None] / n)  # along rows
    fields = (field_z[None] * ramp_row[:, :, None])[:, None] \
        * ramp_col[None, :, None, :]
    g = sfft.fft2(fields, axes=(-2, -1), workers=workers)
    raw = np.real(g * np.conj(g))
    # Parseval: the raw total is identical for every unit-modulus ramp
    total = raw[0, 0].sum()
    h = raw * (cfg.psf_photons * transmitted / total)
    transfer = grid.pixel_transfer
    if emitter_diameter > 0:
        disk = disk_transfer(n, emitter_diameter, cfg)
        transfer = disk if transfer is None else transfer * disk
    if transfer is not None:
        h = sfft.irfft2(sfft.rfft2(h, axes=(-2, -1), workers=workers) * transfer,
                        s=(n, n), axes=(-2, -1), workers=workers)
        h = np.maximum(h, 0.0)
    if centered:
        h = np.fft.fftshift(h, axes=(-2, -1))
    return h


def blur_emitter(psf: np.ndarray, emitter_diameter: float,
                 cfg: OpticalConfig) -> np.ndarray:
    """Convolve with a uniform disk of the emitter's magnified diameter.

    Cyclic FFT convolution; the zero-frequency gain is exactly one so
    total intensity is preserved.
    """
    if emitter_diameter < 0:
        raise ValueError("emitter_diameter must be >= 0")
    if emitter_diameter == 0:
        return np.array(psf, copy=True)
    transfer = disk_transfer(psf.shape[0], emitter_diameter, cfg)
    out = np.fft.irfft2(np.fft.rfft2(psf) * transfer, s=psf.shape)
    return np.maximum(out, 0.0)
