"""Optical system configuration shared by every stage of the pipeline.

All distances are meters, all photon budgets are expected counts per
frame. Positions handed to the PSF code are object-space coordinates;
the sensor-side conversion (multiply by the magnification, divide by
the pixel pitch) happens inside the pupil-plane shift ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class OpticalConfig:
    """Microscope and camera constants.

    na - numerical aperture of the objective.
    n_medium - refractive index of the immersion medium; must exceed na
        so the defocus square root stays real over the pupil.
    wavelength - emission wavelength in meters.
    magnification - total lateral magnification onto the sensor.
    focal_length - focal length of the relay (4f) lens in meters.
    pixel_pitch - sensor pixel pitch in meters.
    grid - pixels per side of the simulated sensor patch and of the
        pupil mask; a power of two (the PSF code FFTs a 2x padded grid).
    signal_photons - expected photons per frame from the emitter.
    background_fraction - fraction of the photon budget attributable to
        uniform background.
    """

    na: float
    n_medium: float
    wavelength: float
    magnification: float
    focal_length: float
    pixel_pitch: float
    grid: int
    signal_photons: float = 5000.0
    background_fraction: float = 0.01
    pixel_fill: float = 1.0
    aberration_spherical: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.na < self.n_medium:
            raise ValueError(
                f"need 0 < na < n_medium, got na={self.na}, n_medium={self.n_medium}"
            )
        if not _is_power_of_two(self.grid):
            raise ValueError(f"grid must be a positive power of two, got {self.grid}")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError(
                f"background_fraction must be in [0, 1), got {self.background_fraction}"
            )
        for name in ("wavelength", "magnification", "focal_length", "pixel_pitch"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.signal_photons <= 0.0:
            raise ValueError("signal_photons must be positive")
        if not 0.0 <= self.pixel_fill <= 1.0:
            raise ValueError("pixel_fill must lie in [0, 1]")
        if abs(self.aberration_spherical) > 20.0:
            raise ValueError("aberration_spherical is radians of balanced "
                             "primary spherical; |coeff| > 20 is unphysical")

    @classmethod
    def default(cls, grid: int = 64, **overrides) -> "OpticalConfig":
        """Reference high-NA oil-immersion setup.

        Note on sampling: the PSF simulation inscribes the pupil in the
        FFT plane, which by itself would put one pixel at
        wavelength * magnification / (4 * na) on the sensor (about
        10.9 um here). The default pitch below is the physical sensor's
        coarser 49.58 um, so rendered PSFs are wider in declared meters
        than the diffraction limit; positions, bounds and tracking
        errors all share that calibration, so comparisons between masks
        are unaffected.
        """
        return cls(
            na=overrides.pop("na", 1.4),
            n_medium=overrides.pop("n_medium", 1.518),
            wavelength=overrides.pop("wavelength", 550e-9),
            magnification=overrides.pop("magnification", 111.11),
            focal_length=overrides.pop("focal_length", 0.150),
            pixel_pitch=overrides.pop("pixel_pitch", 49.58e-6),
            grid=grid,
            **overrides,
        )

    def with_(self, **overrides) -> "OpticalConfig":
        return replace(self, **overrides)

    @property
    def object_pixel(self) -> float:
        """Object-plane size of one sensor pixel, meters."""
        return self.pixel_pitch / self.magnification

    @property
    def beta_pixel(self) -> float:
        """Uniform background rate per pixel, photons per frame."""
        return self.background_fraction * self.signal_photons / self.grid**2

    @property
    def psf_photons(self) -> float:
        """Photons carried by the PSF of a lossless mask per frame."""
        return self.signal_photons * (1.0 - self.background_fraction)

    def to_dict(self) -> dict:
        return {
            "na": self.na,
            "n_medium": self.n_medium,
            "wavelength": self.wavelength,
            "magnification": self.magnification,
            "focal_length": self.focal_length,
            "pixel_pitch": self.pixel_pitch,
            "grid": self.grid,
            "signal_photons": self.signal_photons,
            "background_fraction": self.background_fraction,
            "pixel_fill": self.pixel_fill,
            "aberration_spherical": self.aberration_spherical,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpticalConfig":
        return cls(**{k: (int(v) if k == "grid" else v) for k, v in d.items()})
