"""Differentiable mask parameterizations and the design-loss gradient.

Three families render a pupil modulation from trainable parameters:

* pixel-wise - one unconstrained scalar per grid sample; phase uses the
  raw value, amplitude squashes through a sigmoid. Off-support samples
  are masked out of the render, so their gradients vanish.
* Zernike - the first 55 Noll coefficients (radians) of a phase
  surface.
* coordinate network - a [2, 128, 128, 128, 1] MLP evaluated at the
  normalized pupil coordinates. The phase variant uses sinusoidal
  activations with frequency scale omega0 = 30 and frequency-scaled
  uniform init; the amplitude variant uses softplus activations with a
  sigmoid output so transmittance stays in (0, 1).

Phase renders stay unwrapped (radians, unbounded); wrapping only ever
happens at export so the optimizer never sees a branch cut.

The loss gradient traces the rendered mask through the PSF model and
the information assembly with the package's reverse-mode ops and checks
out against central finite differences; that comparison is this
module's load-bearing test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import OpticalConfig
from .fisher import DEFAULT_RIDGE, event_fi_upper, flashing_fi_upper
from .optics import AMPLITUDE, PHASE, Mask, PupilGrid, psf_fields
from .parallel import pairwise_sum
from .zernike import zernike_basis

OMEGA0 = 30.0
NET_WIDTHS = (2, 128, 128, 128, 1)
N_ZERNIKE = 55


class Parameterization:
    """Common surface: init parameters, render a full-grid mask image."""

    kind: str
    name: str

    def init(self, grid: PupilGrid, seed: int) -> dict:
        raise NotImplementedError

    def render_values(self, grid: PupilGrid, params: dict):
        """Full (n, n) modulation image; Var in, Var out."""
        raise NotImplementedError

    def render_mask(self, grid: PupilGrid, params: dict) -> Mask:
        values = self.render_values(grid, params)
        return Mask(kind=self.kind, values=ad.value_of(values))


@dataclass
class PixelWise(Parameterization):
    kind: str = PHASE

    @property
    def name(self):
        return f"pixel_{self.kind}"

    def init(self, grid, seed):
        # zero phase is an open aperture; zero logit is 50% transmittance
        return {"values": np.zeros((grid.n, grid.n))}

    def render_values(self, grid, params):
        vals = params["values"]
        if self.kind == AMPLITUDE:
            vals = ad.sigmoid(vals)
        return ad.mul(grid.support.astype(float), vals)


@dataclass
class Zernike(Parameterization):
    n_coeffs: int = N_ZERNIKE
    kind: str = PHASE

    def __post_init__(self):
        if self.kind != PHASE:
            raise ValueError("the Zernike parameterization is phase-only")

    @property
    def name(self):
        return "zernike"

    def init(self, grid, seed):
        return {"coeffs": np.zeros(self.n_coeffs)}

    def basis(self, grid) -> np.ndarray:
        """(n_support, n_coeffs) design matrix on the support samples."""
        b = zernike_basis(self.n_coeffs, grid.rho[grid.support],
                          grid.theta[grid.support])
        return np.ascontiguousarray(b.T)

    def render_values(self, grid, params):
        phase_sup = ad.matmul(self.basis(grid), params["coeffs"])
        return ad.scatter_support(phase_sup, grid.support)


@dataclass
class NeuralMask(Parameterization):
    """Coordinate-network mask over normalized pupil coordinates."""

    kind: str = PHASE
    widths: tuple = NET_WIDTHS
    omega0: float = OMEGA0

    @property
    def name(self):
        return f"neural_{self.kind}"

    @property
    def activation(self):
        return "sinusoidal" if self.kind == PHASE else "softplus_sigmoid"

    def init(self, grid, seed):
        rng = np.random.default_rng(seed)
        params = {}
        for layer, (n_in, n_out) in enumerate(zip(self.widths, self.widths[1:])):
            if self.kind == PHASE:
                if layer == 0:
                    bound = 1.0 / n_in
                else:
                    bound = np.sqrt(6.0 / n_in) / self.omega0
            else:
                bound = 1.0 / np.sqrt(n_in)
            params[f"w{layer}"] = rng.uniform(-bound, bound, size=(n_in, n_out))
            params[f"b{layer}"] = np.zeros(n_out)
        return params

    def forward(self, coords, params):
        """Network output per coordinate row, shape (n_points,)."""
        h = coords
        last = len(self.widths) - 2
        for layer in range(last + 1):
            z = ad.add(ad.matmul(h, params[f"w{layer}"]), params[f"b{layer}"])
            if layer == last:
                h = ad.sigmoid(z) if self.kind == AMPLITUDE else z
            elif self.kind == PHASE:
                h = ad.vsin(ad.mul(self.omega0, z))
            else:
                h = ad.softplus(z)
        return ad.vsum(h, axis=1)  # (n, 1) -> (n,)

    def render_values(self, grid, params):
        out = self.forward(grid.coords_norm, params)
        return ad.scatter_support(out, grid.support)


def make_parameterization(name: str, **kwargs) -> Parameterization:
    table = {
        "pixel_phase": lambda: PixelWise(kind=PHASE),
        "pixel_amplitude": lambda: PixelWise(kind=AMPLITUDE),
        "zernike": lambda: Zernike(**kwargs),
        "neural_phase": lambda: NeuralMask(kind=PHASE),
        "neural_amplitude": lambda: NeuralMask(kind=AMPLITUDE),
    }
    if name not in table:
        raise ValueError(f"unknown parameterization {name!r}; "
                         f"choose from {sorted(table)}")
    return table[name]()


def render_mask(parameterization: Parameterization, grid: PupilGrid,
                params: dict) -> Mask:
    return parameterization.render_mask(grid, params)


def wrap_phase(values: np.ndarray) -> np.ndarray:
    """Wrap to [-pi, pi); export-time convenience only."""
    return np.mod(values + np.pi, 2.0 * np.pi) - np.pi


def binarize_amplitude(mask: Mask, threshold: float = 0.5) -> Mask:
    """Threshold a continuous transmittance for manufactured evaluation."""
    if mask.kind != AMPLITUDE:
        raise ValueError("can only binarize amplitude masks")
    return Mask(kind=AMPLITUDE, values=(mask.values >= threshold).astype(float))


def crb_loss_fn(cfg: OpticalConfig, grid: PupilGrid, kind: str, depth_planes,
                motions, ridge: float = DEFAULT_RIDGE):
    """Design objective as a function of the rendered mask image.

    Same composition as the plain evaluator: per depth plane, the
    previous pose sits at (0, 0, z) and each motion displaces the
    current pose; per-parameter bounds are summed, averaged over
    motions, summed over planes.
    """
    beta = cfg.beta_pixel
    depth_planes = list(depth_planes)
    motions = [tuple(m) for m in motions]

    def loss(mask_values):
        plane_terms = []
        for z in depth_planes:
            h_prev, d_prev = psf_fields(cfg, grid, mask_values, kind,
                                        (0.0, 0.0, z), want_derivs=True)
            per_motion = []
            for dx, dy, dz in motions:
                h_now, d_now = psf_fields(cfg, grid, mask_values, kind,
                                          (dx, dy, z + dz), want_derivs=True)
                entries = event_fi_upper(h_prev, d_prev, h_now, d_now, beta)
                fim = ad.stack_sym(entries, 6)
                per_motion.append(ad.sqrt_diag_inv_sum(fim, ridge))
            plane_terms.append(ad.div(pairwise_sum(per_motion), len(per_motion)))
        return pairwise_sum(plane_terms)

    return loss


def flashing_loss_fn(cfg: OpticalConfig, grid: PupilGrid, kind: str,
                     depth_planes, ridge: float = DEFAULT_RIDGE):
    """Static-source (blinking emitter) design objective on the mask."""
    beta = cfg.beta_pixel
    depth_planes = list(depth_planes)

    def loss(mask_values):
        terms = []
        for z in depth_planes:
            h, derivs = psf_fields(cfg, grid, mask_values, kind, (0.0, 0.0, z),
                                   want_derivs=True)
            entries = flashing_fi_upper(h, derivs, beta)
            fim = ad.stack_sym(entries, 3)
            terms.append(ad.sqrt_diag_inv_sum(fim, ridge))
        return pairwise_sum(terms)

    return loss


def grad_loss(parameterization: Parameterization, grid: PupilGrid,
              params: dict, loss_fn):
    """Reverse-mode gradient of loss_fn(rendered mask) w.r.t. params.

    Returns (loss value, {name: gradient array}).
    """
    var_params = {k: ad.Var(v) for k, v in params.items()}
    values = parameterization.render_values(grid, var_params)
    loss = loss_fn(values)
    if not isinstance(loss, ad.Var):
        raise TypeError("loss_fn must build on the traced mask values")
    if not np.isfinite(loss.value):
        raise FloatingPointError("non-finite loss")
    names = list(params)
    grads = ad.grad(loss, [var_params[k] for k in names])
    return float(loss.value), dict(zip(names, grads))
