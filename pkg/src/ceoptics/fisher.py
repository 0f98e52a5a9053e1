"""Fisher information and Cramer-Rao bounds for event measurements.

Two regimes:

* flashing source - the previous frame is dark, the measurement reduces
  to the log intensity of one frame, and the information matrix is the
  classic Poisson form  sum_n dh_i dh_j / (h + beta)  over 3 position
  parameters.

* general two-pose measurement - the exponentiated log difference is
  the ratio of two Poisson counts, approximated by a Normal whose mean
  is nu/mu and whose variance is nu/mu^2 + nu^2/mu^3 with
  mu = h(prev) + beta, nu = h(now) + beta. Its information over the six
  parameters (x, y, z at the previous pose, then at the current pose)
  assembles per pixel as an outer product of the log-derivative vector
  weighted by three polynomials in (mu, nu):

      a = 2 mu^2 nu + 4 mu^2 + 2 mu nu^2 + 12 mu nu + 9 nu^2
      b = -(2 mu^2 nu + 2 mu^2 + 2 mu nu^2 + 7 mu nu + 6 nu^2)
      c = 2 mu^2 nu + mu^2 + 2 mu nu^2 + 4 mu nu + 4 nu^2

  divided by 2 (mu + nu)^2, with a on the prev-prev block, c on the
  now-now block and b on the cross blocks. The test suite re-derives
  these weights symbolically from the Normal model; a c - b^2 equals
  2 mu nu (mu + nu)^3 > 0, so every per-pixel term is positive
  semidefinite and so is the sum.

Background enters as a constant per-pixel rate added to both means; its
gradient contribution is zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import OpticalConfig
from .optics import Mask, PsfEval, PupilGrid, make_pupil_grid, psf_gradients
from .parallel import pairwise_sum, parallel_map

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-9

PARAM_NAMES = ("x_prev", "y_prev", "z_prev", "x_now", "y_now", "z_now")


@dataclass
class FisherMatrix:
    """Symmetric information matrix over emitter coordinates, 1/m^2."""

    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:
            raise ValueError(f"information matrix must be square, got {self.m.shape}")
        if not np.array_equal(self.m, self.m.T):
            raise ValueError("information matrix must be exactly symmetric")
        eig = np.linalg.eigvalsh(self.m)
        if eig.size and eig[0] < -1e-9 * max(eig[-1], 0.0):
            # provably PSD for positive rates; anything beyond roundoff
            # indicates an upstream inconsistency worth surfacing
            log.warning("information matrix has negative eigenvalue %.3e", eig[0])

    @property
    def dim(self) -> int:
        return self.m.shape[0]


@dataclass
class CrbResult:
    """Square-rooted diagonal of the inverse information, meters."""

    per_parameter: np.ndarray
    depth: float | None = None
    motion: tuple | None = None

    @property
    def total(self) -> float:
        return float(self.per_parameter.sum())


def ratio_moments(mu, nu):
    """Mean and variance of the Normal approximation to a Poisson ratio.

    mu is the denominator rate (previous frame), nu the numerator rate.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise ValueError("rates must be positive")
    mean = nu / mu
    var = nu / mu**2 + nu**2 / mu**3
    return mean, var


def _require_derivatives(psf: PsfEval):
    if psf.dh_dx is None or psf.dh_dy is None or psf.dh_dz is None:
        raise ValueError("PsfEval must carry all three derivative images")
    return (psf.dh_dx, psf.dh_dy, psf.dh_dz)


def fisher_flashing(psf: PsfEval, beta_pixel: float) -> FisherMatrix:
    """3x3 information for a blinking source (dark previous frame)."""
    derivs = _require_derivatives(psf)
    if beta_pixel < 0:
        raise ValueError("beta_pixel must be >= 0")
    lam = psf.h + beta_pixel
    if beta_pixel == 0.0:
        dead = lam == 0.0
        if any(np.any(d[dead] != 0.0) for d in derivs):
            raise ValueError(
                "zero-intensity pixel with nonzero gradient and no background"
            )
        lam = np.where(dead, 1.0, lam)  # 0/1 contributes nothing
    w = 1.0 / lam
    m = np.zeros((3, 3))
    for i in range(3):
        for j in range(i, 3):
            m[i, j] = m[j, i] = float(np.sum(w * derivs[i] * derivs[j]))
    return FisherMatrix(m)


def event_fi_upper(h_prev, derivs_prev, h_now, derivs_now, beta_pixel):
    """Upper-triangle entries (row-major, 21 scalars) of the 6x6 assembly.

    Written on the dual-mode ops: plain arrays evaluate with numpy,
    autodiff Vars record the graph. Both the evaluation path and the
    design loss call exactly this code.
    """
    mu = ad.add(h_prev, beta_pixel)
    nu = ad.add(h_now, beta_pixel)
    d_vec = [ad.div(d, mu) for d in derivs_prev] + [ad.div(d, nu) for d in derivs_now]
    mu2 = ad.mul(mu, mu)
    nu2 = ad.mul(nu, nu)
    munu = ad.mul(mu, nu)
    mu2nu = ad.mul(mu2, nu)
    munu2 = ad.mul(mu, nu2)
    a = 2.0 * mu2nu + 4.0 * mu2 + 2.0 * munu2 + 12.0 * munu + 9.0 * nu2
    b = -1.0 * (2.0 * mu2nu + 2.0 * mu2 + 2.0 * munu2 + 7.0 * munu + 6.0 * nu2)
    c = 2.0 * mu2nu + mu2 + 2.0 * munu2 + 4.0 * munu + 4.0 * nu2
    s = ad.add(mu, nu)
    denom = 2.0 * ad.mul(s, s)
    w_a = ad.div(a, denom)
    w_b = ad.div(b, denom)
    w_c = ad.div(c, denom)
    entries = []
    for i in range(6):
        for j in range(i, 6):
            w = w_a if j < 3 else (w_c if i >= 3 else w_b)
            entries.append(ad.vsum(ad.mul(ad.mul(d_vec[i], d_vec[j]), w)))
    return entries


def flashing_fi_upper(h, derivs, beta_pixel):
    """Upper-triangle entries (6 scalars) of the 3x3 flashing-source FI.

    Dual-mode like event_fi_upper; used by the static-localization
    design objective that regenerates the prior-art phase baseline.
    """
    lam = ad.add(h, beta_pixel)
    w = ad.div(1.0, lam)
    entries = []
    for i in range(3):
        for j in range(i, 3):
            entries.append(ad.vsum(ad.mul(ad.mul(derivs[i], derivs[j]), w)))
    return entries


def flashing_crb_loss(mask: Mask, depth_planes, cfg: OpticalConfig,
                      grid: PupilGrid | None = None,
                      ridge: float = DEFAULT_RIDGE) -> float:
    """Static-source design objective: summed 3-parameter CRB over planes."""
    if grid is None:
        grid = make_pupil_grid(cfg)
    total = []
    for z in depth_planes:
        psf = psf_gradients(cfg, grid, mask, (0.0, 0.0, z))
        fim = fisher_flashing(psf, cfg.beta_pixel)
        total.append(crb(fim, ridge).total)
    return float(pairwise_sum(total))


def fisher_event(psf_now: PsfEval, psf_prev: PsfEval,
                 beta_pixel: float) -> FisherMatrix:
    """6x6 information for a two-pose event measurement.

    Parameter order: (x, y, z) at the previous pose, then at the
    current pose.
    """
    if beta_pixel <= 0:
        raise ValueError("beta_pixel must be positive for the ratio model")
    if psf_now.h.shape != psf_prev.h.shape:
        raise ValueError("PSF grids do not match")
    d_prev = _require_derivatives(psf_prev)
    d_now = _require_derivatives(psf_now)
    entries = event_fi_upper(psf_prev.h, d_prev, psf_now.h, d_now, beta_pixel)
    for e in entries:
        if not np.isfinite(e):
            raise FloatingPointError("non-finite Fisher information entry")
    return FisherMatrix(ad.stack_sym(entries, 6))


def crb(m: FisherMatrix, ridge: float = DEFAULT_RIDGE, depth=None,
        motion=None) -> CrbResult:
    """sqrt(diag((M + ridge * tr(M)/dim * I)^-1)).

    The relative Tikhonov ridge keeps near-focus depth degeneracies
    invertible; it is applied identically to every mask being compared.
    """
    a = m.m + ridge * np.trace(m.m) / m.dim * np.eye(m.dim)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"information matrix not invertible: {exc}")
    diag = np.diag(inv)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise FloatingPointError("inverse information has invalid diagonal")
    return CrbResult(per_parameter=np.sqrt(diag), depth=depth, motion=motion)


def event_crb(cfg: OpticalConfig, grid: PupilGrid, mask: Mask, z: float,
              motion, ridge: float = DEFAULT_RIDGE) -> CrbResult:
    """CRB for one (depth plane, motion) pair; prev pose at (0, 0, z)."""
    dx, dy, dz = motion
    prev = psf_gradients(cfg, grid, mask, (0.0, 0.0, z))
    now = psf_gradients(cfg, grid, mask, (dx, dy, z + dz))
    fim = fisher_event(now, prev, cfg.beta_pixel)
    return crb(fim, ridge, depth=z, motion=tuple(motion))


def crb_table(cfg, grid, mask, depth_planes, motions, ridge=DEFAULT_RIDGE,
              workers: int = 1) -> np.ndarray:
    """Per-plane CRB averaged over motions, shape (n_planes, 6), meters."""

    def plane_row(z):
        prev = psf_gradients(cfg, grid, mask, (0.0, 0.0, z))
        rows = []
        for dx, dy, dz in motions:
            now = psf_gradients(cfg, grid, mask, (dx, dy, z + dz))
            fim = fisher_event(now, prev, cfg.beta_pixel)
            rows.append(crb(fim, ridge).per_parameter)
        return np.mean(rows, axis=0)

    return np.stack(parallel_map(plane_row, list(depth_planes), workers=workers))


def crb_loss(mask: Mask, depth_planes, motions, cfg: OpticalConfig,
             grid: PupilGrid | None = None, ridge: float = DEFAULT_RIDGE,
             workers: int = 1) -> float:
    """Design objective: sum over planes of the motion-averaged total CRB.

    For each plane z the previous pose sits at (0, 0, z) and each motion
    displaces the current pose; the six per-parameter bounds are summed,
    averaged over the motion batch, then summed over planes.
    """
    depth_planes = list(depth_planes)
    motions = list(motions)
    if not depth_planes or not motions:
        raise ValueError("need at least one depth plane and one motion")
    if grid is None:
        grid = make_pupil_grid(cfg)

    def plane_term(z):
        prev = psf_gradients(cfg, grid, mask, (0.0, 0.0, z))
        totals = []
        for dx, dy, dz in motions:
            now = psf_gradients(cfg, grid, mask, (dx, dy, z + dz))
            fim = fisher_event(now, prev, cfg.beta_pixel)
            totals.append(crb(fim, ridge).total)
        return pairwise_sum(totals) / len(totals)

    return float(pairwise_sum(parallel_map(plane_term, depth_planes,
                                           workers=workers)))


def default_depth_planes(n_planes: int = 11, half_range: float = 1.5e-6):
    """Evenly spaced planes over +/- half_range (11 for design, 30 for
    evaluation)."""
    return np.linspace(-half_range, half_range, n_planes)


def write_crb_csv(path, depth_planes, table: np.ndarray) -> None:
    """CRB-versus-depth curves, one row per plane, meters."""
    header = "z_m,crb_xp,crb_yp,crb_zp,crb_xt,crb_yt,crb_zt"
    rows = np.column_stack([np.asarray(depth_planes), table])
    np.savetxt(path, rows, delimiter=",", header=header, comments="")
