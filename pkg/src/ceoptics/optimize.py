"""Mask design loop: Monte-Carlo bound minimization with Adam.

Each epoch draws three random orthogonal motion directions (columns of
a Haar-uniform rotation), scales them by magnitudes |N(100 nm, 20 nm)|
clamped at 1 nm (or by a fixed speed for speed-study runs), evaluates
the bound objective over the fixed depth-plane set, backpropagates
through the mask render and takes one bias-corrected Adam step.

Validation uses a held-out motion set drawn once from the training
distribution with a disjoint seed; the returned parameters are the ones
with the best validation loss seen at any checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import OpticalConfig
from .fisher import DEFAULT_RIDGE, crb_loss, default_depth_planes
from .optics import PupilGrid, make_pupil_grid
from .param import Parameterization, crb_loss_fn, grad_loss, make_parameterization

ADAM_EPS = 1e-8
VALIDATION_SEED_OFFSET = 0x5EED


@dataclass
class OptimizeConfig:
    parameterization: str = "neural_phase"
    epochs: int = 10000          # published schedule; desk-scale runs use 500-2000
    motions_per_epoch: int = 3   # one orthogonal triple
    n_depth_planes: int = 11
    depth_half_range: float = 1.5e-6
    beta1: float = 0.99          # as printed; 0.9 is the usual Adam choice
    beta2: float = 0.999
    lr: float = 1e-3
    seed: int = 0
    speed_mean: float = 100e-9
    speed_sd: float = 20e-9
    fixed_speed: float | None = None
    n_val_motions: int = 100
    val_every: int = 25
    ridge: float = DEFAULT_RIDGE
    workers: int = 1
    zernike_coeffs: int = 55

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.motions_per_epoch != 3:
            raise ValueError("the motion batch is a fixed orthogonal triple")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def make_parameterization(self) -> Parameterization:
        kwargs = {}
        if self.parameterization == "zernike":
            kwargs["n_coeffs"] = self.zernike_coeffs
        return make_parameterization(self.parameterization, **kwargs)


def _random_rotation(rng) -> np.ndarray:
    """Haar-uniform rotation via sign-fixed QR of a Gaussian matrix."""
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_motion_batch(rng, mean: float = 100e-9, sd: float = 20e-9,
                        fixed_speed: float | None = None) -> np.ndarray:
    """Three orthogonal motion vectors, shape (3, 3), rows are motions."""
    directions = _random_rotation(rng).T  # rows orthonormal
    if fixed_speed is not None:
        mags = np.full(3, float(fixed_speed))
    else:
        mags = np.maximum(np.abs(rng.normal(mean, sd, size=3)), 1e-9)
    return directions * mags[:, None]


def sample_motions(rng, n: int, mean: float = 100e-9, sd: float = 20e-9,
                   fixed_speed: float | None = None) -> np.ndarray:
    """n independent motions (unit direction times |N(mean, sd)|)."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if fixed_speed is not None:
        mags = np.full(n, float(fixed_speed))
    else:
        mags = np.maximum(np.abs(rng.normal(mean, sd, size=n)), 1e-9)
    return v * mags[:, None]


def adam_step(params: dict, grads: dict, state: dict, t: int,
              lr: float, beta1: float = 0.99, beta2: float = 0.999,
              eps: float = ADAM_EPS):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m, v = state.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state[name] = (m, v)
    return new_params, new_state


@dataclass
class OptimizeResult:
    parameterization: Parameterization
    params: dict
    best_params: dict
    history: list            # (epoch, train_loss, val_loss or nan)
    best_val_loss: float
    initial_val_loss: float
    grid: PupilGrid

    @property
    def mask(self):
        return self.parameterization.render_mask(self.grid, self.best_params)


def optimize_mask(opt: OptimizeConfig, cfg: OpticalConfig,
                  grid: PupilGrid | None = None,
                  progress=None) -> OptimizeResult:
    """Run the design loop; returns the best-validation-loss mask."""
    if grid is None:
        grid = make_pupil_grid(cfg)
    parameterization = opt.make_parameterization()
    rng = np.random.default_rng(opt.seed)
    params = parameterization.init(grid, seed=opt.seed)
    planes = default_depth_planes(opt.n_depth_planes, opt.depth_half_range)

    val_rng = np.random.default_rng(opt.seed + VALIDATION_SEED_OFFSET)
    val_motions = sample_motions(val_rng, opt.n_val_motions, opt.speed_mean,
                                 opt.speed_sd, opt.fixed_speed)

    def val_loss_of(p) -> float:
        mask = parameterization.render_mask(grid, p)
        return crb_loss(mask, planes, val_motions, cfg, grid=grid,
                        ridge=opt.ridge, workers=opt.workers)

    initial_val = val_loss_of(params)
    best_params = {k: v.copy() for k, v in params.items()}
    best_val = initial_val
    history = [(0, initial_val, initial_val)]
    state: dict = {}

    for epoch in range(1, opt.epochs + 1):
        motions = sample_motion_batch(rng, opt.speed_mean, opt.speed_sd,
                                      opt.fixed_speed)
        loss_fn = crb_loss_fn(cfg, grid, parameterization.kind, planes,
                              motions, ridge=opt.ridge)
        try:
            train_loss, grads = grad_loss(parameterization, grid, params, loss_fn)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"epoch {epoch}: {exc} (planes={list(planes)}, motions={motions.tolist()})"
            ) from exc
        params, state = adam_step(params, grads, state, epoch, opt.lr,
                                  opt.beta1, opt.beta2)
        val = np.nan
        if epoch % opt.val_every == 0 or epoch == opt.epochs:
            val = val_loss_of(params)
            if val < best_val:
                best_val = val
                best_params = {k: v.copy() for k, v in params.items()}
        history.append((epoch, train_loss, val))
        if progress is not None:
            progress(epoch, train_loss, val)

    return OptimizeResult(
        parameterization=parameterization,
        params=params,
        best_params=best_params,
        history=history,
        best_val_loss=best_val,
        initial_val_loss=initial_val,
        grid=grid,
    )


def write_loss_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, train, val in history:
            val_s = "" if np.isnan(val) else repr(float(val))
            fh.write(f"{epoch},{float(train)!r},{val_s}\n")
