#!/usr/bin/env python3
"""Regenerate the two committed baseline mask data files.

Run from the repository root:

    python scripts/make_baselines.py

Both constructions are deterministic (fixed seeds) and documented in
src/ceoptics/data/README.md. The outputs are resolution-independent:
Zernike coefficients for the phase baseline, a coarse cell pattern for
the binary-amplitude baseline.
"""

import time
from pathlib import Path

import numpy as np

from ceoptics import fileio
from ceoptics.config import OpticalConfig
from ceoptics.fisher import crb, default_depth_planes, fisher_flashing
from ceoptics.optics import make_pupil_grid, psf_gradients
from ceoptics.optimize import adam_step
from ceoptics.param import Zernike, flashing_loss_fn, grad_loss
from ceoptics.baselines import render_coarse_amplitude

DATA = Path(__file__).resolve().parents[1] / "src" / "ceoptics" / "data"

GRID = 64
EPOCHS = 1200
SEED = 20240917
N_LOW_ORDER = 15     # radial order <= 4: the published mask family is smooth
COARSE = 13          # cell count of the published coded aperture
N_CANDIDATES = 400
PHOTO_PLANES = (-8e-6, -5e-6, 5e-6, 8e-6)  # photography-scale defocus


def make_fisher(cfg, grid):
    planes = default_depth_planes(11, 1.5e-6)
    parameterization = Zernike(n_coeffs=N_LOW_ORDER)
    params = parameterization.init(grid, seed=SEED)
    # tiny symmetric-breaking perturbation; the all-zero surface is a
    # stationary point of the static-localization objective
    rng = np.random.default_rng(SEED)
    params["coeffs"] = params["coeffs"] + rng.normal(0.0, 0.01, N_LOW_ORDER)
    params["coeffs"][0] = 0.0  # piston is invisible to the intensity
    loss_fn = flashing_loss_fn(cfg, grid, "phase", planes)
    state = {}
    best = None
    for epoch in range(1, EPOCHS + 1):
        loss, grads = grad_loss(parameterization, grid, params, loss_fn)
        if best is None or loss < best[0]:
            best = (loss, {k: v.copy() for k, v in params.items()})
        params, state = adam_step(params, grads, state, epoch, lr=2e-2,
                                  beta1=0.9, beta2=0.999)
        if epoch % 200 == 0:
            print(f"  epoch {epoch}: static-source bound sum {loss:.4e} m")
    coeffs = np.zeros(55)
    coeffs[:N_LOW_ORDER] = best[1]["coeffs"]
    coeffs[0] = 0.0
    rows = np.column_stack([np.arange(1, 56), coeffs])
    out = DATA / "fisher_zernike.csv"
    np.savetxt(out, rows, delimiter=",", header="index,coefficient",
               comments="", fmt=["%d", "%.17g"])
    print(f"  wrote {out} (best loss {best[0]:.4e})")


def make_levin(cfg, grid):
    """Coded aperture selected for photography-regime depth coding.

    The published construction searches binary cell patterns that make
    large-defocus blur maximally depth-discriminable; scoring at
    several-micron defocus reproduces that regime. Near focus such a
    pattern behaves like an extended-depth-of-field element, which is
    exactly the weakness the comparison exercises.
    """
    rng = np.random.default_rng(SEED + 1)
    beta = cfg.beta_pixel

    def depth_score(pattern):
        mask = render_coarse_amplitude(pattern, grid)
        open_frac = mask.values[grid.support].mean()
        if not 0.40 <= open_frac <= 0.60:
            return np.inf
        total = 0.0
        for z in PHOTO_PLANES:
            psf = psf_gradients(cfg, grid, mask, (0.0, 0.0, z))
            fim = fisher_flashing(psf, beta)
            total += crb(fim).per_parameter[2]  # depth bound only
        return total

    best_score, best_pattern = np.inf, None
    for _ in range(N_CANDIDATES):
        pattern = (rng.uniform(size=(COARSE, COARSE)) < 0.5).astype(float)
        s = depth_score(pattern)
        if s < best_score:
            best_score, best_pattern = s, pattern
    out = DATA / "levin_pattern.ceo1"
    fileio.write_grid(out, best_pattern,
                      meta={"units": "transmittance", "cells": COARSE,
                            "seed": SEED + 1, "candidates": N_CANDIDATES,
                            "score_planes_m": PHOTO_PLANES})
    frac = render_coarse_amplitude(best_pattern, grid).values[grid.support].mean()
    print(f"  wrote {out} (depth score {best_score:.3e}, open fraction {frac:.2f})")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    cfg = OpticalConfig.default(grid=GRID)
    grid = make_pupil_grid(cfg)
    t0 = time.time()
    print("phase baseline (static-source bound minimization):")
    make_fisher(cfg, grid)
    print("binary-amplitude baseline (depth-discriminability search):")
    make_levin(cfg, grid)
    print(f"done in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
