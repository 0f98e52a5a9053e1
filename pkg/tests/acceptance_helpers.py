"""Shared machinery for the acceptance suite: desk-scale settings and a
disk cache for optimized masks so reruns skip the training loops.

Set CEOPTICS_RETRAIN=1 to ignore the cache.
"""

import os
from pathlib import Path

import numpy as np

from ceoptics import optimize
from ceoptics.config import OpticalConfig
from ceoptics.optics import make_pupil_grid

CACHE_DIR = Path(__file__).parent / "_cache"
GRID = 64
EPOCHS = 500
VAL_MOTIONS = 100
VAL_EVERY = 50

DESK_CFG = OpticalConfig.default(grid=GRID)


def desk_optimize_config(parameterization, seed, epochs=EPOCHS,
                         fixed_speed=None):
    return optimize.OptimizeConfig(
        parameterization=parameterization,
        epochs=epochs,
        seed=seed,
        n_val_motions=VAL_MOTIONS,
        val_every=VAL_EVERY,
        fixed_speed=fixed_speed,
    )


def cache_key(opt, cfg):
    fs = "none" if opt.fixed_speed is None else f"{opt.fixed_speed:.3g}"
    return (f"{opt.parameterization}_s{opt.seed}_e{opt.epochs}"
            f"_g{cfg.grid}_p{cfg.signal_photons:.0f}"
            f"_a{cfg.aberration_spherical:g}_fs{fs}")


def trained_result(parameterization, seed, cfg=DESK_CFG, epochs=EPOCHS,
                   fixed_speed=None):
    """Optimize (or load from cache) and return an OptimizeResult."""
    opt = desk_optimize_config(parameterization, seed, epochs, fixed_speed)
    grid = make_pupil_grid(cfg)
    path = CACHE_DIR / (cache_key(opt, cfg) + ".npz")
    retrain = os.environ.get("CEOPTICS_RETRAIN", "") not in ("", "0")
    if path.exists() and not retrain:
        data = np.load(path)
        best = {k[5:]: data[k] for k in data.files if k.startswith("best_")}
        parameterization_obj = opt.make_parameterization()
        return optimize.OptimizeResult(
            parameterization=parameterization_obj,
            params=best,
            best_params=best,
            history=[tuple(r) for r in data["history"]],
            best_val_loss=float(data["best_val_loss"]),
            initial_val_loss=float(data["initial_val_loss"]),
            grid=grid,
        )
    result = optimize.optimize_mask(opt, cfg, grid=grid)
    CACHE_DIR.mkdir(exist_ok=True)
    payload = {f"best_{k}": v for k, v in result.best_params.items()}
    payload["history"] = np.array(result.history, dtype=float)
    payload["best_val_loss"] = result.best_val_loss
    payload["initial_val_loss"] = result.initial_val_loss
    np.savez(path, **payload)
    return result
