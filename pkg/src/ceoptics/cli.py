"""Command-line interface: PSF stacks, mask design, bound curves,
tracking runs and ablation sweeps.

Every run writes its fully resolved configuration to config.json in the
output directory; a JSON config file can seed any subcommand and flags
override file values. Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, fileio, fisher, optimize, param, tracking
from .config import OpticalConfig
from .optics import Mask, compute_psf, make_pupil_grid
from .parallel import parallel_map

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


def _parse_zrange(text: str) -> np.ndarray:
    """start:stop:count in meters, or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1:
                raise ValueError
            return np.linspace(start, stop, count)
    except ValueError:
        pass
    raise ConfigError(f"bad z range {text!r}; expected start:stop:count")


def _load_mask(spec_text: str, grid) -> Mask:
    """Named baseline or path to a CEO1 mask file."""
    if spec_text in baselines.BASELINE_NAMES:
        return baselines.get_baseline(spec_text, grid)
    path = Path(spec_text)
    if not path.exists():
        raise ConfigError(f"mask {spec_text!r} is neither a known baseline "
                          f"{baselines.BASELINE_NAMES} nor an existing file")
    values, meta = fileio.read_grid(path, with_meta=True)
    kind = meta.get("kind", "phase")
    values = np.where(grid.support, values, 0.0)
    return Mask(kind=kind, values=values)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved_config(args, extra: dict) -> dict:
    cfg = {k: v for k, v in vars(args).items()
           if k not in ("func", "config") and not k.startswith("_")}
    cfg.update(extra)
    return cfg


def _write_config(out: Path, resolved: dict) -> None:
    with open(out / "config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)


def _optical_config(args) -> OpticalConfig:
    overrides = {}
    for name in ("signal_photons", "background_fraction", "pixel_fill",
                 "aberration_spherical"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return OpticalConfig.default(grid=args.grid, **overrides)


def cmd_psf(args) -> int:
    cfg = _optical_config(args)
    grid = make_pupil_grid(cfg)
    mask = _load_mask(args.mask, grid)
    zs = _parse_zrange(args.z)
    out = _outdir(args)
    _write_config(out, _resolved_config(args, {"optical": cfg.to_dict()}))
    rows = []
    psfs = parallel_map(lambda z: compute_psf(cfg, grid, mask, (0.0, 0.0, z)),
                        list(zs), workers=args.workers)
    for z, psf in zip(zs, psfs):
        name = f"psf_z{z*1e6:+.3f}um.ceo1"
        fileio.write_grid(out / name, psf.h,
                          meta=fileio.config_meta(cfg, units="photons/pixel",
                                                  z_m=z, mask=args.mask))
        rows.append((z, float(psf.h.max()), float(psf.h.sum())))
    mask_meta = fileio.config_meta(cfg, units="radians" if mask.kind == "phase"
                                   else "transmittance", kind=mask.kind)
    values = param.wrap_phase(mask.values) if mask.kind == "phase" else mask.values
    fileio.write_grid(out / "mask.ceo1", values, meta=mask_meta)
    with open(out / "psf_summary.csv", "w") as fh:
        fh.write("z_m,peak_photons,total_photons\n")
        for z, peak, total in rows:
            fh.write(f"{float(z)!r},{peak!r},{total!r}\n")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _optical_config(args)
    grid = make_pupil_grid(cfg)
    if not 0.0 <= args.beta1 < 1.0:
        raise ConfigError(f"beta1 must lie in [0, 1), got {args.beta1}")
    opt = optimize.OptimizeConfig(
        parameterization=args.parameterization,
        epochs=args.epochs,
        beta1=args.beta1,
        beta2=args.beta2,
        lr=args.lr,
        seed=args.seed,
        fixed_speed=args.fixed_speed,
        n_val_motions=args.val_motions,
        val_every=args.val_every,
        workers=args.workers,
        zernike_coeffs=args.n_coeffs,
    )
    out = _outdir(args)
    _write_config(out, _resolved_config(args, {"optical": cfg.to_dict(),
                                               "optimize": opt.to_dict()}))
    result = optimize.optimize_mask(opt, cfg, grid=grid)
    optimize.write_loss_csv(out / "loss.csv", result.history)
    mask = result.mask
    values = param.wrap_phase(mask.values) if mask.kind == "phase" else mask.values
    fileio.write_grid(out / "mask.ceo1", values,
                      meta=fileio.config_meta(
                          cfg, units="radians" if mask.kind == "phase"
                          else "transmittance", kind=mask.kind,
                          parameterization=args.parameterization))
    for tag, z in (("-1.5", -1.5e-6), ("0", 0.0), ("+1.5", 1.5e-6)):
        psf = compute_psf(cfg, grid, mask, (0.0, 0.0, z))
        fileio.write_grid(out / f"psf_z{tag}.ceo1", psf.h,
                          meta=fileio.config_meta(cfg, units="photons/pixel", z_m=z))
    if args.parameterization == "zernike":
        coeffs = result.best_params["coeffs"]
        with open(out / "zernike_coeffs.csv", "w") as fh:
            fh.write("index,coefficient\n")
            for j, c in enumerate(coeffs, start=1):
                fh.write(f"{j},{float(c)!r}\n")
    params_dir = out / "params"
    params_dir.mkdir(exist_ok=True)
    for name, arr in result.best_params.items():
        fileio.write_grid(params_dir / f"{name}.ceo1", np.atleast_2d(arr),
                          meta={"units": "parameter", "kind": mask.kind,
                                "parameterization": args.parameterization,
                                "tensor": name})
    return EXIT_OK


def cmd_crb(args) -> int:
    cfg = _optical_config(args)
    grid = make_pupil_grid(cfg)
    mask = _load_mask(args.mask, grid)
    out = _outdir(args)
    _write_config(out, _resolved_config(args, {"optical": cfg.to_dict()}))
    planes = fisher.default_depth_planes(args.planes, args.half_range)
    rng = np.random.default_rng(args.seed)
    motions = optimize.sample_motions(rng, args.motions)
    table = fisher.crb_table(cfg, grid, mask, planes, motions,
                             workers=args.workers)
    fisher.write_crb_csv(out / "crb_vs_depth.csv", planes, table)
    with open(out / "crb_summary.csv", "w") as fh:
        fh.write("mask,mean_crb_m\n")
        fh.write(f"{args.mask},{float(table.mean())!r}\n")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _optical_config(args)
    grid = make_pupil_grid(cfg)
    if args.bins < 1:
        raise ConfigError("need at least one bin per trajectory")
    mask_names = args.masks.split(",")
    masks = {name: _load_mask(name, grid) for name in mask_names}
    out = _outdir(args)
    _write_config(out, _resolved_config(args, {"optical": cfg.to_dict()}))
    summary = []
    for name, mask in masks.items():
        rmses, l1zs = [], []
        for t in range(args.trajectories):
            traj = tracking.brownian_trajectory(args.bins + 1,
                                                seed=args.seed + t,
                                                volume=tuple(args.volume))
            res = tracking.track_sequence(
                traj, mask, cfg, grid=grid,
                rng=np.random.default_rng(args.seed + 1000 + t),
                gaussian_noise=args.noise == "on")
            rmses.append(res.rmse_3d)
            l1zs.append(res.l1_z)
            tracking.write_trajectory_csv(out / f"traj{t}_truth.csv",
                                          traj.positions)
            tracking.write_trajectory_csv(out / f"traj{t}_{name}_est.csv",
                                          res.estimated)
        summary.append((name, float(np.mean(rmses)), float(np.mean(l1zs))))
    tracking.write_summary_csv(out / "tracking_summary.csv", summary)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _optical_config(args)
    grid = make_pupil_grid(cfg)
    mask = _load_mask(args.mask, grid)
    out = _outdir(args)
    _write_config(out, _resolved_config(args, {"optical": cfg.to_dict()}))
    planes = fisher.default_depth_planes(args.planes, args.half_range)
    rng = np.random.default_rng(args.seed)
    motions = optimize.sample_motions(rng, args.motions)

    def mean_crb(cfg_i, motions_i):
        grid_i = make_pupil_grid(cfg_i)
        mask_i = _load_mask(args.mask, grid_i)
        return fisher.crb_table(cfg_i, grid_i, mask_i, planes, motions_i,
                                workers=args.workers).mean()

    if args.sweep == "flux":
        values = [float(v) for v in args.values.split(",")] if args.values else \
            [1e3, 2e3, 5e3, 1e4, 2e4]
        rows = [(v, mean_crb(cfg.with_(signal_photons=v), motions))
                for v in values]
        header = "signal_photons,mean_crb_m"
    elif args.sweep == "background":
        values = [float(v) for v in args.values.split(",")] if args.values else \
            [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]
        rows = [(v, mean_crb(cfg.with_(background_fraction=v), motions))
                for v in values]
        header = "background_fraction,mean_crb_m"
    elif args.sweep == "speed":
        values = [float(v) for v in args.values.split(",")] if args.values else \
            [1e-9, 1e-8, 1e-7, 1e-6]
        rows = []
        for v in values:
            m = optimize.sample_motions(np.random.default_rng(args.seed),
                                        args.motions, fixed_speed=v)
            rows.append((v, mean_crb(cfg, m)))
        header = "speed_m,mean_crb_m"
    else:
        raise ConfigError(f"unknown sweep {args.sweep!r}")

    with open(out / f"ablate_{args.sweep}.csv", "w") as fh:
        fh.write(header + "\n")
        for v, crb_val in rows:
            fh.write(f"{float(v)!r},{float(crb_val)!r}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ceoptics",
        description="Design and evaluate coded optics for event cameras.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None,
                       help="JSON file with defaults for this subcommand")
        p.add_argument("--out", type=str, default="run",
                       help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--deterministic", action="store_true",
                       help="force sequential reference mode")
        p.add_argument("--grid", type=int, default=64)
        p.add_argument("--signal-photons", dest="signal_photons", type=float,
                       default=None)
        p.add_argument("--background-fraction", dest="background_fraction",
                       type=float, default=None)
        p.add_argument("--pixel-fill", dest="pixel_fill", type=float,
                       default=None)
        p.add_argument("--aberration-spherical", dest="aberration_spherical",
                       type=float, default=None)
        p.add_argument("--dump-config", action="store_true",
                       help="print the resolved configuration and exit")

    p = sub.add_parser("psf", help="render PSF stacks across depth")
    common(p)
    p.add_argument("--mask", required=True,
                   help="baseline name (open|fisher|levin) or CEO1 file")
    p.add_argument("--z", default="-1.5e-6:1.5e-6:7",
                   help="depth range start:stop:count in meters")
    p.set_defaults(func=cmd_psf)

    p = sub.add_parser("optimize", help="design a mask by bound minimization")
    common(p)
    p.add_argument("--parameterization", default="neural_phase",
                   choices=["neural_phase", "neural_amplitude", "pixel_phase",
                            "pixel_amplitude", "zernike"])
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.99)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--fixed-speed", dest="fixed_speed", type=float, default=None)
    p.add_argument("--val-motions", dest="val_motions", type=int, default=100)
    p.add_argument("--val-every", dest="val_every", type=int, default=25)
    p.add_argument("--n-coeffs", dest="n_coeffs", type=int, default=55)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("crb", help="bound-versus-depth curves for a mask")
    common(p)
    p.add_argument("--mask", required=True)
    p.add_argument("--planes", type=int, default=30)
    p.add_argument("--half-range", dest="half_range", type=float, default=1.5e-6)
    p.add_argument("--motions", type=int, default=1000)
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("track", help="render event videos and track them")
    common(p)
    p.add_argument("--masks", default="open",
                   help="comma-separated baseline names or CEO1 files")
    p.add_argument("--trajectories", type=int, default=5)
    p.add_argument("--bins", type=int, default=200)
    p.add_argument("--noise", choices=["on", "off"], default="on")
    p.add_argument("--volume", type=float, nargs=3,
                   default=list(tracking.DEFAULT_VOLUME),
                   help="tracking volume extents in meters")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("ablate", help="bound sweeps over flux/background/speed")
    common(p)
    p.add_argument("--mask", required=True)
    p.add_argument("--sweep", required=True,
                   choices=["flux", "background", "speed"])
    p.add_argument("--values", default=None,
                   help="comma-separated sweep values (defaults per sweep)")
    p.add_argument("--planes", type=int, default=30)
    p.add_argument("--half-range", dest="half_range", type=float, default=1.5e-6)
    p.add_argument("--motions", type=int, default=50)
    p.set_defaults(func=cmd_ablate)

    return parser


def _apply_config_file(args, cli_tokens):
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        file_values = json.loads(path.read_text())
        for key, value in file_values.items():
            flag = "--" + key.replace("_", "-")
            if not hasattr(args, key):
                continue
            if any(tok == flag or tok.startswith(flag + "=") for tok in cli_tokens):
                continue  # explicit flags override file values
            setattr(args, key, value)
    return args


def _merge_negative_values(argv):
    """Join '--z -1.5e-6:...' into '--z=...' so argparse does not read the
    leading dash of a negative range as an option."""
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok in ("--z", "--fixed-speed") and i + 1 < len(argv) \
                and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            skip = True
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    argv = _merge_negative_values(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse's own error/exits map to our codes
        return int(exc.code or 0)
    try:
        args = _apply_config_file(args, argv)
        if getattr(args, "deterministic", False):
            args.workers = 1
        if getattr(args, "dump_config", False):
            resolved = _resolved_config(args, {"optical": _optical_config(args).to_dict()})
            print(json.dumps(resolved, indent=2, sort_keys=True, default=str))
            return EXIT_OK
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
