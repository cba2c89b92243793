"""Command-line pipeline: phantom, simulate, reconstruct, fit, train, eval,
and PGM export.

Subcommands compose through QAR1 files and small text manifests only. Every
run writes a provenance record (resolved key=value config plus commented
metadata) that can be replayed bit-identically via `--config provenance.txt`.
Exit codes: 0 ok, 2 usage, 3 io, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .biophys import FitOptions, nlls_fit_map
from .classic import red_recon, select_tau, tv_recon, zero_fill
from .config import config_hash, dump_config, parse_config
from .core import (
    ArrayFormatError,
    MGREImage,
    NumericFailure,
    RngStream,
    atomic_write_bytes,
    read_array,
    write_array,
)
from .forward import KSpaceSet, MeasurementOperator, SamplingMask, make_mask
from .metrics import snr_db, ssim
from .motion import MotionConfig, corrupt, load_schedule, sample_schedule, save_schedule
from .nets import DenoiserSpec, EstimatorSpec, load_weights, save_weights
from .phantom import CoilMaps, PhantomSpec, forward_biophysics, make_coil_maps, make_qmaps
from .unfold import (
    TrainConfig,
    UnfoldSpec,
    e_phi,
    make_denoiser_callable,
    r_theta,
    simulate_training_set,
    train,
    train_denoiser,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _resolve(defaults: dict, args, keys) -> dict:
    """defaults < config file < explicit CLI flags < QMRI_SEED."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = parse_config(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            resolved[key] = str(val)
    if "seed" in resolved and os.environ.get("QMRI_SEED"):
        resolved["seed"] = os.environ["QMRI_SEED"]
    return resolved


def _provenance(out_dir, subcommand: str, resolved: dict) -> None:
    meta = (
        f"# qmri {subcommand} provenance\n"
        f"# version = {__version__}\n"
        f"# numpy = {np.__version__}\n"
        f"# config_hash = {config_hash(resolved)}\n"
    )
    _write_text(os.path.join(out_dir, "provenance.txt"), meta + dump_config(resolved))


def _maybe_dump(args, resolved: dict) -> bool:
    if getattr(args, "dump_config", False):
        sys.stdout.write(dump_config(resolved))
        return True
    return False


def _read_manifest_times(path) -> np.ndarray:
    cfg = parse_config(path)
    if "echo_times" not in cfg:
        raise UsageError(f"{path} has no echo_times entry")
    return np.array([float(v) for v in cfg["echo_times"].split(",")])


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------

PHANTOM_DEFAULTS = {
    "seed": "0",
    "height": "96",
    "width": "96",
    "echoes": "10",
    "coils": "4",
    "t1": "0.004",
    "dt": "0.004",
    "ellipses": "8",
}


def cmd_phantom(args) -> int:
    cfg = _resolve(PHANTOM_DEFAULTS, args, PHANTOM_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    os.makedirs(args.out, exist_ok=True)
    spec = PhantomSpec(
        height=int(cfg["height"]),
        width=int(cfg["width"]),
        n_echoes=int(cfg["echoes"]),
        t1=float(cfg["t1"]),
        dt=float(cfg["dt"]),
        n_ellipses=int(cfg["ellipses"]),
        n_coils=int(cfg["coils"]),
        rng=RngStream(int(cfg["seed"])),
    )
    q = make_qmaps(spec)
    coils = make_coil_maps(spec)
    image = forward_biophysics(q, spec.echo_times)
    out = args.out
    write_array(os.path.join(out, "x0.qar"), q.x0)
    write_array(os.path.join(out, "r2s.qar"), q.r2s)
    write_array(os.path.join(out, "omega.qar"), q.omega)
    write_array(os.path.join(out, "f.qar"), q.f_of_t)
    write_array(os.path.join(out, "rem.qar"), q.rem.astype(np.float64))
    write_array(os.path.join(out, "coils.qar"), coils.s)
    write_array(os.path.join(out, "mgre.qar"), image.data)
    times = ",".join(repr(t) for t in spec.echo_times)
    manifest = (
        "# phantom manifest\n"
        f"echo_times = {times}\n"
        "maps = x0.qar, r2s.qar, omega.qar, f.qar, rem.qar\n"
        "coils = coils.qar\nmgre = mgre.qar\n"
    )
    _write_text(os.path.join(out, "manifest.txt"), manifest)
    _provenance(out, "phantom", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIMULATE_DEFAULTS = {
    "phantom": "",
    "seed": "0",
    "accel": "4",
    "central-cap": "60",
    "snr-db": "40",
    "motion": "default",  # default | none | path to a schedule manifest
    "l-max": "3",
    "dur-min": "0.05",
    "dur-max": "0.20",
    "max-shift": "5.0",
    "max-angle": "5.0",
}


def cmd_simulate(args) -> int:
    cfg = _resolve(SIMULATE_DEFAULTS, args, SIMULATE_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    if not cfg["phantom"]:
        raise UsageError("simulate needs --phantom (a phantom output directory)")
    pdir = cfg["phantom"]
    times = _read_manifest_times(os.path.join(pdir, "manifest.txt"))
    image = MGREImage(read_array(os.path.join(pdir, "mgre.qar")), times)
    coils = CoilMaps(read_array(os.path.join(pdir, "coils.qar")))
    h = coils.grid_shape[0]
    rng = RngStream(int(cfg["seed"]), 2000)
    mask = make_mask(h, int(cfg["accel"]), min(int(cfg["central-cap"]), h), rng.child(0))
    op = MeasurementOperator(coils=coils, mask=mask)
    motion = cfg["motion"]
    if motion == "none":
        sched = sample_schedule(MotionConfig(l_max=0), h, rng.child(1))
    elif motion == "default":
        mcfg = MotionConfig(
            l_max=int(cfg["l-max"]),
            duration_frac=(float(cfg["dur-min"]), float(cfg["dur-max"])),
            max_shift=float(cfg["max-shift"]),
            max_angle=float(cfg["max-angle"]),
        )
        sched = sample_schedule(mcfg, h, rng.child(1))
    else:
        sched = load_schedule(motion)
    snr = float(cfg["snr-db"])
    y = corrupt(op, image, sched, snr, rng.child(2))
    os.makedirs(args.out, exist_ok=True)
    write_array(os.path.join(args.out, "y.qar"), y.data)
    write_array(os.path.join(args.out, "mask.qar"), mask.keep.astype(np.float64))
    save_schedule(os.path.join(args.out, "schedule.txt"), sched)
    times_s = ",".join(repr(t) for t in times)
    _write_text(
        os.path.join(args.out, "manifest.txt"),
        f"# simulation manifest\necho_times = {times_s}\n"
        f"accel = {cfg['accel']}\ncentral_block = {mask.central_block}\n",
    )
    _provenance(args.out, "simulate", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

RECON_DEFAULTS = {
    "sim": "",
    "phantom": "",
    "method": "zf",
    "tau": "0.05",
    "tau-auto": "0",
    "iters": "50",
    "gamma": "0.5",
    "weights": "",
}


def _load_problem(cfg):
    sdir, pdir = cfg["sim"], cfg["phantom"]
    if not sdir or not pdir:
        raise UsageError("reconstruct needs --sim and --phantom directories")
    times = _read_manifest_times(os.path.join(sdir, "manifest.txt"))
    sim_cfg = parse_config(os.path.join(sdir, "manifest.txt"))
    coils = CoilMaps(read_array(os.path.join(pdir, "coils.qar")))
    keep = read_array(os.path.join(sdir, "mask.qar")) != 0
    mask = SamplingMask(
        keep=keep,
        acceleration=int(sim_cfg.get("accel", "4")),
        central_block=int(sim_cfg.get("central_block", "0")),
    )
    op = MeasurementOperator(coils=coils, mask=mask)
    y = KSpaceSet(data=read_array(os.path.join(sdir, "y.qar")), mask=mask)
    return op, y, times


def _read_netspec(weights_dir):
    for cand in (weights_dir, os.path.dirname(weights_dir.rstrip("/"))):
        path = os.path.join(cand, "netspec.txt")
        if os.path.exists(path):
            return parse_config(path)
    raise UsageError(f"no netspec.txt next to weights {weights_dir!r}")


def cmd_reconstruct(args) -> int:
    cfg = _resolve(RECON_DEFAULTS, args, RECON_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    op, y, times = _load_problem(cfg)
    method = cfg["method"]
    iters = int(cfg["iters"])
    gamma = float(cfg["gamma"])
    maps_out = None

    if method == "zf":
        xhat = zero_fill(op, y)
    elif method == "tv":
        tau = float(cfg["tau"])
        if cfg["tau-auto"] == "1":
            ref = read_array(os.path.join(cfg["phantom"], "mgre.qar"))
            tau, _ = select_tau(lambda t: tv_recon(op, y, t, iters, gamma), ref)
        xhat = tv_recon(op, y, tau, iters, gamma)
    elif method == "red":
        if not cfg["weights"]:
            raise UsageError("method red needs --weights (a denoiser checkpoint)")
        net = _read_netspec(cfg["weights"])
        dspec = DenoiserSpec(
            width=float(net.get("width_factor", "1")),
            pattern=net.get("denoiser_pattern", "conventional"),
        )
        weights = load_weights(cfg["weights"])
        denoiser = make_denoiser_callable(dspec, weights)
        tau = float(cfg["tau"])
        if cfg["tau-auto"] == "1":
            ref = read_array(os.path.join(cfg["phantom"], "mgre.qar"))
            tau, _ = select_tau(lambda t: red_recon(op, y, denoiser, t, gamma, iters), ref)
        xhat = red_recon(op, y, denoiser, tau, gamma, iters)
    elif method in ("du", "correct"):
        if not cfg["weights"]:
            raise UsageError(f"method {method} needs --weights (a training checkpoint)")
        net = _read_netspec(cfg["weights"])
        dspec = DenoiserSpec(
            width=float(net.get("width_factor", "1")),
            pattern=net.get("denoiser_pattern", "conventional"),
        )
        uspec = UnfoldSpec(
            k_steps=int(net.get("k_steps", "8")), gamma=float(net.get("gamma", "0.5"))
        )
        weights = load_weights(cfg["weights"])
        xhat = r_theta(weights, op, y, uspec, dspec)
        if method == "correct":
            if "est.out.w" not in weights:
                raise UsageError("checkpoint has no estimator parameters")
            espec = EstimatorSpec(
                in_channels=int(net.get("n_echoes", str(len(times)))),
                width=float(net.get("width_factor", "1")),
            )
            maps_out = e_phi(weights, xhat, espec)
    else:
        raise UsageError(f"unknown method {method!r}; valid: zf, tv, red, du, correct")

    os.makedirs(args.out, exist_ok=True)
    write_array(os.path.join(args.out, "xhat.qar"), xhat)
    if maps_out is not None:
        write_array(os.path.join(args.out, "x0_est.qar"), maps_out[0].astype(np.float64))
        write_array(os.path.join(args.out, "r2s_est.qar"), maps_out[1].astype(np.float64))
    times_s = ",".join(repr(t) for t in times)
    _write_text(
        os.path.join(args.out, "manifest.txt"),
        f"# reconstruction manifest\necho_times = {times_s}\nmethod = {method}\n",
    )
    _provenance(args.out, "reconstruct", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

FIT_DEFAULTS = {
    "in": "",
    "f": "",
    "rem": "",
    "manifest": "",
    "workers": "1",
    "r2s-max": "200.0",
    "max-iters": "100",
}


def cmd_fit(args) -> int:
    cfg = _resolve(FIT_DEFAULTS, args, FIT_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    if not cfg["in"] or not cfg["f"] or not cfg["rem"]:
        raise UsageError("fit needs --in, --f, and --rem")
    manifest = cfg["manifest"] or os.path.join(os.path.dirname(cfg["in"]), "manifest.txt")
    times = _read_manifest_times(manifest)
    image = MGREImage(read_array(cfg["in"]), times)
    f_of_t = read_array(cfg["f"])
    rem = read_array(cfg["rem"]) != 0
    opts = FitOptions(r2s_max=float(cfg["r2s-max"]), max_iters=int(cfg["max-iters"]))
    maps, report = nlls_fit_map(image, f_of_t, rem, opts, workers=int(cfg["workers"]))
    os.makedirs(args.out, exist_ok=True)
    write_array(os.path.join(args.out, "x0.qar"), maps.x0)
    write_array(os.path.join(args.out, "r2s.qar"), maps.r2s)
    write_array(os.path.join(args.out, "omega.qar"), maps.omega)
    _write_text(os.path.join(args.out, "report.txt"), report.summary() + "\n")
    _provenance(args.out, "fit", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "mode": "joint",  # joint | denoiser
    "lambda": "1.0",
    "lr": "1e-5",
    "epochs": "10",
    "batch-size": "1",
    "seed": "0",
    "k-steps": "8",
    "gamma": "0.5",
    "tau-init": "1.0",
    "width-factor": "0.25",
    "denoiser-pattern": "conventional",
    "precision": "f64",
    "n-train": "64",
    "img-h": "32",
    "img-w": "32",
    "echoes": "10",
    "coils": "4",
    "accels": "2,4,8",
    "central-cap": "10",
    "snr-db": "40",
    "l-max": "3",
    "dur-min": "0.05",
    "dur-max": "0.20",
    "max-shift": "5.0",
    "max-angle": "5.0",
    # denoiser mode only
    "sigmas": "0.01,0.03,0.05,0.07",
    "den-epochs": "20",
    "den-lr": "1e-3",
    "red-tau": "0.5",
    "n-val": "4",
}


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lam=float(cfg["lambda"]),
        lr=float(cfg["lr"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch-size"]),
        seed=int(cfg["seed"]),
        k_steps=int(cfg["k-steps"]),
        gamma=float(cfg["gamma"]),
        tau_init=float(cfg["tau-init"]),
        width_factor=float(cfg["width-factor"]),
        denoiser_pattern=cfg["denoiser-pattern"],
        precision=cfg["precision"],
        n_train=int(cfg["n-train"]),
        img_h=int(cfg["img-h"]),
        img_w=int(cfg["img-w"]),
        n_echoes=int(cfg["echoes"]),
        n_coils=int(cfg["coils"]),
        accels=tuple(int(a) for a in cfg["accels"].split(",")),
        central_cap=int(cfg["central-cap"]),
        snr_db=float(cfg["snr-db"]),
        motion_l_max=int(cfg["l-max"]),
        motion_duration=(float(cfg["dur-min"]), float(cfg["dur-max"])),
        motion_max_shift=float(cfg["max-shift"]),
        motion_max_angle=float(cfg["max-angle"]),
    )


def _write_netspec(path, cfg: dict) -> None:
    keys = ("width-factor", "denoiser-pattern", "k-steps", "gamma", "echoes")
    renames = {
        "width-factor": "width_factor",
        "denoiser-pattern": "denoiser_pattern",
        "k-steps": "k_steps",
        "gamma": "gamma",
        "echoes": "n_echoes",
    }
    text = "".join(f"{renames[k]} = {cfg[k]}\n" for k in keys)
    _write_text(path, text)


def cmd_train(args) -> int:
    cfg = _resolve(TRAIN_DEFAULTS, args, TRAIN_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    os.makedirs(args.out, exist_ok=True)
    tcfg = train_config_from(cfg)
    if cfg["mode"] == "joint":
        dataset = simulate_training_set(tcfg, tcfg.n_train)
        train(tcfg, dataset, out_dir=args.out)
        _write_netspec(os.path.join(args.out, "netspec.txt"), cfg)
        _write_netspec(os.path.join(args.out, "final", "netspec.txt"), cfg)
    elif cfg["mode"] == "denoiser":
        _train_denoiser_sweep(cfg, tcfg, args.out)
    else:
        raise UsageError(f"unknown train mode {cfg['mode']!r}")
    _provenance(args.out, "train", cfg)
    return EXIT_OK


def _train_denoiser_sweep(cfg: dict, tcfg: TrainConfig, out_dir: str) -> None:
    """Train one denoiser per noise level; keep the one giving the best
    reconstruction SNR on a small motion-free validation set."""
    from dataclasses import replace

    dspec = tcfg.denoiser_spec()
    clean = [s.x_gt for s in simulate_training_set(replace(tcfg, motion_l_max=0), tcfg.n_train)]
    val_cfg = replace(tcfg, motion_l_max=0, seed=tcfg.seed + 1)
    val = simulate_training_set(val_cfg, int(cfg["n-val"]), stream=1)
    red_tau = float(cfg["red-tau"])
    best = (None, -np.inf, None)
    for sigma in (float(s) for s in cfg["sigmas"].split(",")):
        weights, _ = train_denoiser(
            dspec,
            clean,
            sigma,
            epochs=int(cfg["den-epochs"]),
            lr=float(cfg["den-lr"]),
            seed=tcfg.seed,
            dtype=tcfg.dtype,
        )
        denoiser = make_denoiser_callable(dspec, weights)
        scores = [
            snr_db(s.x_gt, red_recon(s.op, s.y, denoiser, red_tau)) for s in val
        ]
        score = float(np.mean(scores))
        if score > best[1]:
            best = (weights, score, sigma)
    save_weights(os.path.join(out_dir, "final"), best[0])
    _write_netspec(os.path.join(out_dir, "netspec.txt"), cfg)
    _write_netspec(os.path.join(out_dir, "final", "netspec.txt"), cfg)
    _write_text(
        os.path.join(out_dir, "selection.txt"),
        f"sigma = {best[2]}\nvalidation_snr_db = {best[1]}\n",
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

EVAL_DEFAULTS = {
    "ref": "",
    "est": "",
    "ref-r2s": "",
    "est-r2s": "",
    "rem": "",
    "method": "unknown",
    "accel": "0",
}


def cmd_eval(args) -> int:
    cfg = _resolve(EVAL_DEFAULTS, args, EVAL_DEFAULTS)
    if _maybe_dump(args, cfg):
        return EXIT_OK
    rows = []
    if cfg["ref"]:
        if not cfg["est"]:
            raise UsageError("--ref needs --est")
        ref = read_array(cfg["ref"])
        est = read_array(cfg["est"])
        snr = snr_db(ref, est)
        ss = float(np.mean([ssim(np.abs(ref[k]), np.abs(est[k])) for k in range(ref.shape[0])]))
        rows.append(("mGRE", snr, ss))
    if cfg["ref-r2s"]:
        if not cfg["est-r2s"]:
            raise UsageError("--ref-r2s needs --est-r2s")
        ref = read_array(cfg["ref-r2s"])
        est = read_array(cfg["est-r2s"])
        if cfg["rem"]:
            rem = read_array(cfg["rem"]) != 0
            ref = ref * rem
            est = est * rem
        rows.append(("R2*", snr_db(ref, est), ssim(ref, est)))
    if not rows:
        raise UsageError("nothing to evaluate; pass --ref/--est or --ref-r2s/--est-r2s")
    lines = ["method\taccel\ttarget\tsnr_db\tssim"]
    for target, snr, ss in rows:
        lines.append(f"{cfg['method']}\t{cfg['accel']}\t{target}\t{snr:.4f}\t{ss:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-pgm
# ---------------------------------------------------------------------------


def export_pgm(in_path, out_path, window=None, use_abs=False, echo=None) -> None:
    arr = read_array(in_path)
    if np.iscomplexobj(arr):
        if not use_abs:
            raise UsageError("complex input: pass --abs to export magnitudes")
        arr = np.abs(arr)
    if arr.ndim == 3:
        if echo is None:
            raise UsageError("3-D input: pass --echo to pick a slice")
        arr = arr[int(echo)]
    if arr.ndim != 2:
        raise UsageError(f"cannot export {arr.ndim}-D data as PGM")
    lo, hi = window if window else (float(arr.min()), float(arr.max()))
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode()
    atomic_write_bytes(out_path, header + pix.tobytes())


def cmd_export_pgm(args) -> int:
    window = None
    if args.lo is not None or args.hi is not None:
        if args.lo is None or args.hi is None:
            raise UsageError("pass both --lo and --hi, or neither")
        window = (args.lo, args.hi)
    export_pgm(args.infile, args.out, window, args.abs, args.echo)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_common(sub, *, out_required=True):
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--dump-config", action="store_true", help="print resolved config and exit")
    sub.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmri", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("phantom", help="generate ground-truth maps and a clean image")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--echoes", type=int)
    p.add_argument("--coils", type=int)
    p.set_defaults(func=cmd_phantom)

    p = subs.add_parser("simulate", help="subsample, corrupt, and add noise")
    _add_common(p)
    p.add_argument("--phantom", help="phantom output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--accel", type=int, choices=(2, 4, 8))
    p.add_argument("--central-cap", type=int)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--motion", help="default | none | schedule manifest path")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("reconstruct", help="reconstruct images from k-space")
    _add_common(p)
    p.add_argument("--sim", help="simulate output directory")
    p.add_argument("--phantom", help="phantom directory (coil maps, references)")
    p.add_argument("--method", choices=("zf", "tv", "red", "du", "correct"))
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-auto", type=int, choices=(0, 1))
    p.add_argument("--iters", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--weights", help="checkpoint directory")
    p.set_defaults(func=cmd_reconstruct)

    p = subs.add_parser("fit", help="voxel-wise decay fitting")
    _add_common(p)
    p.add_argument("--in", dest="in_", help="multi-echo image (QAR1)")
    p.add_argument("--f", help="attenuation array (QAR1)")
    p.add_argument("--rem", help="region mask (QAR1)")
    p.add_argument("--manifest", help="manifest with echo_times")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("train", help="train networks from a config file")
    _add_common(p)
    p.add_argument("--mode", choices=("joint", "denoiser"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="SNR/SSIM table against references")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--dump-config", action="store_true")
    p.add_argument("--out", help="TSV output path (also printed)")
    p.add_argument("--ref", help="reference multi-echo image (QAR1)")
    p.add_argument("--est", help="estimate multi-echo image (QAR1)")
    p.add_argument("--ref-r2s")
    p.add_argument("--est-r2s")
    p.add_argument("--rem")
    p.add_argument("--method")
    p.add_argument("--accel")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("export-pgm", help="export a grid as an 8-bit PGM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--abs", action="store_true", help="export |x| of complex input")
    p.add_argument("--echo", type=int, help="echo index for 3-D input")
    p.set_defaults(func=cmd_export_pgm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        # adapt fit's reserved-word flag
        if getattr(args, "in_", None) is not None:
            setattr(args, "in", args.in_)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: usage: {exc}\n")
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return EXIT_IO
    except ArrayFormatError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return EXIT_IO
    except OSError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return EXIT_IO
    except NumericFailure as exc:
        sys.stderr.write(f"error: numeric: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"error: usage: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
