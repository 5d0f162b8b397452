"""``hazediff`` command line: synthesis, augmentation, training, sampling and diagnostics.

Global flags (``--config``, ``--seed``, ``--out``) may appear before or after
the subcommand. Exit codes: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .dataset import (
    MANIFEST,
    DataError,
    load_dataset,
    pair_files,
    read_manifest,
    write_dataset,
    write_manifest,
)
from .diffusion import ddim_sample
from .fcb import export_weights, frequency_response, make_bank, response_csv, weights_csv
from .haze_aug import AugDraw, SyntheticPair, apply_aug, draw_aug
from .haze_synth import AsmParams, synthesize_haze
from .imaging import ImageIOError, derive_seed, load_depth, load_image, make_rng, save_image
from .metrics import evaluate, psnr, ssim
from .spectral import kl_to_flat, psd_kl, radial_psd
from .toynet import (
    NumericError,
    load_checkpoint,
    loss_curve_csv,
    predict_eps_batch,
    read_checkpoint_header,
    save_checkpoint,
    train,
)
from .toyset import make_toyset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_OUT = "hazediff-out"
SYNTH_COLUMNS = ["file", "A", "beta", "seed"]
AUG_COLUMNS = ["file", "index", "branch", "A", "beta", "delta", "donor", "seed"]


# ------------------------------------------------------------------ helpers


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _seed(args, fallback: int = 0) -> int:
    return fallback if args.seed is None else args.seed


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.io.output or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_dir(args, cfg: ExperimentConfig) -> Path:
    root = getattr(args, "dataset", None) or cfg.io.dataset
    if root is None:
        raise ConfigError("no dataset directory given (--dataset or io.dataset)")
    return Path(root)


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _load_model(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _float_or_none(s: str) -> float | None:
    return None if s == "" else float(s)


# ----------------------------------------------------------------- commands


def cmd_toyset(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    pairs = make_toyset(args.n, args.size, seed=_seed(args))
    write_dataset(out, pairs)
    write_manifest(out / MANIFEST, ["file"], ({"file": p.name} for p in pairs))
    return EXIT_OK


def _synth_one(clean, depth, seed, cfg: ExperimentConfig) -> tuple[np.ndarray, AsmParams]:
    rng = make_rng(seed)
    p = AsmParams(float(rng.uniform(cfg.synth.a_min, cfg.synth.a_max)), float(rng.uniform(cfg.synth.beta_min, cfg.synth.beta_max)))
    return synthesize_haze(clean, depth, p), p


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    """Haze every clean/depth pair; per-file seeds are derived from the master seed."""
    files = pair_files(args.clean, args.depth)
    replay = None
    if args.replay:
        replay = {row["file"]: row for row in read_manifest(args.replay)}
    out = _out_dir(args, cfg)
    for sub in ("clean", "depth", "hazy"):
        (out / sub).mkdir(exist_ok=True)
    master = _seed(args)
    rows, pairs = [], []
    for i, (stem, cpath, dpath) in enumerate(files):
        try:
            clean, depth = load_image(cpath), load_depth(dpath)
        except (ImageIOError, OSError) as exc:
            raise DataError(str(exc)) from exc
        if replay is not None:
            if stem not in replay:
                raise DataError(f"{stem} missing from replay manifest")
            row = replay[stem]
            p = AsmParams(float(row["A"]), float(row["beta"]))
            hazy, seed = synthesize_haze(clean, depth, p), int(row["seed"])
        else:
            seed = derive_seed(master, i)
            hazy, p = _synth_one(clean, depth, seed, cfg)
        pairs.append(SyntheticPair(hazy, clean, depth, stem))
        rows.append({"file": stem, "A": p.A, "beta": p.beta, "seed": seed})
    write_dataset(out, pairs)
    write_manifest(out / MANIFEST, SYNTH_COLUMNS, rows)
    return EXIT_OK


def _draw_from_row(row: dict) -> AugDraw:
    branch = row["branch"]
    if branch not in ("hard", "migrate"):
        raise DataError(f"bad branch {branch!r} in manifest")
    donor = row.get("donor", "")
    return AugDraw(
        branch,
        A=_float_or_none(row.get("A", "")),
        beta=_float_or_none(row.get("beta", "")),
        delta=_float_or_none(row.get("delta", "")),
        donor=None if donor == "" else int(donor),
    )


def cmd_augment(args, cfg: ExperimentConfig) -> int:
    """One HazeAug draw per sample; ``--replay`` re-applies a recorded manifest."""
    pairs = load_dataset(_dataset_dir(args, cfg), require_manifest=True)
    replay = read_manifest(args.replay) if args.replay else None
    if replay is not None and len(replay) != len(pairs):
        raise DataError(f"replay manifest has {len(replay)} rows for {len(pairs)} samples")
    out = _out_dir(args, cfg)
    (out / "aug").mkdir(exist_ok=True)
    master = _seed(args, cfg.aug_seed or 0)
    rows = []
    for i, pair in enumerate(pairs):
        if replay is not None:
            row = replay[i]
            if row["file"] != pair.name:
                raise DataError(f"replay row {i} is {row['file']!r}, dataset has {pair.name!r}")
            draw, seed = _draw_from_row(row), int(row["seed"])
        else:
            seed = derive_seed(master, i)
            draw = draw_aug(len(pairs), make_rng(seed), cfg.aug)
        save_image(apply_aug(draw, i, pairs, cfg.aug), out / "aug" / f"{pair.name}.png")
        rows.append({"file": pair.name, "index": i, **draw.as_row(), "seed": seed})
    write_manifest(out / MANIFEST, AUG_COLUMNS, rows)
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    tcfg = cfg.train
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.iters is not None:
        tcfg = replace(tcfg, iters=args.iters)
    if args.no_fcb:
        tcfg = replace(tcfg, use_fcb=False)
    pairs = load_dataset(_dataset_dir(args, cfg))
    out = _out_dir(args, cfg)
    model, curve = train(
        pairs,
        tcfg,
        cfg.schedule.build(),
        aug=cfg.aug if args.haze_aug else None,
        ks=cfg.fcb.ks,
        sigmas=cfg.fcb.sigmas,
        gamma_sigma=cfg.fcb.gamma_sigma,
    )
    extra = {"schedule": asdict(cfg.schedule), "train": asdict(tcfg)}
    save_checkpoint(model, out / args.name, extra=extra)
    (out / "loss.csv").write_text(loss_curve_csv(curve))
    return EXIT_OK


def cmd_sample(args, cfg: ExperimentConfig) -> int:
    sched = cfg.schedule.build()
    if args.steps > sched.T:
        raise ConfigError(f"--steps {args.steps} exceeds T={sched.T}")
    model = _load_model(args.checkpoint)
    out = _out_dir(args, cfg)
    master = _seed(args)
    for i, path in enumerate(args.inputs):
        try:
            hazy = load_image(path)
        except (ImageIOError, OSError) as exc:
            raise DataError(str(exc)) from exc
        rng = make_rng(derive_seed(master, i))
        result = ddim_sample(model, hazy, sched, n_steps=args.steps, rng=rng, n_avg=args.avg)
        if not np.all(np.isfinite(result)):
            raise NumericError(f"non-finite output for {path}")
        save_image(result, out / f"{Path(path).stem}_dehazed.png")
    return EXIT_OK


def cmd_psd(args, cfg: ExperimentConfig) -> int:
    try:
        if args.compare:
            a, b = (radial_psd(load_image(p), args.bins) for p in args.compare)
            print(repr(psd_kl(a, b)))
            return EXIT_OK
        if len(args.images) != 1:
            raise ConfigError("psd takes exactly one image (or --compare A B)")
        curve = radial_psd(load_image(args.images[0]), args.bins)
    except (ImageIOError, OSError) as exc:
        raise DataError(str(exc)) from exc
    _emit(curve.to_csv(), _out_dir(args, cfg) / "psd.csv" if args.out else None)
    return EXIT_OK


def cmd_freq_response(args, cfg: ExperimentConfig) -> int:
    gamma = cfg.fcb.gamma_sigma if args.gamma_sigma is None else args.gamma_sigma
    bank = make_bank(cfg.fcb.ks, cfg.fcb.sigmas, gamma)
    freqs, resp = frequency_response(bank, n_freq=args.n_freq)
    _emit(response_csv(freqs, resp), _out_dir(args, cfg) / "freq_response.csv" if args.out else None)
    return EXIT_OK


def cmd_metrics(args, cfg: ExperimentConfig) -> int:
    try:
        a, b = load_image(args.a), load_image(args.b)
    except (ImageIOError, OSError) as exc:
        raise DataError(str(exc)) from exc
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    print(json.dumps(evaluate(a, b).as_dict(), sort_keys=True))
    return EXIT_OK


def _comparable(header: dict) -> dict:
    c = dict(header["config"])
    c.pop("use_fcb", None)
    c.pop("dtype", None)
    return c


def spectral_experiment(model_plain, model_fcb, pairs, ts, sched, seed: int) -> list[tuple[int, float, float]]:
    """Mean over the eval set of KL(radial PSD of predicted noise || flat), per step.

    Both models see the same noise draws at each step.
    """
    rows = []
    for t in ts:
        kls = []
        for model in (model_plain, model_fcb):
            eps = predict_eps_batch(model, pairs, int(t), sched, make_rng(derive_seed(seed, int(t))))
            kls.append(float(np.mean([kl_to_flat(radial_psd(e)) for e in eps])))
        rows.append((int(t), kls[0], kls[1]))
    return rows


def cmd_spectral_exp(args, cfg: ExperimentConfig) -> int:
    sched = cfg.schedule.build()
    ts = args.t if args.t else [1, 15, int(0.75 * sched.T)]
    if any(not 1 <= t <= sched.T for t in ts):
        raise ConfigError(f"steps must lie in 1..{sched.T}")
    try:
        h_plain, h_fcb = read_checkpoint_header(args.plain), read_checkpoint_header(args.fcb)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if _comparable(h_plain) != _comparable(h_fcb):
        raise ConfigError("checkpoints differ in more than use_fcb")
    pairs = load_dataset(_dataset_dir(args, cfg))
    rows = spectral_experiment(_load_model(args.plain), _load_model(args.fcb), pairs, ts, sched, _seed(args))
    out = _out_dir(args, cfg)
    write_manifest(out / "spectral.csv", ["t", "kl_plain", "kl_fcb"], ({"t": t, "kl_plain": p, "kl_fcb": f} for t, p, f in rows))
    return EXIT_OK


def ddim_sweep(model, pairs, steps, sched, seed: int, n_avg: int = 5) -> list[tuple[int, float, float]]:
    """Mean PSNR/SSIM against the clean images for each DDIM step count.

    Image ``i`` uses the same initial noise for every step count.
    """
    rows = []
    for n in steps:
        ps, ss = [], []
        for i, p in enumerate(pairs):
            rng = make_rng(derive_seed(seed, i))
            pred = ddim_sample(model, p.hazy, sched, n_steps=int(n), rng=rng, n_avg=n_avg)
            ps.append(psnr(pred, p.clean))
            ss.append(ssim(pred, p.clean))
        rows.append((int(n), float(np.mean(ps)), float(np.mean(ss))))
    return rows


def cmd_ddim_sweep(args, cfg: ExperimentConfig) -> int:
    sched = cfg.schedule.build()
    if any(not 1 <= s <= sched.T for s in args.steps):
        raise ConfigError(f"step counts must lie in 1..{sched.T}")
    model = _load_model(args.checkpoint)
    pairs = load_dataset(_dataset_dir(args, cfg))
    rows = ddim_sweep(model, pairs, args.steps, sched, _seed(args), n_avg=args.avg)
    out = _out_dir(args, cfg)
    write_manifest(out / "ddim_sweep.csv", ["steps", "psnr", "ssim"], ({"steps": n, "psnr": p, "ssim": s} for n, p, s in rows))
    return EXIT_OK


def cmd_export_weights(args, cfg: ExperimentConfig) -> int:
    model = _load_model(args.checkpoint)
    _emit(weights_csv(export_weights(model)), _out_dir(args, cfg) / "fcb_weights.csv" if args.out else None)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    parser.add_argument("--config", help="experiment config (JSON)", **kw)
    parser.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)", **kw)
    parser.add_argument("--out", help="output directory", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazediff", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("toyset", cmd_toyset, "write a procedural clean/depth/hazy dataset")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--size", type=int, default=64)

    p = add("synth", cmd_synth, "haze clean images with the scattering model")
    p.add_argument("--clean", required=True, help="directory of clean PNGs")
    p.add_argument("--depth", required=True, help="directory of depth maps (PFM or 16-bit PNG)")
    p.add_argument("--replay", help="manifest of a previous synth run to reproduce")

    p = add("augment", cmd_augment, "apply HazeAug once to every sample of a dataset")
    p.add_argument("--dataset", help="dataset directory (clean/, depth/, hazy/, manifest.csv)")
    p.add_argument("--replay", help="augment manifest to reproduce")

    p = add("train", cmd_train, "train the toy noise predictor")
    p.add_argument("--dataset")
    p.add_argument("--iters", type=int)
    p.add_argument("--no-fcb", action="store_true", help="plain skip connections")
    p.add_argument("--haze-aug", action="store_true", help="apply HazeAug to training conditions")
    p.add_argument("--name", default="model.ckpt", help="checkpoint file name inside --out")

    p = add("sample", cmd_sample, "dehaze images with DDIM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--avg", type=int, default=5, help="number of averaged DDIM chains")
    p.add_argument("inputs", nargs="+", help="hazy PNGs")

    p = add("psd", cmd_psd, "radially averaged power spectrum (CSV) or KL between two images")
    p.add_argument("images", nargs="*")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"))
    p.add_argument("--bins", type=int)

    p = add("freq-response", cmd_freq_response, "measured frequency response of the FCB branches")
    p.add_argument("--n-freq", type=int, default=65)
    p.add_argument("--gamma-sigma", type=float)

    p = add("metrics", cmd_metrics, "PSNR, SSIM and CIEDE2000 between two images")
    p.add_argument("a")
    p.add_argument("b")

    p = add("spectral-exp", cmd_spectral_exp, "KL-to-flat of predicted noise spectra, plain vs FCB")
    p.add_argument("--plain", required=True, help="checkpoint trained without FCB")
    p.add_argument("--fcb", required=True, help="checkpoint trained with FCB")
    p.add_argument("--dataset")
    p.add_argument("--t", type=_int_list, help="comma-separated diffusion steps")

    p = add("ddim-sweep", cmd_ddim_sweep, "PSNR/SSIM against the number of DDIM steps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--steps", type=_int_list, default=[1, 2, 5, 10, 20, 50])
    p.add_argument("--avg", type=int, default=5)

    p = add("export-weights", cmd_export_weights, "FCB mixing weights of a checkpoint (CSV)")
    p.add_argument("--checkpoint", required=True)
    return parser


def _thread_limit():
    n = os.environ.get("HAZEDIFF_THREADS")
    if not n:
        return nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise ConfigError(f"HAZEDIFF_THREADS must be an integer, got {n!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(limit, 1))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        with _thread_limit():
            return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # remaining input problems, e.g. a crop larger than the images
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
