"""Command-line front end.

Subcommands: degrade, eval, train, infer, ablate, gradcheck, mean.  Every
command is deterministic given identical inputs, config and seed.  Exit codes:
0 success, 1 usage, 2 I/O, 3 contract/integrity violation.  AMSR_THREADS caps
evaluation parallelism (default: sequential).
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .data import (
    DatasetManifest,
    NormStats,
    compute_mean,
    denormalize_to_u8,
    load_training_images,
    make_lr,
    normalize_array,
)
from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    ConfigError,
    ContractError,
    PngDecodeError,
    ShapeError,
    TrainingDiverged,
)
from .gradcheck import grad_check, kink_free
from .imaging import bicubic_resize_u8, load_png, modcrop, save_png
from .metrics import evaluate_pair
from .model import (
    ModelConfig,
    bind_params,
    build_model,
    load_checkpoint,
    save_checkpoint,
    super_resolve,
)
from .report import (
    build_ablation_report,
    build_eval_report,
    render_ablation_table,
    render_eval_table,
    write_json,
)
from .train import TrainConfig, fit, l1_loss, load_optim_state

# Fallback channel means on the 0..255 scale (commonly used large-corpus RGB
# averages); override per run with --mean or the mean_rgb config key.
DEFAULT_MEAN_RGB = (114.444, 111.4605, 103.02)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CONTRACT = 3

FULL_SCALE_WARN_STEPS = 100_000


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _threads():
    raw = os.environ.get("AMSR_THREADS", "")
    try:
        n = int(raw) if raw else 1
    except ValueError:
        n = 1
    return max(1, n)


def _parse_mean(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"mean must be three comma-separated values in [0,255], got {text!r}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"mean must be numeric, got {text!r}") from None
    return NormStats(mean_rgb=vals)


# ---------------------------------------------------------------------------
# flat key=value config files


def parse_kv_file(path):
    kv = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in kv:
            raise ConfigError(f"{path}:{ln}: duplicate key {key}")
        kv[key] = value
    return kv


def _take_int(kv, key, default, lo=None, hi=None):
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing config field {key} (integer)")
        return default
    try:
        v = int(kv.pop(key))
    except ValueError:
        raise ConfigError(f"config field {key} must be an integer") from None
    if lo is not None and v < lo:
        raise ConfigError(f"config field {key} must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"config field {key} must be <= {hi}, got {v}")
    return v


def _take_float(kv, key, default):
    if key not in kv:
        return default
    try:
        return float(kv.pop(key))
    except ValueError:
        raise ConfigError(f"config field {key} must be a number") from None


def _take_bool(kv, key, default):
    if key not in kv:
        return default
    v = kv.pop(key).lower()
    if v not in ("true", "false", "0", "1"):
        raise ConfigError(f"config field {key} must be true/false")
    return v in ("true", "1")


def load_run_config(path):
    """Parse a flat key=value run config into (ModelConfig, TrainConfig, extras)."""
    kv = parse_kv_file(path)
    base = Path(path).parent
    scale = _take_int(kv, "scale", 2, 2, 4)
    model_cfg = ModelConfig(
        scale=scale,
        channels=_take_int(kv, "channels", 64, 4),
        n_amms=_take_int(kv, "n_amms", 1, 1),
        n_am=_take_int(kv, "n_am", 4, 1),
        nl_reduction=_take_int(kv, "nl_reduction", 2, 1),
        so_reduction=_take_int(kv, "so_reduction", 0, 0),
        sf_layers=_take_int(kv, "sf_layers", 2, 1),
        enable_nonlocal=_take_bool(kv, "enable_nonlocal", True),
        enable_second_order=_take_bool(kv, "enable_second_order", True),
        enable_multiscale=_take_bool(kv, "enable_multiscale", True),
    )
    train_cfg = TrainConfig(
        lr0=_take_float(kv, "lr0", 1e-4),
        beta1=_take_float(kv, "beta1", 0.9),
        beta2=_take_float(kv, "beta2", 0.999),
        eps=_take_float(kv, "eps", 1e-8),
        batch=_take_int(kv, "batch", 16, 1),
        patch=_take_int(kv, "patch", 192, 2),
        iters_per_epoch=_take_int(kv, "iters_per_epoch", 1000, 1),
        epochs=_take_int(kv, "epochs", 1000, 1),
        lr_half_every=_take_int(kv, "lr_half_every", 200, 1),
        seed=_take_int(kv, "seed", 0, 0),
        scale=scale,
        checkpoint_every=_take_int(kv, "checkpoint_every", 10, 1),
    )
    extras = {}
    if "train_manifest" in kv:
        extras["train_manifest"] = (base / kv.pop("train_manifest")).resolve()
    if "eval_manifest" in kv:
        extras["eval_manifest"] = (base / kv.pop("eval_manifest")).resolve()
    extras["out_dir"] = (base / kv.pop("out_dir")).resolve() if "out_dir" in kv else Path.cwd()
    if "mean_rgb" in kv:
        extras["mean"] = _parse_mean(kv.pop("mean_rgb"))
    elif _take_bool(kv, "mean_from_manifest", False):
        extras["mean"] = None  # computed later over the training manifest
    else:
        extras["mean"] = NormStats(DEFAULT_MEAN_RGB)
    if kv:
        raise ConfigError(f"unknown config field {sorted(kv)[0]}")
    return model_cfg, train_cfg, extras


# ---------------------------------------------------------------------------
# commands


def cmd_degrade(manifest_path, scale, out_dir):
    manifest = DatasetManifest.load(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    for entry in manifest.entries:
        stem = Path(entry).stem
        try:
            hr = load_png(entry)
            cropped = modcrop(hr, scale)
            lr = make_lr(hr, scale)
        except (OSError, ContractError) as e:
            print(f"degrade: {entry}: {e}", file=sys.stderr)
            failures.append(str(entry))
            continue
        save_png(cropped, out_dir / f"{stem}_HR_x{scale}.png")
        save_png(lr, out_dir / f"{stem}_x{scale}.png")
    if failures:
        print(f"degrade: {len(failures)} of {len(manifest.entries)} images failed", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _upscale_bicubic(lr, scale):
    return bicubic_resize_u8(lr, lr.width * scale, lr.height * scale, antialias=False)


def _upscale_model(lr, scale, params, mean):
    x = normalize_array(lr.pixels.astype(np.float32).transpose(2, 0, 1), mean)
    out = super_resolve(bind_params(params), T.constant(x[None]), params.config)
    return denormalize_to_u8(out.data[0].astype(np.float64), mean)


def evaluate_dataset(manifest, scale, method, params=None, mean=None):
    """Per-image metric records for one dataset; order follows the manifest."""
    if method == "model":
        if params is None:
            raise ContractError("model evaluation needs a checkpoint")
        if params.config.scale != scale:
            raise CheckpointIntegrityError(
                f"checkpoint was trained for scale {params.config.scale}, requested {scale}"
            )
        if mean is None:
            mean = NormStats(DEFAULT_MEAN_RGB)

    def one(entry):
        hr = modcrop(load_png(entry), scale)
        lr = make_lr(hr, scale)
        if method == "bicubic":
            sr = _upscale_bicubic(lr, scale)
        else:
            sr = _upscale_model(lr, scale, params, mean)
        return evaluate_pair(hr, sr, scale, image_id=Path(entry).stem)

    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(one, manifest.entries))
    return [one(entry) for entry in manifest.entries]


def cmd_eval(manifest_path, scale, method, report_path, checkpoint=None, mean=None):
    manifest = DatasetManifest.load(manifest_path)
    params = None
    config_text = f"dataset={manifest.name}\nmethod={method}\nscale={scale}\n"
    if method == "model":
        if checkpoint is None:
            raise ContractError("--method model requires --checkpoint")
        params = load_checkpoint(checkpoint)
        config_text += params.config.canonical_text()
    records = evaluate_dataset(manifest, scale, method, params=params, mean=mean)
    report = build_eval_report(
        method, manifest.name, scale, records, __version__, config_text
    )
    if report_path:
        write_json(report, report_path)
    sys.stdout.write(render_eval_table(report))
    return EXIT_OK


def cmd_infer(checkpoint, in_path, out_path, mean=None):
    params = load_checkpoint(checkpoint)
    if mean is None:
        mean = NormStats(DEFAULT_MEAN_RGB)
    lr = load_png(in_path)
    sr = _upscale_model(lr, params.config.scale, params, mean)
    save_png(sr, out_path)
    return EXIT_OK


def cmd_train(config_path, resume=None):
    model_cfg, train_cfg, extras = load_run_config(config_path)
    if "train_manifest" not in extras:
        raise ConfigError("missing config field train_manifest (path)")
    manifest = DatasetManifest.load(extras["train_manifest"])
    mean = extras["mean"] if extras["mean"] is not None else compute_mean(manifest)
    total_steps = train_cfg.epochs * train_cfg.iters_per_epoch
    if total_steps >= FULL_SCALE_WARN_STEPS:
        print(
            f"warning: {train_cfg.epochs} epochs x {train_cfg.iters_per_epoch} iterations is a "
            "full-scale run (days of compute on GPU-class hardware); this CPU implementation "
            "is intended for desk-scale experiments",
            file=sys.stderr,
        )
    out_dir = extras["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume:
        params = load_checkpoint(resume, expect_config=model_cfg)
        optim_state, start_epoch = load_optim_state(resume)
    else:
        params = build_model(model_cfg, train_cfg.seed)
        optim_state, start_epoch = None, 0
    images = load_training_images(manifest, train_cfg.scale)
    result = fit(
        params,
        model_cfg,
        train_cfg,
        images,
        mean,
        checkpoint_dir=out_dir,
        log_path=out_dir / "loss_log.csv",
        start_epoch=start_epoch,
        optim_state=optim_state,
    )
    print(f"training complete; best epoch-mean loss {result.best_loss:.6g}")
    print(f"checkpoints: {', '.join(result.checkpoints) if result.checkpoints else '(none)'}")
    return EXIT_OK


ABLATION_VARIANTS = (
    ("nonlocal-only", True, False, False),
    ("second-order-only", False, True, False),
    ("multi-scale-only", False, False, True),
    ("all", True, True, True),
)


def cmd_ablate(config_path):
    model_cfg, train_cfg, extras = load_run_config(config_path)
    if "train_manifest" not in extras or "eval_manifest" not in extras:
        raise ConfigError("ablation needs both train_manifest and eval_manifest config fields")
    train_manifest = DatasetManifest.load(extras["train_manifest"])
    eval_manifest = DatasetManifest.load(extras["eval_manifest"])
    mean = extras["mean"] if extras["mean"] is not None else compute_mean(train_manifest)
    out_dir = extras["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    images = load_training_images(train_manifest, train_cfg.scale)
    rows = []
    for name, nl, so, ms in ABLATION_VARIANTS:
        variant_cfg = model_cfg.with_flags(nonlocal_=nl, second_order=so, multiscale=ms)
        params = build_model(variant_cfg, train_cfg.seed)
        fit(params, variant_cfg, train_cfg, images, mean)
        ckpt = out_dir / f"ablation_{name}.amsr"
        save_checkpoint(params, ckpt)
        records = evaluate_dataset(eval_manifest, train_cfg.scale, "model", params=params, mean=mean)
        psnrs = [r.psnr_db for r in records if np.isfinite(r.psnr_db)]
        rows.append(
            {
                "variant": name,
                "nonlocal": nl,
                "second_order": so,
                "multiscale": ms,
                "psnr_db": float(np.mean(psnrs)) if psnrs else float("inf"),
            }
        )
    report = build_ablation_report(
        rows, eval_manifest.name, train_cfg.scale, __version__, model_cfg.canonical_text()
    )
    write_json(report, out_dir / "ablation.json")
    sys.stdout.write(render_ablation_table(rows, title=f"ablation on {eval_manifest.name} (x{train_cfg.scale})"))
    return EXIT_OK


def cmd_mean(manifest_path, save_path=None):
    manifest = DatasetManifest.load(manifest_path)
    stats = compute_mean(manifest)
    r, g, b = stats.mean_rgb
    print(f"mean_rgb = {r:.4f}, {g:.4f}, {b:.4f}")
    if save_path:
        write_json({"mean_rgb": list(stats.mean_rgb)}, save_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradient-check suite


def _gradcheck_cases(rng):
    """(name, fn, inputs, tol) for every differentiable op, three shapes each."""
    cases = []
    for i, (n, c, h, w) in enumerate([(1, 2, 5, 4), (2, 3, 4, 4), (1, 4, 3, 6)]):
        co, k = (3, 3) if i != 1 else (2, 5)
        pad = (k - 1) // 2
        cases.append(
            (
                "conv2d",
                lambda x, wt, b, pad=pad: T.conv2d(x, wt, b, pad),
                [rng.standard_normal((n, c, h, w)), rng.standard_normal((co, c, k, k)), rng.standard_normal(co)],
                1e-5,
            )
        )
    for shp in [(3, 4), (5, 2), (2, 6)]:
        p, q = shp
        r = p + 1
        cases.append(
            ("matmul", T.matmul, [rng.standard_normal((p, q)), rng.standard_normal((q, r))], 1e-5)
        )
    cases.append(
        ("matmul", T.matmul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))], 1e-5)
    )
    for shp in [(3, 5), (2, 4), (4, 3)]:
        # project through fixed weights: the plain sum of softmax rows is
        # constant, which would make the finite-difference signal vanish
        proj = T.constant(rng.standard_normal(shp))
        cases.append(
            ("softmax_rows", lambda a, proj=proj: T.mul(T.softmax_rows(a), proj), [rng.standard_normal(shp)], 1e-5)
        )
    for shp in [(1, 2, 3, 3), (2, 3, 2, 4), (1, 4, 5, 2)]:
        cases.append(("covariance_pool", T.covariance_pool, [rng.standard_normal(shp)], 1e-5))
    for c in [2, 3, 4]:
        base = rng.standard_normal((c, c))
        spd = base @ base.T + c * np.eye(c)
        cases.append(("newton_schulz_sqrt", lambda a: T.newton_schulz_sqrt(a, 5), [spd], 1e-5))
    for r, cch in [(2, 4), (2, 8), (3, 9)]:
        cases.append(
            ("pixel_shuffle", lambda x, r=r: T.pixel_shuffle(x, r), [rng.standard_normal((1, cch, 2, 3))], 1e-5)
        )
    cases.append(
        (
            "concat_channels",
            lambda a, b: T.concat_channels([a, b]),
            [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 3, 3, 3))],
            1e-5,
        )
    )
    cases.append(
        ("add", T.add, [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal((2, 3, 2, 2))], 1e-10)
    )
    cases.append(
        ("mul_gate", T.mul, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 1, 1))], 1e-5)
    )
    cases.append(("scale", lambda x: T.scale(x, 0.37), [rng.standard_normal((2, 3))], 1e-10))
    cases.append(("relu", T.relu, [kink_free(rng.standard_normal((3, 4, 2, 2)), rng=rng)], 1e-6))
    cases.append(("abs", T.absolute, [kink_free(rng.standard_normal((4, 4)), rng=rng)], 1e-6))
    cases.append(("sigmoid", T.sigmoid, [rng.standard_normal((3, 5))], 1e-5))
    cases.append(("row_mean", T.row_mean, [rng.standard_normal((2, 3, 4))], 1e-10))
    return cases


def _toy_model_gradcheck(rng, tol=1e-4, max_coords=3):
    """End-to-end finite-difference check of the toy model in float64."""
    cfg = ModelConfig(scale=2, channels=16, n_amms=1, n_am=2)
    params = build_model(cfg, seed=7, dtype=np.float64)
    paths = params.paths()
    x = rng.uniform(-0.5, 0.5, size=(1, 3, 6, 6))
    target = rng.uniform(-0.5, 0.5, size=(1, 3, 12, 12))

    def fn(*leaves):
        bound = dict(zip(paths, leaves))
        return l1_loss(super_resolve(bound, T.constant(x), cfg), T.constant(target))

    return grad_check(
        fn,
        [params[p] for p in paths],
        name="toy-model-end-to-end",
        tol=tol,
        max_coords=max_coords,
        rng=rng,
    )


def run_gradcheck_suite(corrupt_op=None, stream=sys.stdout):
    """Every differentiable op plus the toy end-to-end model against central
    finite differences.  ``corrupt_op`` is a test seam that perturbs the named
    op's analytic gradient so the harness can prove it catches regressions."""
    rng = np.random.default_rng(1234)
    reports = []
    for name, fn, inputs, tol in _gradcheck_cases(rng):
        seam = {0: 1.01} if corrupt_op == name else None
        reports.append(grad_check(fn, inputs, name=name, tol=tol, rng=rng, grad_scale=seam))
    reports.append(_toy_model_gradcheck(rng))
    failed = [r for r in reports if not r.passed]
    for r in reports:
        stream.write(r.summary() + "\n")
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_err)
        stream.write(f"gradcheck FAILED; worst offender: {worst.name} (rel err {worst.max_rel_err:.3e})\n")
    else:
        stream.write("gradcheck: all passed\n")
    return reports


def cmd_gradcheck():
    reports = run_gradcheck_suite()
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CONTRACT


# ---------------------------------------------------------------------------
# argument wiring


def build_parser():
    parser = _Parser(prog="amsr", description="super-resolution toolkit")
    parser.add_argument("--version", action="version", version=f"amsr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="write modcropped HR copies and bicubic LR images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="evaluate bicubic or a checkpoint on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p.add_argument("--method", required=True, choices=("bicubic", "model"))
    p.add_argument("--checkpoint")
    p.add_argument("--report", help="path for the JSON report")
    p.add_argument("--mean", help="per-channel RGB mean 'r,g,b' for model evaluation")

    p = sub.add_parser("train", help="train from a flat key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("infer", help="super-resolve one PNG with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--mean", help="per-channel RGB mean 'r,g,b'")

    p = sub.add_parser("ablate", help="train and compare the four branch-flag variants")
    p.add_argument("--config", required=True)

    sub.add_parser("gradcheck", help="finite-difference check of every op and the toy model")

    p = sub.add_parser("mean", help="per-channel RGB mean over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--save", help="write the mean as JSON")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "degrade":
            return cmd_degrade(args.manifest, args.scale, args.out_dir)
        if args.command == "eval":
            mean = _parse_mean(args.mean) if args.mean else None
            return cmd_eval(args.manifest, args.scale, args.method, args.report,
                            checkpoint=args.checkpoint, mean=mean)
        if args.command == "train":
            return cmd_train(args.config, resume=args.resume)
        if args.command == "infer":
            mean = _parse_mean(args.mean) if args.mean else None
            return cmd_infer(args.checkpoint, args.in_path, args.out_path, mean=mean)
        if args.command == "ablate":
            return cmd_ablate(args.config)
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "mean":
            return cmd_mean(args.manifest, save_path=args.save)
        raise CliUsageError(f"unknown command {args.command}")
    except CliUsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PngDecodeError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, ContractError, ConfigError, CheckpointFormatError,
            CheckpointIntegrityError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
