"""Command-line driver: simulate, reconstruct, evaluate, masks.

Every command writes a manifest.json next to its outputs with the fully
resolved configuration, so any output can be reproduced byte-for-byte by
rerunning with the manifest as the spec/config. Exit codes: 0 success,
1 validation error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import MaskSpec, PhantomSpec, make_mask, phantom_image, simulate_kspace, synth_coils
from .coils import zf_coil_init
from .core import (
    CoilSet,
    KSpaceData,
    RealImage,
    Rng,
    SamplingMask,
    TensorIOError,
    ValidationError,
    read_array,
    tensor_write,
)
from .diffusion import GaussianMixtureScore, GaussianScore
from .evaluation import (
    TvParams,
    apply_intensity_map,
    fit_intensity_map,
    nullspace_residual,
    psnr,
    tv_reconstruct,
    zf_reconstruct,
)
from .forward_model import forward
from .presets import desk_recon_config
from .sampler import CropGeometry, NumericalError, ReconConfig, crop_center, reconstruct
from .scorenet import DeskScoreNet, WeightsFormatError, load_weights

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def _write_manifest(out_dir: Path, command: str, payload: dict) -> None:
    manifest = {"tool": "diffrecon", "version": __version__, "command": command}
    manifest.update(payload)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_spec(raw: dict) -> dict:
    # accept either a bare spec or a manifest embedding one
    return raw["spec"] if "spec" in raw and isinstance(raw["spec"], dict) else raw


# ------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    raw = _resolve_spec(_load_json(args.spec)) if args.spec else {}
    phantom_spec = PhantomSpec(**raw.get("phantom", {}))
    mask_spec = MaskSpec(**raw.get("mask", {}))
    noise_std = float(raw.get("noise_std", 0.0))
    crop = raw.get("crop", [64, 64])
    if args.seed is not None:
        phantom_spec = PhantomSpec(**{**phantom_spec.to_json(), "seed": args.seed})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.train_stack:
        # crop-sized clean phantoms for the score-net trainer
        h, w = crop
        stack = np.stack([
            phantom_image(PhantomSpec(**{**phantom_spec.to_json(),
                                         "height": h, "width": w,
                                         "seed": phantom_spec.seed + i})).data
            for i in range(args.train_stack)
        ])
        tensor_write(out / "train_phantoms.tnsr", stack)
        _write_manifest(out, "simulate", {
            "seed": phantom_spec.seed,
            "spec": {"phantom": phantom_spec.to_json(), "crop": crop,
                     "train_stack": args.train_stack},
            "outputs": ["train_phantoms.tnsr"],
        })
        print(f"wrote {args.train_stack} training phantoms to {out}")
        return EXIT_OK

    shape = (phantom_spec.height, phantom_spec.width)
    x = phantom_image(phantom_spec)
    coils = synth_coils(shape, phantom_spec.num_coils,
                        phantom_spec.coil_smoothness, seed=phantom_spec.seed + 1)
    mask = make_mask(shape, mask_spec)
    full = SamplingMask(np.ones(shape))
    rng = Rng(phantom_spec.seed + 2)
    y_full = simulate_kspace(x, coils, full, noise_std, rng)
    y_sub = simulate_kspace(x, coils, mask, noise_std, rng)

    tensor_write(out / "phantom.tnsr", x)
    tensor_write(out / "coils.tnsr", coils)
    tensor_write(out / "mask.tnsr", mask)
    tensor_write(out / "kspace_full.tnsr", y_full.channels)
    tensor_write(out / "kspace_sub.tnsr", y_sub.channels)
    _write_manifest(out, "simulate", {
        "seed": phantom_spec.seed,
        "spec": {"phantom": phantom_spec.to_json(), "mask": mask_spec.to_json(),
                 "noise_std": noise_std, "crop": crop},
        "acceleration": mask.acceleration,
        "outputs": ["phantom.tnsr", "coils.tnsr", "mask.tnsr",
                    "kspace_full.tnsr", "kspace_sub.tnsr"],
    })
    print(f"simulated case in {out} (mask acceleration {mask.acceleration:.2f})")
    return EXIT_OK


# ---------------------------------------------------------- reconstruct


def _load_dataset(dataset: Path):
    manifest = _load_json(dataset / "manifest.json")
    spec = manifest["spec"]
    mask = SamplingMask(read_array(dataset / "mask.tnsr"))
    y = KSpaceData(np.where(mask.select, read_array(dataset / "kspace_sub.tnsr"), 0.0), mask)
    return manifest, spec, y


def _build_score(score_cfg: dict, crop: CropGeometry):
    kind = score_cfg.get("kind")
    if kind == "net":
        weights = load_weights(score_cfg["weights"])
        return DeskScoreNet(weights)
    if kind == "gaussian":
        mean = read_array(score_cfg["mean"])
        return GaussianScore(mean, np.full(mean.shape, float(score_cfg["var"])))
    if kind == "mixture":
        means = read_array(score_cfg["means"])
        return GaussianMixtureScore(means, var=float(score_cfg["var"]))
    raise ValidationError(f"unknown score kind {kind!r} (expected net|gaussian|mixture)")


def _recon_config_from_json(cfg: dict, shape, mask_kind: str, seed) -> ReconConfig:
    base = desk_recon_config(mask_kind, shape[0], shape[1])
    crop_hw = cfg.get("crop", [base.crop.crop_height, base.crop.crop_width])
    geom = CropGeometry(shape[0], shape[1], crop_hw[0], crop_hw[1])
    return ReconConfig(
        n_steps=int(cfg.get("n_steps", base.n_steps)),
        corrector_steps=int(cfg.get("corrector_steps", base.corrector_steps)),
        snr=float(cfg.get("snr", base.snr)),
        sigma_min=float(cfg.get("sigma_min", base.sigma_min)),
        sigma_max=float(cfg.get("sigma_max", base.sigma_max)),
        lambda_endpoints=tuple(cfg.get("lambda", base.lambda_endpoints)),
        mu_endpoints=tuple(cfg.get("mu", base.mu_endpoints)),
        crop=geom,
        seed=int(seed if seed is not None else cfg.get("seed", base.seed)),
        update_coils=bool(cfg.get("update_coils", base.update_coils)),
        double_dc=bool(cfg.get("double_dc", base.double_dc)),
        fsde_sigma_squared=bool(cfg.get("fsde_sigma_squared", base.fsde_sigma_squared)),
        renormalize_coils=bool(cfg.get("renormalize_coils", base.renormalize_coils)),
    )


def _config_to_json(cfg: ReconConfig) -> dict:
    return {
        "n_steps": cfg.n_steps, "corrector_steps": cfg.corrector_steps, "snr": cfg.snr,
        "sigma_min": cfg.sigma_min, "sigma_max": cfg.sigma_max,
        "lambda": list(cfg.lambda_endpoints), "mu": list(cfg.mu_endpoints),
        "crop": [cfg.crop.crop_height, cfg.crop.crop_width], "seed": cfg.seed,
        "update_coils": cfg.update_coils, "double_dc": cfg.double_dc,
        "fsde_sigma_squared": cfg.fsde_sigma_squared,
        "renormalize_coils": cfg.renormalize_coils,
    }


def _reconstruct_one(dataset: Path, out: Path, args) -> int:
    manifest, spec, y = _load_dataset(dataset)
    shape = y.shape
    mask_kind = spec.get("mask", {}).get("kind", "cartesian")

    raw = _resolve_spec(_load_json(args.config)) if args.config else {}
    cfg_json = dict(raw.get("config", raw))
    if args.steps is not None:
        cfg_json["n_steps"] = args.steps
    if args.weights is not None:
        cfg_json["score"] = {"kind": "net", "weights": str(args.weights)}

    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.method == "zf":
        recon = zf_reconstruct(y)
        coils_est = zf_coil_init(y)
        cfg_record = {}
    elif args.method == "tv":
        allowed = {"weight", "epsilon", "outer_iters", "image_steps_per_iter",
                   "image_step", "mu_endpoints", "update_coils"}
        params = TvParams(**{k: (tuple(v) if k == "mu_endpoints" else v)
                             for k, v in cfg_json.items() if k in allowed})
        recon, coils_est = tv_reconstruct(y, params)
        cfg_record = asdict(params)
    else:
        score_cfg = cfg_json.pop("score", None)
        if score_cfg is None:
            raise ValidationError("method=diffusion needs a score "
                                  "(config \"score\" entry or --weights)")
        cfg = _recon_config_from_json(cfg_json, shape, mask_kind, args.seed)
        score = _build_score(score_cfg, cfg.crop)
        recon, coils_est = reconstruct(y, cfg, score)
        cfg_record = {**_config_to_json(cfg), "score": score_cfg}
    runtime = time.perf_counter() - t0

    tensor_write(out / "recon.tnsr", recon)
    tensor_write(out / "coils_est.tnsr", coils_est)
    _write_manifest(out, "reconstruct", {
        "dataset": str(dataset),
        "method": args.method,
        "seed": args.seed,
        "config": cfg_record,
        "runtime_s": runtime,
        "outputs": ["recon.tnsr", "coils_est.tnsr"],
    })
    print(f"{args.method} reconstruction of {dataset} done in {runtime:.2f} s -> {out}")
    return EXIT_OK


def _reconstruct_entry(packed):
    dataset, out, args = packed
    return _reconstruct_one(Path(dataset), Path(out), args)


def cmd_reconstruct(args) -> int:
    datasets = [Path(d) for d in args.dataset]
    if len(datasets) == 1:
        return _reconstruct_one(datasets[0], Path(args.out), args)
    outs = [Path(args.out) / d.name for d in datasets]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_reconstruct_entry,
                                  [(str(d), str(o), args) for d, o in zip(datasets, outs)]))
    else:
        codes = [_reconstruct_one(d, o, args) for d, o in zip(datasets, outs)]
    return max(codes)


# ------------------------------------------------------------- evaluate


def _crop_image(img: np.ndarray, crop_hw, shape) -> RealImage:
    geom = CropGeometry(shape[0], shape[1], crop_hw[0], crop_hw[1])
    return RealImage(crop_center(img, geom))


def cmd_evaluate(args) -> int:
    dataset = Path(args.dataset)
    manifest, spec, y = _load_dataset(dataset)
    gt = read_array(dataset / "phantom.tnsr")
    shape = gt.shape
    full_mask = SamplingMask(np.ones(shape))
    y_full = KSpaceData(read_array(dataset / "kspace_full.tnsr"), full_mask)
    crop_hw = spec.get("crop", [64, 64])
    gt_crop = _crop_image(gt, crop_hw, shape)

    records = []
    for recon_dir in map(Path, args.recon):
        rman = _load_json(recon_dir / "manifest.json")
        recon = read_array(recon_dir / "recon.tnsr")
        coils_est = CoilSet(read_array(recon_dir / "coils_est.tnsr"))
        recon_crop = _crop_image(recon, crop_hw, shape)
        val = psnr(recon_crop, gt_crop)
        record = {
            "method": rman.get("method", "unknown"),
            "psnr_db": "inf" if val == float("inf") else val,
            "nullspace_norm": nullspace_residual(y_full, coils_est)[1],
            "runtime_s": rman.get("runtime_s"),
        }
        if args.correct_intensity:
            mapping = fit_intensity_map(recon_crop.data.ravel(), gt_crop.data.ravel())
            corrected = apply_intensity_map(mapping, recon_crop)
            cval = psnr(corrected, gt_crop)
            record["psnr_corrected_db"] = "inf" if cval == float("inf") else cval
        records.append(record)

    metrics = {"case_id": dataset.name, "mask": spec.get("mask", {}), "records": records}
    out_path = Path(args.out) if args.out else dataset / "metrics.json"
    with open(out_path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for rec in records:
        extra = f" nullspace {rec['nullspace_norm']:.4f}" if rec["nullspace_norm"] is not None else ""
        print(f"{rec['method']:10} psnr {rec['psnr_db']}{extra}")
    return EXIT_OK


# ---------------------------------------------------------------- masks


def cmd_masks(args) -> int:
    spec = MaskSpec(kind=args.kind, acceleration=args.acceleration,
                    acs_fraction=args.acs_fraction, spokes=args.spokes,
                    seed=args.seed if args.seed is not None else 0,
                    two_dim=args.two_dim)
    mask = make_mask((args.height, args.width), spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor_write(out, mask)
    sidecar = out.with_suffix(out.suffix + ".json")
    with open(sidecar, "w") as fh:
        json.dump({"tool": "diffrecon", "version": __version__, "spec": spec.to_json(),
                   "shape": [args.height, args.width],
                   "acceleration": mask.acceleration,
                   "selected": mask.num_selected}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{args.kind} mask {args.height}x{args.width}: "
          f"{mask.num_selected} samples, acceleration {mask.acceleration:.2f}")
    return EXIT_OK


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffrecon",
                                     description="Joint MRI reconstruction and coil estimation")
    parser.add_argument("--version", action="version", version=f"diffrecon {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON case spec (or a manifest from a previous run)")
    p.add_argument("--seed", type=int, help="override the phantom seed")
    p.add_argument("--train-stack", type=int, metavar="K",
                   help="write K crop-sized phantoms for the trainer instead of a dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct one or more datasets")
    p.add_argument("--dataset", nargs="+", required=True)
    p.add_argument("--method", choices=["zf", "tv", "diffusion"], default="diffusion")
    p.add_argument("--config", help="JSON solver config (or a manifest from a previous run)")
    p.add_argument("--weights", help="SDW1 score-net weights (shortcut for a net score)")
    p.add_argument("--steps", type=int, help="override the reverse-step count")
    p.add_argument("--seed", type=int, help="override the sampler seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for multiple datasets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compute metrics for reconstructions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--recon", nargs="+", required=True)
    p.add_argument("--correct-intensity", action="store_true")
    p.add_argument("--out", help="metrics JSON path (default: dataset/metrics.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("masks", help="generate a sampling mask")
    p.add_argument("--kind", choices=["cartesian", "cartesian-swapped", "gaussian", "radial"],
                   required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--acceleration", type=float, default=4.0)
    p.add_argument("--acs-fraction", type=float, default=0.08)
    p.add_argument("--spokes", type=int, default=45)
    p.add_argument("--seed", type=int)
    p.add_argument("--two-dim", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_masks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TensorIOError, WeightsFormatError, FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
