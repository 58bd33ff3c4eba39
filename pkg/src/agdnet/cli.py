"""Command-line entry point: ``agdnet {synth,train,infer,bicubic,eval,gradcheck}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import fileio, gradcheck, metrics
from .config import load_run_config
from .errors import ConfigurationError, DimensionError, FormatError, ParameterError
from .network import AGDModel, set_fixed_srf
from .observation import SRF, default_srf, spectral_bicubic
from .trainer import Sample, make_samples, reconstruct, split_by_scene, synthetic_samples, train

log = logging.getLogger("agdnet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERIFY = 4

MANIFEST = "manifest.json"
METRIC_KEYS = ("psnr", "assim", "sam", "rmse")


class VerificationFailed(Exception):
    pass


def _dump_json(path, doc) -> None:
    fileio.atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _load_srf(arg: str, s: int) -> SRF:
    return default_srf(s) if arg == "gaussian" else fileio.read_srf_csv(arg)


# -- synth ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    srf = _load_srf(args.srf, args.s)
    if srf.band_count != args.s:
        raise DimensionError(f"SRF has {srf.band_count} bands, --s is {args.s}")
    lib = None if args.library_size == 0 else args.library_size
    samples = synthetic_samples(args.scenes, args.s, args.h, args.w, args.rank, [srf],
                                noise_sigma=args.noise, seed=args.seed, library_size=lib)
    pairs = []
    for smp in samples:
        hs_name, rgb_name = f"hs_{smp.scene:03d}.hsi", f"rgb_{smp.scene:03d}.hsi"
        fileio.write_hsi(out / hs_name, smp.hs)
        fileio.write_hsi(out / rgb_name, smp.rgb)
        pairs.append({"scene": smp.scene, "hs": hs_name, "rgb": rgb_name})
    fileio.write_srf_csv(out / "srf.csv", srf)
    _dump_json(out / MANIFEST, {
        "s": args.s, "h": args.h, "w": args.w, "rank": args.rank, "noise": args.noise,
        "seed": args.seed, "library_size": args.library_size, "srf": "srf.csv", "pairs": pairs,
    })
    print(f"wrote {len(pairs)} scene pairs to {out}")
    return EXIT_OK


def load_dataset(data_dir) -> tuple[list[Sample], SRF, dict]:
    data_dir = Path(data_dir)
    try:
        manifest = json.loads((data_dir / MANIFEST).read_text(encoding="utf-8"))
        pairs = manifest["pairs"]
        srf = fileio.read_srf_csv(data_dir / manifest["srf"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{data_dir / MANIFEST}: malformed manifest ({exc})") from None
    samples = []
    for p in pairs:
        hs = fileio.read_hsi(data_dir / p["hs"])
        rgb = fileio.read_hsi(data_dir / p["rgb"])
        if rgb.shape != (3,) + hs.shape[1:] or hs.shape[0] != srf.band_count:
            raise DimensionError(f"pair {p['hs']}/{p['rgb']} has inconsistent shapes {hs.shape}, {rgb.shape}")
        samples.append(Sample(hs, rgb, srf, int(p["scene"])))
    return samples, srf, manifest


# -- train ----------------------------------------------------------------------

def cmd_train(args) -> int:
    run = load_run_config(args.config)
    samples, srf, manifest = load_dataset(args.data)
    net = run.net
    if samples[0].hs.shape[0] != net.s:
        raise ConfigurationError(f"data has {samples[0].hs.shape[0]} bands, config net.s is {net.s}")
    if args.fixed_srf:
        fixed = fileio.read_srf_csv(args.fixed_srf)
        if fixed.band_count != net.s:
            raise DimensionError(f"--fixed-srf has {fixed.band_count} bands, model expects {net.s}")
        samples = [smp._replace(srf=fixed) for smp in samples]
    elif args.multi_srf:
        paths = sorted(Path(args.multi_srf).glob("*.csv"))
        if not paths:
            raise ConfigurationError(f"no SRF CSV files in {args.multi_srf}")
        srfs = [fileio.read_srf_csv(p) for p in paths]
        for p, c in zip(paths, srfs):
            if c.band_count != net.s:
                raise DimensionError(f"{p} has {c.band_count} bands, model expects {net.s}")
        scenes = {smp.scene: smp.hs for smp in samples}
        order = sorted(scenes)
        renamed = make_samples([scenes[i] for i in order], srfs, float(manifest.get("noise", 0.0)),
                               seed=int(manifest.get("seed", 0)))
        samples = [smp._replace(scene=order[smp.scene]) for smp in renamed]
    if args.fixed_srf or args.multi_srf:
        net = replace(net, mode="fixed_srf")
    model = AGDModel(net)
    if net.mode == "fixed_srf":
        set_fixed_srf(model, samples[0].srf)
    tr, held = split_by_scene(samples, args.holdout) if args.holdout > 0 else (samples, [])
    log.info("training on %d samples, %d held out", len(tr), len(held))
    result = train(model, tr, run.train, heldout=held,
                   callbacks=[lambda r: log.info("epoch %(epoch)d loss %(loss).5f", r)])
    if net.mode == "fixed_srf":
        set_fixed_srf(model, samples[0].srf)
    fileio.save_checkpoint(args.out, model)
    history_path = args.history or str(args.out) + ".history.json"
    _dump_json(history_path, {"config": run.to_dict(), "history": result.history})
    last = result.history[-1]
    print(f"trained {run.train.epochs} epochs, final loss {last['loss']:.6f}; wrote {args.out}")
    return EXIT_OK


# -- infer / bicubic ------------------------------------------------------------

def _write_prediction(out, cube, preview) -> None:
    fileio.write_hsi(out, cube)
    preview = preview or str(Path(out).with_suffix(".ppm"))
    fileio.write_ppm(preview, cube)
    print(f"wrote {out} and preview {preview}")


def cmd_infer(args) -> int:
    model = fileio.load_checkpoint(args.ckpt)
    rgb = fileio.read_hsi(args.rgb)
    if rgb.shape[0] != 3:
        raise DimensionError(f"{args.rgb} has {rgb.shape[0]} channels, expected 3")
    srf = None
    if args.srf:
        if model.cfg.mode != "fixed_srf":
            raise ConfigurationError("--srf applies only to checkpoints trained in fixed-SRF mode")
        srf = fileio.read_srf_csv(args.srf)
    elif model.cfg.mode == "fixed_srf" and model.fixed_srf is None:
        raise ConfigurationError("fixed-SRF checkpoint without a stored SRF needs --srf")
    _write_prediction(args.out, reconstruct(model, rgb, srf), args.preview)
    return EXIT_OK


def cmd_bicubic(args) -> int:
    rgb = fileio.read_hsi(args.rgb)
    srf = fileio.read_srf_csv(args.srf)
    res = spectral_bicubic(rgb, srf, return_status=True)
    if res.degenerate:
        log.warning("SRF centroids too close; fell back to the channel mean")
    _write_prediction(args.out, res.cube, args.preview)
    return EXIT_OK


# -- eval -------------------------------------------------------------------------

def format_table(report: dict) -> str:
    lines = [f"{'metric':<8}{'value':>12}"]
    lines += [f"{k:<8}{report[k]:>12.4f}" for k in METRIC_KEYS]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    pred = fileio.read_hsi(args.pred)
    truth = fileio.read_hsi(args.truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
    report = metrics.evaluate_all(truth, pred)
    report = {k: float(report[k]) for k in METRIC_KEYS}
    _dump_json(args.report, report)
    table = format_table(report)
    fileio.atomic_write(str(args.report) + ".txt", table.encode("ascii"))
    sys.stdout.write(table)
    return EXIT_OK


# -- gradcheck ------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    report = gradcheck.run_suite(range(args.seeds))
    for r in report.results:
        print(r.line())
    print(f"{'all checks passed' if report.passed else 'FAILED'} in {report.seconds:.1f}s")
    if not report.passed:
        raise VerificationFailed("finite-difference suite failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agdnet", description="Spectral reconstruction from RGB by amended gradient descent.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic HS/RGB pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=16)
    p.add_argument("--s", type=int, default=16)
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--w", type=int, default=64)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--srf", default="gaussian", help="SRF CSV file or 'gaussian'")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--library-size", type=int, default=8, help="shared material signatures (0: fresh per scene)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a synth directory")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fixed-srf", help="train in fixed-SRF mode with this SRF")
    g.add_argument("--multi-srf", help="directory of SRF CSVs; fixed-SRF mode over all of them")
    p.add_argument("--history", help="history JSON path (default: OUT.history.json)")
    p.add_argument("--holdout", type=float, default=0.2, help="fraction of scenes held out for metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct an HS cube from an RGB file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--srf", help="SRF for fixed-SRF checkpoints")
    p.add_argument("--preview", help="PPM preview path (default: OUT with .ppm)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bicubic", help="spectral bicubic baseline")
    p.add_argument("--rgb", required=True)
    p.add_argument("--srf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preview")
    p.set_defaults(func=cmd_bicubic)

    p = sub.add_parser("eval", help="compare a prediction with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ParameterError, DimensionError) as exc:
        print(f"agdnet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"agdnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VerificationFailed as exc:
        print(f"agdnet: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
