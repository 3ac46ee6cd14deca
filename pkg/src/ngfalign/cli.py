"""Command-line interface: register, csngf-map, gen-dataset, evaluate, bench."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .ngf import NgfConfig, gradient, normalize
from .simmap import SQUARED, UNSQUARED, argmax_displacement, csngf_map_fft, usngf_map_fft
from .search import (
    PyramidConfig,
    SearchConfig,
    global_search,
    scaled_schedule,
)
from .volume import Mask, RigidTransform, Volume, full_mask, load_volume, save_volume

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ngfalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("register", help="globally align a floating volume to a reference")
    p.add_argument("reference")
    p.add_argument("floating")
    p.add_argument("--config", default=None, help="JSON search configuration")
    p.add_argument("--out", default=None, help="result JSON path")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--measure", choices=[SQUARED, UNSQUARED], default=None)
    p.add_argument("--invert-floating", action="store_true")
    common(p)

    p = sub.add_parser("csngf-map", help="dump the zero-rotation similarity map")
    p.add_argument("reference")
    p.add_argument("floating")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--measure", choices=[SQUARED, UNSQUARED], default=SQUARED)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-dataset", help="generate a synthetic displaced-pair dataset")
    p.add_argument("spec", help="dataset spec JSON")
    p.add_argument("out_dir")

    p = sub.add_parser("evaluate", help="run the search over a generated dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory for CSV files")
    common(p)

    p = sub.add_parser("bench", help="FFT vs direct runtime comparison")
    p.add_argument("--sizes", default="8,16,32", help="comma-separated cube side lengths")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    common(p)

    return parser


def _load_json(path, kind: str):
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"{kind} file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise _UsageError(f"invalid {kind} JSON {path}: {exc}") from exc


def _configs_from_json(cfg: dict, dims) -> tuple[PyramidConfig, SearchConfig, list[str]]:
    base = scaled_schedule(dims)
    pcfg = PyramidConfig(
        levels=int(cfg.get("levels", base.levels)),
        d=tuple(cfg.get("d", base.d)),
        sigma=tuple(cfg.get("sigma", base.sigma)),
        u=tuple(cfg.get("u", base.u)),
        a=tuple(cfg.get("a", base.a)),
        p=tuple(cfg.get("p", base.p)),
    )
    scfg = SearchConfig(
        gamma=float(cfg.get("gamma", 0.5)),
        epsilon=float(cfg.get("epsilon", 1e-5)),
        measure=cfg.get("measure", SQUARED),
        invert_floating=bool(cfg.get("invert_floating", False)),
        rng_seed=int(cfg.get("seed", 0)),
    )
    variants = list(cfg.get("variants", ["squared"]))
    return pcfg, scfg, variants


def _cmd_register(args) -> int:
    cfg = _load_json(args.config, "config") if args.config else {}
    ref_v, ref_m = load_volume(args.reference)
    flo_v, flo_m = load_volume(args.floating)
    pcfg, scfg, _ = _configs_from_json(cfg, ref_v.dims)
    if args.gamma is not None:
        scfg = replace(scfg, gamma=args.gamma)
    if args.measure is not None:
        scfg = replace(scfg, measure=args.measure)
    if args.invert_floating:
        scfg = replace(scfg, invert_floating=True)
    if args.seed is not None:
        scfg = replace(scfg, rng_seed=args.seed)
    scfg = replace(scfg, threads=max(1, args.threads))

    result = global_search(ref_v, ref_m, flo_v, flo_m, pcfg, scfg)
    payload = {
        "euler_deg": list(result.transform.euler_deg),
        "translation_vx": list(result.transform.translation_vx),
        "center_vx": list(result.transform.center_vx),
        "score": result.score,
        "per_level": [
            [
                {"euler_deg": list(c.euler_deg), "chi": list(c.chi), "score": c.score}
                for c in level
            ]
            for level in result.history
        ],
        "wall_time_s": result.wall_time_s,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"score={result.score:.6f} wall_time_s={result.wall_time_s:.2f}")
    return EXIT_OK


def _cmd_csngf_map(args) -> int:
    ref_v, ref_m = load_volume(args.reference)
    flo_v, flo_m = load_volume(args.floating)
    cfg = NgfConfig()
    ref_ngf = normalize(gradient(ref_v, ref_m), cfg)
    flo_ngf = normalize(gradient(flo_v, flo_m), cfg)
    mapper = csngf_map_fft if args.measure == SQUARED else usngf_map_fft
    smap = mapper(ref_ngf, ref_m, flo_ngf, flo_m, args.gamma)
    chi, score = argmax_displacement(smap)

    out = Path(args.out)
    data_name = out.stem + ".raw"
    header = {
        "dims": list(smap.score.shape),
        "dtype": "f64",
        "order": "x-fastest",
        "spacing": [1.0, 1.0, 1.0],
        "data": data_name,
        "origin_chi": list(smap.origin),
        "gamma": smap.gamma,
        "measure": smap.measure,
    }
    smap.score.astype("<f8").ravel(order="F").tofile(out.parent / data_name)
    out.write_text(json.dumps(header, indent=2) + "\n")
    print(f"peak chi={chi} score={score:.6f}")
    return EXIT_OK


def _cmd_gen_dataset(args) -> int:
    spec = _load_json(args.spec, "dataset spec")
    n = int(spec.get("n", 1))
    master = int(spec.get("seed", 0))
    pspec = harness.PhantomSpec(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in spec.get("phantom", {}).items()
    })
    tspec = harness.TrialSpec(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in spec.get("trial", {}).items()
    })
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        pseed = harness.derive_seed(master, i, 0)
        tseed = harness.derive_seed(master, i, 1)
        a, b = harness.gen_phantom_pair(replace(pspec, seed=pseed))
        (ref_v, ref_m), (flo_v, flo_m), gt = harness.make_trial(
            a, b, replace(tspec, seed=tseed)
        )
        tdir = out_dir / f"trial_{i:03d}"
        tdir.mkdir(exist_ok=True)
        save_volume(ref_v, ref_m, tdir / "ref.json")
        save_volume(flo_v, flo_m, tdir / "flo.json")
        (tdir / "gt.json").write_text(
            json.dumps(
                {
                    "euler_deg": list(gt.euler_deg),
                    "translation_vx": list(gt.translation_vx),
                    "center_vx": list(gt.center_vx),
                },
                indent=2,
            )
            + "\n"
        )
    (out_dir / "dataset.json").write_text(
        json.dumps({"n": n, "seed": master, "block_dims": list(tspec.block_dims)}, indent=2)
        + "\n"
    )
    print(f"wrote {n} trials to {out_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    ds_dir = Path(args.dataset_dir)
    meta_path = ds_dir / "dataset.json"
    if not meta_path.is_file():
        raise _UsageError(f"not a dataset directory (no dataset.json): {ds_dir}")
    meta = json.loads(meta_path.read_text())
    cfg = _load_json(args.config, "config") if args.config else {}
    block_dims = tuple(meta["block_dims"])
    pcfg, scfg, variants = _configs_from_json(cfg, block_dims)
    if args.seed is not None:
        scfg = replace(scfg, rng_seed=args.seed)
    scfg = replace(scfg, threads=max(1, args.threads))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(int(meta["n"])):
        tdir = ds_dir / f"trial_{i:03d}"
        ref_v, ref_m = load_volume(tdir / "ref.json")
        flo_v, flo_m = load_volume(tdir / "flo.json")
        gt_meta = json.loads((tdir / "gt.json").read_text())
        gt = RigidTransform(
            tuple(gt_meta["euler_deg"]),
            tuple(gt_meta["translation_vx"]),
            tuple(gt_meta["center_vx"]),
        )
        for vi, variant in enumerate(variants):
            vcfg = harness.variant_config(scfg, variant)
            vcfg = replace(vcfg, rng_seed=harness.derive_seed(scfg.rng_seed, i, 2, vi))
            t0 = time.perf_counter()
            result = global_search(ref_v, ref_m, flo_v, flo_m, pcfg, vcfg)
            elapsed = time.perf_counter() - t0
            d_e = harness.corner_error(gt, result.transform, block_dims)
            records.append(
                harness.TrialRecord(
                    trial=i,
                    seed=scfg.rng_seed,
                    variant=variant,
                    gt=gt,
                    recovered=result.transform,
                    d_e=d_e,
                    success=d_e < harness.SUCCESS_THRESHOLD_VX,
                    time_s=elapsed,
                )
            )
    harness.write_trials_csv(records, out_dir / "trials.csv")
    harness.write_cumulative_csv(records, out_dir / "cumulative.csv")
    for variant, rate in harness.success_rate(records).items():
        print(f"success_rate[{variant}] @ {harness.SUCCESS_THRESHOLD_VX} vx = {rate:.3f}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad --sizes value {args.sizes!r}") from exc
    if not sizes:
        raise _UsageError("no sizes given")
    seed = args.seed if args.seed is not None else 0
    rows = harness.bench_oracle(sizes, repeats=args.repeats, seed=seed)
    harness.write_bench_csv(rows, args.out)
    for size, td, tf, ratio in rows:
        print(f"size={size} direct={td:.4f}s fft={tf:.4f}s ratio={ratio:.1f}x")
    return EXIT_OK


_COMMANDS = {
    "register": _cmd_register,
    "csngf-map": _cmd_csngf_map,
    "gen-dataset": _cmd_gen_dataset,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
