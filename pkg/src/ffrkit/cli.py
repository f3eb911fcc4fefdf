"""Command-line interface.

Thread pinning has to happen before numpy first loads its BLAS, so ``main``
scans argv for ``--threads`` and sets the usual environment knobs before any
heavy import; everything else is plain argparse + dispatch into the pipeline
commands. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
training failure.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _scan_threads(argv: list[str]) -> int | None:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            raw = argv[i + 1]
        elif arg.startswith("--threads="):
            raw = arg.split("=", 1)[1]
        else:
            continue
        try:
            return int(raw)
        except ValueError:
            return None  # argparse will report it properly
    return None


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ffrkit",
        description="Multi-fidelity vessel hemodynamics: generate, train, predict.",
    )
    p.add_argument("--config", help="run config file (INI sections per stage)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", default="runs/default", help="run output directory")
    p.add_argument("--threads", type=int, help="pin BLAS/OpenMP thread count")
    sub = p.add_subparsers(dest="command", required=True)

    def tagged(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--tag", default="train", choices=("train", "test"))
        return sp

    tagged("gen-vessels", "sample designs and write a vessel dataset")
    tagged("gen-hemo", "solve LF + HF per vessel and write paired datasets")
    sub.add_parser("train-ae", help="train the geometry autoencoder")
    sub.add_parser("train-ffu", help="train the fusion-net deep ensemble")

    pp = sub.add_parser("predict", help="predict one vessel with uncertainty")
    pp.add_argument("--index", type=int, required=True)
    pp.add_argument("--tag", default="test", choices=("train", "test"))
    pp.add_argument("--vessel-file", help="dataset to read instead of the run's")
    pp.add_argument("--q", type=float, help="flow rate override [m^3/s]")

    ap = sub.add_parser("attention", help="export a projected attention map")
    ap.add_argument("--index", type=int, required=True)
    ap.add_argument("--tag", default="test", choices=("train", "test"))
    ap.add_argument("--vessel-file")

    ep = sub.add_parser("eval", help="evaluate bundles on the held-out pairs")
    ep.add_argument("--tag", default="test", choices=("train", "test"))

    sub.add_parser("export-plots", help="write aligned plot columns per vessel")
    sub.add_parser("run", help="full chain: generate, train, evaluate, export")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    threads = _scan_threads(argv)
    if threads is not None and threads > 0:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    from . import pipeline
    from .errors import DataError, NumericError

    try:
        cfg = (
            pipeline.parse_run_config(args.config)
            if args.config
            else pipeline.default_run_config()
        )
        if args.seed is not None:
            cfg.seed = args.seed
        out = args.out

        if args.command == "gen-vessels":
            path = pipeline.cmd_gen_vessels(cfg, out, tag=args.tag)
            print(path)
        elif args.command == "gen-hemo":
            manifest = pipeline.cmd_gen_hemo(cfg, out, tag=args.tag)
            print(
                f"{manifest['n_valid']}/{manifest['n_input']} admissible, "
                f"{len(manifest['failures'])} skipped"
            )
        elif args.command == "train-ae":
            _, history = pipeline.cmd_train_ae(cfg, out)
            print(f"autoencoder: {len(history)} epochs, best val {min(h['val'] for h in history):.6e}")
        elif args.command == "train-ffu":
            ens, histories = pipeline.cmd_train_ffu(cfg, out)
            best = [min(h["val"] for h in hist) for hist in histories]
            print(
                f"ensemble: {len(ens.members)} members, best val "
                + " ".join(f"{b:.6e}" for b in best)
            )
        elif args.command == "predict":
            pred = pipeline.cmd_predict(
                cfg, out, args.index, tag=args.tag, vessel_file=args.vessel_file, Q=args.q
            )
            p_in = pred.mean.bc.p_in
            ffr_out = pred.mean.P[-1] / p_in
            band = 2.0 * float(pred.sigma2_total[-1]) ** 0.5
            print(f"vessel {args.index}: outlet FFR {ffr_out:.4f} +- {band:.4f} (2 sigma)")
        elif args.command == "attention":
            amap = pipeline.cmd_attention(
                cfg, out, args.index, tag=args.tag, vessel_file=args.vessel_file
            )
            print(
                f"vessel {args.index}: attention over {amap.source_layer}, "
                f"peak {amap.projected.max():.4g}"
            )
        elif args.command == "eval":
            report = pipeline.cmd_eval(cfg, out, tag=args.tag)
            print(
                f"eval: {report.n_vessels} vessels, FFR MSE "
                f"{report.aggregate('ffr_mse_model'):.3e} (LF {report.aggregate('ffr_mse_lf'):.3e}), "
                f"coverage {report.aggregate('coverage'):.3f}"
            )
        elif args.command == "export-plots":
            paths = pipeline.cmd_export_plots(cfg, out)
            print(f"{len(paths)} plot files under {os.path.join(out, 'plots')}")
        elif args.command == "run":
            report = pipeline.run_pipeline(cfg, out)
            print(
                f"run complete: {report.n_vessels} test vessels, FFR MSE "
                f"{report.aggregate('ffr_mse_model'):.3e} (LF {report.aggregate('ffr_mse_lf'):.3e})"
            )
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
