"""Command-line front end.

    solarhom run --config exp.json --seed 7 --out results/
    solarhom analyze parallel.ttag cross.ttag --config exp.json --out results/
    solarhom scan-ratio --out results/
    solarhom model-curves --out results/

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from . import __version__, config
from .correlate import (StreamingCorrelator, UndefinedVisibilityError, cw_g2_estimate,
                        dumps_json, pulsed_g2_estimate)
from .experiments import (HBT_OFFSET, ExperimentResult, gate_window, hom_summary, run_entanglement,
                          run_g2_cw, run_g2_pulsed, run_hom, run_model_curves, run_qd_qd_hom,
                          run_ratio_scan)
from .ttag import TTAGFormatError, iter_ttag

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("solarhom")


def execute(cfg: dict, out_dir: str | None = None) -> ExperimentResult:
    """Run the experiment described by a resolved configuration."""
    objs = config.build(cfg)
    kind = cfg["kind"]
    common = {"duration": cfg["duration_s"], "seed": cfg["seed"],
              "shard_count": cfg["shard_count"], "block_s": cfg["block_s"]}
    if kind == "hom":
        paths = None
        if cfg["write_ttag"] and out_dir:
            paths = {n: os.path.join(out_dir, f"{n}.ttag") for n in ("parallel", "cross")}
        return run_hom(objs["setup"], bins=cfg["bins_ps"], report_bin=cfg["report_bin_ps"],
                       ttag_paths=paths, **common)
    if kind == "g2_pulsed":
        det = objs["detector"].with_(gate_width=objs["qd"].period)
        return run_g2_pulsed(objs["qd"], det, bin_width=cfg["histogram_bin_ps"], **common)
    if kind == "g2_cw":
        return run_g2_cw(objs["hbt_sun"], objs["detector"], central_bin=cfg["central_bin_ps"],
                         suppression_duration=cfg["suppression_duration_s"], **common)
    if kind == "qd_qd_hom":
        det = objs["detector"].with_(gate_width=objs["qd"].period)
        return run_qd_qd_hom(objs["qd"], det, **common)
    if kind in ("entanglement", "chsh"):
        return run_entanglement(objs["setup"], cfg["entanglement_bin_ps"], cfg["target_fidelity"],
                                tuple(cfg["analyzer_angles_rad"]), cfg["pairs_per_setting"],
                                cfg["seed"], with_chsh=kind == "chsh",
                                target_stderr=cfg["target_stderr_S"])
    if kind == "ratio_scan":
        return run_ratio_scan(objs["qd"].g2_zero, cfg["ratio_g2_thermal"], cfg["m_eff"],
                              cfg["ratio_x_max"], cfg["ratio_points"])
    if kind == "model_curves":
        return run_model_curves(objs["setup"], cfg["model_tau_max_ps"], cfg["bins_ps"])
    raise config.ConfigError(f"unknown kind {kind!r}")


def analyze_files(paths, cfg: dict) -> ExperimentResult:
    """Analyse recorded TTAG files with the same estimators as ``run``.

    ``hom`` takes a parallel and a cross file; the HBT kinds take one file
    with tags on channels 2/3.
    """
    objs = config.build(cfg)
    det = objs["detector"]
    kind = cfg["kind"]
    duration = float(cfg["duration_s"])

    def correlate(path, ch, tau_max, bw, gate):
        corr = StreamingCorrelator(ch, ch + 1, tau_max, bw, gate=gate,
                                   resolution=det.tdc_resolution)
        for chunk in iter_ttag(path):
            corr.feed(chunk)
        return corr.result(duration)

    if kind == "hom":
        if len(paths) != 2:
            raise config.ConfigError("hom analysis needs a parallel and a cross TTAG file")
        tau_max = det.gate_width + 100.0 if det.gated else 2000.0
        hp = correlate(paths[0], 0, tau_max, det.tdc_resolution, gate_window(det))
        hx = correlate(paths[1], 0, tau_max, det.tdc_resolution, gate_window(det))
        return ExperimentResult(hom_summary(hp, hx, objs["setup"], cfg["bins_ps"],
                                            cfg["report_bin_ps"]), {"parallel": hp, "cross": hx})
    if len(paths) != 1:
        raise config.ConfigError(f"{kind} analysis takes one TTAG file")
    if kind == "g2_pulsed":
        period = objs["qd"].period
        h = correlate(paths[0], HBT_OFFSET, 2.0 * period, cfg["histogram_bin_ps"], None)
        g2, err = pulsed_g2_estimate(h, period)
    elif kind == "g2_cw":
        period = det.gate_period
        h = correlate(paths[0], HBT_OFFSET, 1.5 * period, det.tdc_resolution, None)
        cb = cfg["central_bin_ps"]
        g2, err = cw_g2_estimate(h, cb, [(-period - cb / 2, -period + cb / 2),
                                         (period - cb / 2, period + cb / 2)])
    else:
        raise config.ConfigError(f"kind {kind!r} has no tag-file analysis")
    return ExperimentResult({"kind": kind, "g2": g2, "stderr": err, "visibility": None,
                             "bin_ps": h.bin_width, "acquisition_s": duration,
                             "rates": {"singles_per_s": [s / duration for s in h.singles]}},
                            {"hbt": h})


def _table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, cfg: dict, out_dir: str, fmt: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written.append(path)

    summary = dict(result.summary)
    summary["config"] = cfg
    summary["version"] = __version__
    put("summary.json", dumps_json(summary) + "\n")
    for name, hist in result.histograms.items():
        if fmt == "csv":
            put(f"histogram_{name}.csv", hist.to_csv())
        else:
            put(f"histogram_{name}.json", dumps_json(hist.to_dict()) + "\n")
    for name, (header, rows) in result.tables.items():
        if fmt == "csv":
            put(f"{name}.csv", _table_csv(header, rows))
        else:
            put(f"{name}.json", dumps_json([dict(zip(header, r)) for r in rows]) + "\n")
    return written


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solarhom", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=True):
        sp.add_argument("--config", help="JSON experiment configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--shards", type=int, help="worker processes for generation")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of histogram and table files")

    common(sub.add_parser("run", help="run a configured experiment"))
    sp = sub.add_parser("analyze", help="analyse recorded TTAG files")
    sp.add_argument("tagfiles", nargs="+")
    common(sp)
    common(sub.add_parser("scan-ratio", help="visibility against intensity ratio"))
    common(sub.add_parser("model-curves", help="tabulate the analytic coincidence densities"))
    return p


def _resolve(args, kind: str | None = None) -> dict:
    user = config.load(args.config) if args.config else {}
    if kind is not None:
        user = dict(user, kind=kind)
        if user.get("seed") is None and args.seed is None:
            user["seed"] = 0  # deterministic tabulations need no seed
    return config.resolve(user, seed=args.seed, shard_count=args.shards)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _resolve(args)
            os.makedirs(args.out, exist_ok=True)
            result = execute(cfg, args.out)
        elif args.command == "analyze":
            cfg = _resolve(args)
            result = analyze_files(args.tagfiles, cfg)
        elif args.command == "scan-ratio":
            cfg = _resolve(args, "ratio_scan")
            result = execute(cfg)
        else:
            cfg = _resolve(args, "model_curves")
            result = execute(cfg)
        for path in write_outputs(result, cfg, args.out, args.format):
            log.info("wrote %s", path)
        print(json.dumps({k: v for k, v in result.summary.items()
                          if k in ("kind", "visibility", "stderr", "g2", "S", "fidelity",
                                   "argmax_x", "crossing_ps")}, default=str))
    except config.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TTAGFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, UndefinedVisibilityError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
