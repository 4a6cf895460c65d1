"""Command-line entry point: ``muonad train|gradcheck|bench|metrics``.

Exit codes: 0 success, 1 a check or run failed, 2 invalid input, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, config_from_dict, deep_merge, with_overrides
from .metrics import (ADF_ANGLES, MCR_TAU, SSIM_WINDOW, GaussianFit, adf, frechet_distance, mcr,
                      ssim)
from .tensor import RNG_ALGORITHM, make_rng
from .trainer import ROW_FIELDS, gradcheck, run_train

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_IO = 0, 1, 2, 3

BENCH_FIELDS = (
    "label", "iterations_to_threshold", "final_L_distill", "final_L_content", "final_L_total",
    "final_density", "failed", "wall_time",
)
GRADCHECK_RUNS = 20
MCR_LEVELS = (1, 2, 3, 4)


class InputError(Exception):
    """Invalid user input; the message names the offending field or file."""


class OutputError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed: not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed: must be a 64-bit unsigned integer")
    return v


def _load_json(path) -> object:
    try:
        return io.read_json(path)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except io.InputFormatError as e:
        raise InputError(str(e)) from None
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from None


def load_config(path=None, seed=None) -> ExperimentConfig:
    cfg = ExperimentConfig() if path is None else config_from_dict(_load_json(path))
    if seed is not None:
        cfg = with_overrides(cfg, seed=seed)
    return cfg


def _write(path: Path, text: str):
    try:
        io.write_text(path, text)
    except OSError as e:
        raise OutputError(f"{path}: {e.strerror or e}") from None


def write_run(record, out_dir, fmt: str):
    out = Path(out_dir)
    if fmt in ("json", "both"):
        _write(out / "run.json", io.dumps(record.to_json(), indent=1) + "\n")
        _write(out / "masks.json", io.dumps([m.to_json() for m in record.masks], indent=1) + "\n")
        if record.curriculum:
            _write(out / "curriculum.json", io.dumps(record.curriculum, indent=1) + "\n")
    if fmt in ("csv", "both"):
        _write(out / "rows.csv", io.csv_text(ROW_FIELDS, record.rows))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    record = run_train(cfg)
    write_run(record, args.out or cfg.output_path, args.format)
    print(io.dumps(record.summary, indent=1))
    return EXIT_OK


def random_gradcheck_configs(seed: int, count: int = GRADCHECK_RUNS) -> list:
    """Small random models (n, d <= 8) for the finite-difference check."""
    rng = make_rng(seed)
    out = []
    for i in range(count):
        out.append(with_overrides(
            ExperimentConfig(),
            label=f"gradcheck-{i}",
            seed=int(rng.integers(0, 2**63)),
            model={
                "num_layers": int(rng.integers(1, 5)),
                "token_count": int(rng.integers(2, 9)),
                "embed_dim": int(rng.integers(2, 9)),
            },
        ))
    return out


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        cfg = load_config(args.config, args.seed)
        m = cfg.model
        for name in ("token_count", "embed_dim"):
            if getattr(m, name) > 8:
                raise InputError(f"model.{name}: gradcheck needs a value <= 8")
        configs = [cfg]
    else:
        configs = random_gradcheck_configs(args.seed if args.seed is not None else 0)
    reports = [gradcheck(c, perturb=args.perturb) for c in configs]
    worst = max(r["max_relative_error"] for r in reports)
    ok = all(r["passed"] for r in reports)
    report = {"rng_algorithm": RNG_ALGORITHM, "max_relative_error": worst, "passed": ok,
              "checks": reports}
    if args.out:
        if args.format in ("json", "both"):
            _write(Path(args.out) / "gradcheck.json", io.dumps(report, indent=1) + "\n")
        if args.format in ("csv", "both"):
            header = ("seed", "num_layers", "token_count", "embed_dim", "step",
                      "max_relative_error", "passed")
            _write(Path(args.out) / "gradcheck.csv", io.csv_text(header, reports))
    print(f"max relative error {io.fmt_float(worst)} over {len(reports)} configs: "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def load_bench(path, seed=None) -> list:
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected an object")
    unknown = set(doc) - {"schema_version", "base", "runs"}
    if unknown:
        raise InputError(f"{sorted(unknown)[0]}: unknown field")
    if "schema_version" not in doc:
        raise InputError("schema_version: missing")
    runs = doc.get("runs")
    if not isinstance(runs, list) or not runs:
        raise InputError("runs: expected a non-empty list")
    base = deep_merge(ExperimentConfig().to_dict(), doc.get("base", {}))
    base["schema_version"] = doc["schema_version"]
    configs = []
    for i, run in enumerate(runs):
        if not isinstance(run, dict) or set(run) - {"label", "overrides"}:
            raise InputError(f"runs[{i}]: expected {{label, overrides}}")
        merged = deep_merge(base, run.get("overrides", {}))
        merged["label"] = run.get("label", merged.get("label", f"run-{i}"))
        if seed is not None:
            merged["seed"] = seed
        try:
            configs.append(config_from_dict(merged))
        except ConfigError as e:
            raise InputError(f"runs[{i}].{e}") from None
    return configs


def _bench_one(cfg: ExperimentConfig) -> dict:
    try:
        s = run_train(cfg).summary
    except Exception as e:  # a failing run is reported, not fatal
        return {"label": cfg.label, "iterations_to_threshold": None, "final_L_distill": None,
                "final_L_content": None, "final_L_total": None, "final_density": None,
                "failed": True, "wall_time": 0.0, "error": str(e)}
    row = {k: s[k] for k in BENCH_FIELDS if k in s}
    row["failed"] = False
    return row


def bench_threads() -> int:
    raw = os.environ.get("MUONAD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"MUONAD_THREADS: not an integer: {raw!r}") from None
    if n < 1:
        raise InputError("MUONAD_THREADS: must be >= 1")
    return n


def run_bench(configs, threads: int = 1) -> list:
    """One row per config, in submission order."""
    if threads <= 1 or len(configs) == 1:
        return [_bench_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(threads, len(configs))) as pool:
        return list(pool.map(_bench_one, configs))


def cmd_bench(args) -> int:
    if args.config is None:
        raise InputError("--config: bench needs a matrix file")
    configs = load_bench(args.config, args.seed)
    rows = run_bench(configs, bench_threads())
    out = Path(args.out or "runs/bench")
    if args.format in ("json", "both"):
        _write(out / "bench.json", io.dumps({"rng_algorithm": RNG_ALGORITHM, "rows": rows},
                                            indent=1) + "\n")
    if args.format in ("csv", "both"):
        _write(out / "bench.csv", io.csv_text(BENCH_FIELDS, rows))
    sys.stdout.write(io.csv_text(BENCH_FIELDS, rows))
    return EXIT_FAIL if any(r["failed"] for r in rows) else EXIT_OK


def _read_input(path):
    try:
        return io.read_texture_file(path)
    except FileNotFoundError:
        raise InputError(f"{path}: byte 0: file not found") from None
    except io.InputFormatError as e:
        raise InputError(str(e)) from None
    except OSError as e:
        raise InputError(f"{path}: byte 0: {e.strerror}") from None


def compute_metrics(gen: dict, gt: dict, tau=MCR_TAU, angles=ADF_ANGLES, window=SSIM_WINDOW) -> dict:
    """All metrics that apply to the pair; MCR is reported per mip level and averaged."""
    report = {"options": {"tau": tau, "angles": list(angles), "window": window,
                          "mcr_levels": list(MCR_LEVELS)}}
    if "features" in gen or "features" in gt:
        if "features" not in gen or "features" not in gt:
            raise InputError("inputs: cannot compare features with textures")
        a, b = gen["features"], gt["features"]
        if a.shape[1] != b.shape[1]:
            raise InputError("features: dimensions differ")
        report["frechet_distance"] = frechet_distance(GaussianFit.from_samples(a),
                                                      GaussianFit.from_samples(b))
        return report
    if len(gen["textures"]) != len(gt["textures"]):
        raise InputError("textures: file pair holds different texture counts")
    pairs = []
    for i, (a, b) in enumerate(zip(gen["textures"], gt["textures"])):
        if a.shape != b.shape:
            raise InputError(f"textures[{i}]: shapes differ {a.shape} vs {b.shape}")
        try:
            pairs.append({"ssim": ssim(a, b, window), "adf": adf(a, b, angles, window)})
        except ValueError as e:
            raise InputError(f"textures[{i}]: {e}") from None
    report["pairs"] = pairs
    report["ssim"] = float(np.mean([p["ssim"] for p in pairs]))
    report["adf"] = float(np.mean([p["adf"] for p in pairs]))
    try:
        by_level = {str(s): mcr(gen["textures"], gt["textures"], s, tau) for s in MCR_LEVELS}
    except ValueError as e:
        raise InputError(f"textures: {e}") from None
    report["mcr"] = by_level
    report["mcr_mean"] = float(np.mean(list(by_level.values())))
    return report


def cmd_metrics(args) -> int:
    angles = tuple(float(a) for a in args.angles.split(",")) if args.angles else ADF_ANGLES
    report = compute_metrics(_read_input(args.gen), _read_input(args.gt), args.tau, angles,
                             args.window)
    text = io.dumps(report, indent=1) + "\n"
    if args.out:
        _write(Path(args.out) / "metrics.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="muonad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=_seed, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=("json", "csv", "both"), default="both")

    common(sub.add_parser("train", help="run one distillation experiment"))
    g = sub.add_parser("gradcheck", help="finite-difference check of the latent gradient")
    common(g)
    g.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    common(sub.add_parser("bench", help="run a matrix of experiments"))
    m = sub.add_parser("metrics", help="texture and feature metrics for a file pair")
    common(m)
    m.add_argument("gen")
    m.add_argument("gt")
    m.add_argument("--tau", type=float, default=MCR_TAU)
    m.add_argument("--angles", help="comma-separated ADF angles in degrees")
    m.add_argument("--window", type=int, default=SSIM_WINDOW)
    return p


COMMANDS = {"train": cmd_train, "gradcheck": cmd_gradcheck, "bench": cmd_bench,
            "metrics": cmd_metrics}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (InputError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OutputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
