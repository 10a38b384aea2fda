"""Runnable examples: resolve a config, build the synthetic data, run a pipeline.

Invocation grammar::

    stagekit <subcommand> [--cfg FILE] [--out DIR] [KEY VALUE]...

where subcommand is mpca, dann, or deepdta. The built-in defaults below play
the role of each example's configuration module; a YAML file customizes them
and trailing KEY VALUE pairs override both (last value wins). Exit codes:
0 success, 2 bad usage, 3 configuration error, 4 pipeline error.
"""

import argparse
import os
import sys

from .config import Config, ConfigError, dump_config, resolve_config
from .loaddata import generate_synthetic
from .pipeline import (
    DATA_STREAM,
    make_run_id,
    run_dann_pipeline,
    run_deepdta_pipeline,
    run_mpca_pipeline,
)
from .utils import set_seed


def default_mpca_config() -> Config:
    """Defaults for MPCA classification on the planted-block tensors."""
    return Config(
        {
            "DATASET": {
                "KIND": "tensor_patterns",
                "N_PER_CLASS": 100,
                "MU": 2.0,
                "SHAPE": [16, 16, 8],
                "BLOCK": [4, 4, 2],
                "OFFSET": [6, 6, 3],
                "STANDARDIZE": True,
                "TRAIN_FRACTION": 0.7,
                "VAL_FRACTION": 0.1,
                "TEST_FRACTION": 0.2,
            },
            "SOLVER": {
                "SEED": 2020,
                "BASE_LR": 0.5,
                "MAX_EPOCHS": 300,
            },
            "MODEL": {
                "VAR_RATIO": 0.97,
                "MAX_ITERS": 1,
                "N_FEATURES": 32,
                "CLASSIFIER": "logistic",
                "L2": 0.001,
            },
            "INTERPRET": {"TOP_K": 32},
            "OUTPUT_DIR": "./outputs",
        }
    )


def default_dann_config() -> Config:
    """Defaults for domain adaptation on the shifted-blob pair."""
    return Config(
        {
            "DATASET": {
                "KIND": "domain_shift_blobs",
                "N_PER_CLASS": 500,
                "CENTER_SCALE": 1.0,
                "STD": 0.4,
                "THETA_DEG": 30.0,
                "SHIFT": [1.0, -1.0],
                "TRAIN_FRACTION": 0.7,
                "VAL_FRACTION": 0.15,
                "TEST_FRACTION": 0.15,
            },
            "SOLVER": {
                "SEED": 2020,
                "BASE_LR": 0.001,
                "TRAIN_BATCH_SIZE": 32,
                "MAX_EPOCHS": 40,
                "OPTIMIZER": "adam",
                "MOMENTUM": 0.9,
            },
            "MODEL": {
                "EXTRACT_HIDDEN": [16],
                "EXTRACT_DIM": 8,
                "ADAPT_METHOD": "dann",
                "ADAPT_GAMMA": 10.0,
                "ADAPT_LAMBDA_MAX": 1.0,
                "ADAPT_TRADE_OFF": 1.0,
                "MMD_BANDWIDTHS": [0.5, 1.0, 2.0, 4.0],
            },
            "OUTPUT_DIR": "./outputs",
        }
    )


def default_deepdta_config() -> Config:
    """Defaults for drug-target affinity regression on synthetic strings."""
    return Config(
        {
            "DATASET": {
                "KIND": "dta_strings",
                "N_TRAIN": 2000,
                "N_TEST": 500,
                "NOISE": 0.1,
                "DRUG_MIN_LEN": 10,
                "DRUG_MAX_LEN": 40,
                "TARGET_MIN_LEN": 50,
                "TARGET_MAX_LEN": 200,
            },
            "SOLVER": {
                "SEED": 2020,
                "BASE_LR": 0.001,
                "TRAIN_BATCH_SIZE": 64,
                "MAX_EPOCHS": 10,
                "OPTIMIZER": "adam",
                "MOMENTUM": 0.9,
            },
            "MODEL": {
                "DRUG_VOCAB": 9,
                "DRUG_EMBED_DIM": 32,
                "DRUG_FILTERS": [16, 32],
                "DRUG_KERNELS": [4, 6],
                "DRUG_DIM": 32,
                "TARGET_VOCAB": 21,
                "TARGET_EMBED_DIM": 32,
                "TARGET_FILTERS": [16, 32],
                "TARGET_KERNELS": [4, 8],
                "TARGET_DIM": 32,
                "DECODER_HIDDEN": [64, 32],
            },
            "OUTPUT_DIR": "./outputs",
        }
    )


_SUBCOMMANDS = {
    "mpca": (default_mpca_config, run_mpca_pipeline),
    "dann": (default_dann_config, run_dann_pipeline),
    "deepdta": (default_deepdta_config, run_deepdta_pipeline),
}


def build_dataset(subcommand: str, cfg: Config):
    """Materialize the configured synthetic dataset for a subcommand."""
    data_rng = set_seed(cfg.SOLVER.SEED).child(DATA_STREAM)
    ds = cfg.DATASET
    if subcommand == "mpca":
        params = {
            "n_per_class": ds.N_PER_CLASS,
            "mu": ds.MU,
            "shape": tuple(ds.SHAPE),
            "block": tuple(ds.BLOCK),
            "offset": tuple(ds.OFFSET),
        }
        return generate_synthetic("tensor_patterns", params, data_rng)
    if subcommand == "dann":
        params = {
            "n_per_class": ds.N_PER_CLASS,
            "centers": [(-ds.CENTER_SCALE, 0.0), (ds.CENTER_SCALE, 0.0)],
            "std": ds.STD,
            "theta_deg": ds.THETA_DEG,
            "shift": tuple(ds.SHIFT),
        }
        return generate_synthetic("domain_shift_blobs", params, data_rng)
    params = {
        "n_samples": ds.N_TRAIN + ds.N_TEST,
        "noise": ds.NOISE,
        "drug_min_len": ds.DRUG_MIN_LEN,
        "drug_max_len": ds.DRUG_MAX_LEN,
        "target_min_len": ds.TARGET_MIN_LEN,
        "target_max_len": ds.TARGET_MAX_LEN,
    }
    return generate_synthetic("dta_strings", params, data_rng)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagekit",
        description="Run an example pipeline end to end on synthetic data.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--cfg", default=None, help="YAML overlay file")
        p.add_argument("--out", default=None, help="output directory (sets OUTPUT_DIR)")
        p.add_argument(
            "overrides",
            nargs="*",
            metavar="KEY VALUE",
            help="dotted config key followed by its value, repeatable",
        )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    if len(args.overrides) % 2 != 0:
        parser.error(f"overrides must come in KEY VALUE pairs, got {args.overrides!r}")
    overrides = [
        (args.overrides[i], args.overrides[i + 1])
        for i in range(0, len(args.overrides), 2)
    ]
    if args.out is not None:
        overrides.append(("OUTPUT_DIR", args.out))

    defaults_fn, pipeline_fn = _SUBCOMMANDS[args.subcommand]
    try:
        overlay = None
        if args.cfg is not None:
            try:
                with open(args.cfg, "r", encoding="utf-8") as fh:
                    overlay = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {args.cfg}: {exc}") from exc
        cfg = resolve_config(defaults_fn(), overlay, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3

    try:
        run_dir = os.path.join(cfg.OUTPUT_DIR, make_run_id(cfg))
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.yaml"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        dataset = build_dataset(args.subcommand, cfg)
        report = pipeline_fn(dataset, cfg)
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4

    summary = ", ".join(f"{name}={value:.6g}" for name, value in sorted(report.final.items()))
    print(f"{args.subcommand} finished in {report.wall_time:.2f}s: {summary}")
    print(f"outputs under {run_dir}")
    return 0


def entry() -> None:
    """Console-script entry point."""
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
