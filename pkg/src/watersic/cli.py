"""Command-line front end: bench, quantize, dequantize, waterfill and selftest."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from watersic import __version__
from watersic.bench.rd_bench import SPACING_BOTH, BenchConfig, run_bench, write_csv
from watersic.calibration.calib import CovarianceSet, estimate_covariances, mix_drift
from watersic.coding.container import dequantize, encode_container
from watersic.core import config
from watersic.core.matrix_io import read_matrix, write_matrix
from watersic.quant.pipeline import QuantizeOptions, QuantizedLayer, quantize_layer, quantize_to_rate
from watersic.selftest import run_selftest
from watersic.theory.wtheory import Spectrum, waterfill_rate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Flag combination that parses but makes no sense."""


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")
    return value == "on"


def _float_list(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="watersic",
        description="Waterfilling-informed SIC quantization of linear layers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="Synthetic rate-distortion benchmark (CSV)")
    bench.add_argument("-a", "--rows", type=int, default=config.BENCH_ROWS)
    bench.add_argument("-n", "--cols", type=int, default=config.BENCH_COLS)
    bench.add_argument("--rate", type=float, action="append", help="Target entropy in bits/weight (repeatable)")
    bench.add_argument("--cond", type=float, default=config.BENCH_CONDITION, help="Condition number of Sigma_x")
    bench.add_argument("--seeds", type=int, default=config.BENCH_SEEDS)
    bench.add_argument("--first-seed", type=int, default=0)
    bench.add_argument("--spacing", choices=config.SPACING_MODES + (SPACING_BOTH,), default=SPACING_BOTH)
    bench.add_argument("--lmmse", type=_on_off, default=False, metavar="{on,off}")
    bench.add_argument("--rescaler", type=_on_off, default=False, metavar="{on,off}")
    bench.add_argument("--entropy", choices=config.ENTROPY_MODES, default=config.ENTROPY_COLUMN)
    bench.add_argument("--sigma-w", type=float, default=config.BENCH_SIGMA_W)
    bench.add_argument("--damping", type=float, default=config.BENCH_DAMPING)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--csv", type=Path, help="Output file (default: stdout)")
    bench.set_defaults(handler=cmd_bench_rd)

    quant = sub.add_parser("quantize", help="Quantize one layer into a WSQZ container")
    quant.add_argument("--weights", type=Path, required=True, help="WSMX weight matrix (a x n)")
    quant.add_argument("--sigma-x", type=Path, help="WSMX Sigma_x")
    quant.add_argument("--sigma-xhat", type=Path, help="WSMX Sigma_xhat (default: Sigma_x)")
    quant.add_argument("--sigma-x-xhat", type=Path, help="WSMX Sigma_x_xhat (default: Sigma_x)")
    quant.add_argument("--sigma-delta", type=Path, help="WSMX Sigma_delta_xhat (a x n, default: zero)")
    quant.add_argument("--x-samples", type=Path, help="WSMX input samples (tokens x n)")
    quant.add_argument("--xhat-samples", type=Path, help="WSMX quantized-model input samples")
    quant.add_argument("--rdelta-samples", type=Path, help="WSMX residual discrepancy samples (tokens x a)")
    target = quant.add_mutually_exclusive_group(required=True)
    target.add_argument("--rate", type=float, help="Target entropy in bits/weight")
    target.add_argument("--scale", type=float, help="Fixed scale constant c")
    quant.add_argument("--spacing", choices=config.SPACING_MODES, default=config.SPACING_WATERSIC)
    quant.add_argument("--lmmse", type=_on_off, default=True, metavar="{on,off}")
    quant.add_argument("--rescaler", type=_on_off, default=True, metavar="{on,off}")
    quant.add_argument("--entropy", choices=config.ENTROPY_MODES, default=config.ENTROPY_JOINT)
    quant.add_argument("--damping", type=float, default=config.DEFAULT_DAMPING)
    quant.add_argument("--eps-qr", type=float, default=0.0, help="Blend drift statistics toward Sigma_x")
    quant.add_argument("--seed", type=int, default=0)
    quant.add_argument("--output", "-o", type=Path, required=True, help="Container path")
    quant.set_defaults(handler=cmd_quantize)

    deq = sub.add_parser("dequantize", help="Reconstruct weights from a WSQZ container")
    deq.add_argument("--input", "-i", type=Path, required=True)
    deq.add_argument("--output", "-o", type=Path, required=True, help="WSMX output path")
    deq.set_defaults(handler=cmd_dequantize)

    wf = sub.add_parser("waterfill", help="Reverse waterfilling rate at a distortion")
    wf.add_argument("--lambdas", type=_float_list, required=True, help="Comma-separated eigenvalues")
    wf.add_argument("--distortion", type=float, required=True)
    wf.add_argument("--sigma-w2", type=float, default=1.0)
    wf.set_defaults(handler=cmd_waterfill)

    st = sub.add_parser("selftest", help="Run the built-in invariant checks")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(handler=cmd_selftest)
    return parser


def cmd_bench_rd(args: argparse.Namespace) -> int:
    try:
        cfg = BenchConfig(
            rows=args.rows,
            cols=args.cols,
            rates=tuple(args.rate or (config.BENCH_RATE,)),
            cond=args.cond,
            seeds=args.seeds,
            first_seed=args.first_seed,
            spacing=args.spacing,
            lmmse=args.lmmse,
            rescaler=args.rescaler,
            sigma_w=args.sigma_w,
            damping=args.damping,
            entropy_mode=args.entropy,
            workers=args.workers,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e

    records = run_bench(cfg)
    write_csv(records, args.csv if args.csv is not None else sys.stdout)
    return EXIT_OK


def _load_covariances(args: argparse.Namespace) -> CovarianceSet:
    if args.x_samples is not None:
        if args.sigma_x is not None:
            raise UsageError("Give either --sigma-x or --x-samples, not both")
        return estimate_covariances(
            read_matrix(args.x_samples),
            read_matrix(args.xhat_samples) if args.xhat_samples else None,
            read_matrix(args.rdelta_samples) if args.rdelta_samples else None,
        )
    if args.sigma_x is None:
        raise UsageError("quantize needs --sigma-x or --x-samples")

    sigma_x = read_matrix(args.sigma_x)
    if args.sigma_xhat is None and args.sigma_x_xhat is None and args.sigma_delta is None:
        return CovarianceSet.collapsed(sigma_x)
    return CovarianceSet(
        sigma_x,
        read_matrix(args.sigma_xhat) if args.sigma_xhat else sigma_x,
        read_matrix(args.sigma_x_xhat) if args.sigma_x_xhat else sigma_x,
        read_matrix(args.sigma_delta) if args.sigma_delta else None,
    )


def layer_stats(layer: QuantizedLayer, w: np.ndarray, sigma_x: np.ndarray) -> dict:
    """JSON stats line: rate, entropy, distortion, gap to waterfilling, dead features."""
    spectrum = Spectrum.from_covariance(sigma_x, float(np.mean(np.square(w))) or 1.0)
    distortion = layer.achieved_distortion
    gap = None
    if distortion > 0:
        bound = waterfill_rate(spectrum, min(distortion, spectrum.full_energy)).rate
        gap = layer.entropy - bound
    return {
        "rate": layer.effective_rate,
        "entropy": layer.entropy,
        "distortion": distortion,
        "gap_bits": gap,
        "dead_features": layer.mask.dead_count,
    }


def cmd_quantize(args: argparse.Namespace) -> int:
    w = read_matrix(args.weights)
    covs = _load_covariances(args)
    if args.eps_qr:
        covs = mix_drift(covs, args.eps_qr)
    try:
        opts = QuantizeOptions(
            damping=args.damping,
            spacing_mode=args.spacing,
            lmmse=args.lmmse,
            rescaler=args.rescaler,
            entropy_mode=args.entropy,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e

    if args.scale is not None:
        layer = quantize_layer(w, covs, args.scale, opts)
    else:
        layer = quantize_to_rate(w, covs, args.rate, opts, seed=args.seed)

    args.output.write_bytes(encode_container(layer))
    print(json.dumps(layer_stats(layer, w, covs.sigma_x), sort_keys=True))
    return EXIT_OK


def cmd_dequantize(args: argparse.Namespace) -> int:
    write_matrix(args.output, dequantize(args.input.read_bytes()))
    return EXIT_OK


def cmd_waterfill(args: argparse.Namespace) -> int:
    level = waterfill_rate(Spectrum(args.lambdas, args.sigma_w2), args.distortion)
    print(json.dumps({"rate": level.rate, "distortion": level.distortion, "tau": level.tau}, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.seed)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        line = f"{result.name}: {status}"
        print(f"{line} ({result.detail})" if result.detail else line)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the command and map failures to exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"watersic {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"watersic {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
