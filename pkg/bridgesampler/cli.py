# MIT License
#
# Copyright (c) 2019 Tuomas Halvari, Juha Harviainen, Juha Mylläri, Antti Röyskö, Juuso Silvennoinen
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from bridgesampler import gradcheck, runner
from bridgesampler.config import expand, grid, load_config, preset
from bridgesampler.dpi_lab import counterexample, dpi_gap, violation_search
from bridgesampler.exceptions import ConfigurationError, DivergenceError, SetupError, UsageError
from bridgesampler.utils import write_json

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_CHECK_FAILED = 1
EXIT_DIVERGED = 2
EXIT_CONFIGURATION = 3


def _config(args):
    if args.config is not None:
        return load_config(args.config)
    if args.preset is not None:
        return preset(args.preset)
    raise ConfigurationError("Give either --config or --preset.")


def _out_dir(args, config_name):
    return Path(args.out) if args.out else Path("runs") / config_name


def cmd_train(args):
    if args.resume and not (args.config or args.preset):
        config, out_dir = None, Path(args.out) if args.out else Path(args.resume).parent
    else:
        config = _config(args)
        out_dir = _out_dir(args, Path(args.config).stem if args.config else args.preset)
    manifest = runner.train(config, out_dir=out_dir, progress=not args.no_progress,
                            resume=args.resume, stop_after=args.stop_after)
    print(json.dumps(manifest.final, indent=2))
    if manifest.diverged:
        raise DivergenceError(f"The run diverged at iteration {manifest.divergence_iteration}: "
                              f"{manifest.divergence_reason}.", manifest)
    return EXIT_SUCCESS


def cmd_eval(args):
    result = runner.evaluate_checkpoint(args.checkpoint, args.target, args.samples, args.seed)
    print(json.dumps(result, indent=2))
    return EXIT_SUCCESS


def cmd_sample(args):
    runner.sample_checkpoint(args.checkpoint, args.n, args.out, args.seed)
    return EXIT_SUCCESS


def cmd_gradcheck(args):
    if args.json:
        reports = gradcheck.equivalence_reports(args.seed)
        print(json.dumps([{"parameterization": parameterization, "check": check, **json.loads(report.to_json())}
                          for parameterization, by_check in reports.items()
                          for check, report in by_check.items()], indent=2))
        return EXIT_SUCCESS
    df = gradcheck.run_suite(args.suite, args.seed)
    with pd.option_context("display.max_rows", None, "display.width", 120):
        print(df)
    return EXIT_SUCCESS if df["passed"].all() else EXIT_CHECK_FAILED


def cmd_dpi(args):
    pair = counterexample()
    print(f"{pair}\n{json.dumps(dpi_gap(pair).to_dict(), indent=2)}")
    if args.search:
        found = violation_search(args.seed, args.search)
        logger.info(f"{len(found)} of {args.search} random pairs violate the data processing inequality")
        print(json.dumps([{"q": pair.q.tolist(), "p": pair.p.tolist(), **report.to_dict()}
                          for pair, report in found[:args.show]], indent=2))
    return EXIT_SUCCESS


def cmd_sweep(args):
    base = _config(args)
    overrides = grid(args.grid) if args.grid else [{}]
    configs = expand(base, overrides, args.seeds or (None,))
    out = _out_dir(args, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    df = runner.sweep(configs, args.processes, out, progress=not args.no_progress)
    df.to_csv(out / "results.csv", index=False)
    for criterion, best in runner.select_best_runs(df).items():
        best.to_csv(out / f"best_{criterion}.csv", index=False)
    print(df)
    return EXIT_SUCCESS


def cmd_stability(args):
    out = _out_dir(args, "stability")
    report = runner.stability_report(_config(args), args.seeds or (0, 1, 2), args.processes, out,
                                     progress=not args.no_progress)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "stability.csv", index=False)
    write_json(out / "stability.json", {"contrast": bool(report["contrast"].any())})
    print(report)
    return EXIT_SUCCESS


def build_parser():
    parser = argparse.ArgumentParser(prog="bridgesampler", description="Train and evaluate diffusion bridge samplers.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars.")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config_arguments(command):
        command.add_argument("--config", help="TOML or JSON run configuration.")
        command.add_argument("--preset", help="Name of a built-in configuration.")
        command.add_argument("--out", help="Output directory.")

    train = commands.add_parser("train", help="Train a sampler.")
    add_config_arguments(train)
    train.add_argument("--resume", help="Checkpoint to continue from.")
    train.add_argument("--stop-after", type=int, help="Stop after this many iterations.")
    train.set_defaults(func=cmd_train)

    evaluate = commands.add_parser("eval", help="Evaluate a checkpoint.")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--target", help="Name of the target the checkpoint was trained on.")
    evaluate.add_argument("--samples", type=int, help="Number of evaluation paths and samples.")
    evaluate.add_argument("--seed", type=int)
    evaluate.set_defaults(func=cmd_eval)

    sample = commands.add_parser("sample", help="Draw samples from a checkpoint.")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--n", type=int, required=True)
    sample.add_argument("--out", required=True, help="CSV file.")
    sample.add_argument("--seed", type=int)
    sample.set_defaults(func=cmd_sample)

    check = commands.add_parser("gradcheck", help="Run the gradient check suites.")
    check.add_argument("--suite", choices=sorted(gradcheck.SUITES))
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--json", action="store_true",
                       help="Print the GradReports of the equivalence suite as JSON instead of running the suites.")
    check.set_defaults(func=cmd_gradcheck)

    dpi = commands.add_parser("dpi", help="Data processing inequality experiments.")
    dpi.add_argument("--search", type=int, default=0, help="Number of random pairs to search.")
    dpi.add_argument("--seed", type=int, default=0)
    dpi.add_argument("--show", type=int, default=5, help="Number of violations to print.")
    dpi.set_defaults(func=cmd_dpi)

    sweep = commands.add_parser("sweep", help="Train a grid of configurations on a process pool.")
    add_config_arguments(sweep)
    sweep.add_argument("--grid", help="Name of a grid family.")
    sweep.add_argument("--seeds", type=int, nargs="*")
    sweep.add_argument("--processes", type=int)
    sweep.set_defaults(func=cmd_sweep)

    stability = commands.add_parser("stability", help="Compare LV and rKL-LD with learned diffusion coefficients.")
    add_config_arguments(stability)
    stability.add_argument("--seeds", type=int, nargs="*")
    stability.add_argument("--processes", type=int)
    stability.set_defaults(func=cmd_stability)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as e:
        logger.error(str(e))
        return EXIT_DIVERGED
    except (ConfigurationError, UsageError, SetupError, OSError) as e:
        logger.error(str(e))
        return EXIT_CONFIGURATION


if __name__ == "__main__":
    sys.exit(main())
