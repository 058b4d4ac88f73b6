"""
MAGMA Command-Line Pipeline

실행 방법:
    python -m src.cli <command> [options]

Commands:
    simulate  합성 코호트 + ground truth CSV 생성
    split     학습/테스트 분할 (manifest JSON 포함)
    train     다중 restart EM 학습 -> model JSON
    predict   한 개체의 궤적 예측 -> prediction CSV
    evaluate  테스트 세트 평가 -> report CSV + JSON
    curves    평균 과정 곡선 (+ normative band) -> curves CSV
    compare   여러 평가 리포트를 나란히 비교 -> CSV

Exit codes: 0 성공, 1 사용법/설정 오류, 2 데이터 오류, 3 수치 오류
"""

from pathlib import Path
from typing import Optional, Sequence
import argparse
import json
import re
import sys
import logging

import numpy as np

from src.cli.io import file_digest, read_text, write_atomic, write_json, write_with_meta
from src.core.config import (
    FORMAT_VERSION,
    HpMode,
    HpStrategy,
    RunConfig,
    SimulationConfig,
    load_run_config,
    load_simulation_config
)
from src.core.exceptions import ConfigError, MagmaError
from src.core.services.metrics_service import get_metrics_service, reset_metrics_service
from src.data.cohort import parse_cohort_csv, parse_observations_csv, serialize_cohort_csv
from src.data.normative import parse_normative_band_csv
from src.data.splits import SplitSpec, quasi_random_split
from src.data.synthetic import synthesize_cohort
from src.evaluation.harness import case_curve_csv, case_curves, compare_reports, evaluate_test_set, report_from_json
from src.evaluation.metrics import band_coverage
from src.magma.model import model_from_json
from src.magma.prediction import mean_process_curve, predict_trajectory
from src.magma.training import EMConfig, train_with_restarts

# Configure logging
logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CURVE_COLUMNS = ["age_years", "mean", "lower95", "upper95"]


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_targets(targets: Optional[str], grid: Optional[str]) -> np.ndarray:
    """
    Target ages from `--targets a,b,c` or `--grid start:stop:count`

    Raises:
        ConfigError: 형식 오류 또는 둘 다/둘 다 아닌 경우
    """
    if (targets is None) == (grid is None):
        raise ConfigError("exactly one of --targets or --grid is required")
    if grid is not None:
        parts = grid.split(":")
        try:
            if len(parts) != 3:
                raise ValueError
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"--grid must be start:stop:count, got {grid!r}")
        if count < 1 or not np.isfinite([start, stop]).all() or stop < start:
            raise ConfigError(f"--grid needs count >= 1 and start <= stop, got {grid!r}")
        return np.linspace(start, stop, count)
    try:
        ages = [float(t) for t in targets.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--targets must be a comma-separated list of ages, got {targets!r}")
    if not ages or not np.isfinite(ages).all():
        raise ConfigError("--targets must contain at least one finite age")
    return np.sort(np.asarray(ages))


def _run_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, {
        "seed": args.seed,
        "hp_mode": args.hp_mode,
        "n_restarts": args.restarts,
        "em_max_iter": args.em_max_iter,
        "em_rel_tol": args.em_rel_tol,
        "grid_extra_resolution": args.grid_resolution,
        "train_fraction": args.train_fraction,
        "n_jobs": args.n_jobs,
        "hp_strategy": args.hp_strategy,
        "log_level": args.log_level,
        "metrics_file": args.metrics_file
    })


def _sibling(path: str, suffix: str) -> str:
    target = Path(path)
    return str(target.with_name(f"{target.stem}{suffix}"))


def _safe_stem(case_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", case_id)


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    """합성 코호트 생성"""
    if args.sim_config:
        sim_config = load_simulation_config(args.sim_config, config.seed)
    else:
        sim_config = SimulationConfig(seed=config.seed)

    synthetic = synthesize_cohort(sim_config)
    truth_path = args.truth or _sibling(args.output, "_truth.csv")
    extra = {"simulation": sim_config.model_dump(mode="json")}
    write_with_meta(args.output, serialize_cohort_csv(synthetic.cohort), "cohort", config.to_record(), extra)
    write_with_meta(truth_path, synthetic.truth_csv(), "ground_truth", config.to_record(), extra)
    print(f"cohort: {args.output} ({len(synthetic.cohort)} individuals)")
    print(f"ground truth: {truth_path}")
    return 0


def cmd_split(args: argparse.Namespace, config: RunConfig) -> int:
    """Quasi-random 학습/테스트 분할"""
    cohort = parse_cohort_csv(read_text(args.cohort))
    train, test = quasi_random_split(cohort, SplitSpec(train_fraction=config.train_fraction, seed=config.seed))

    train_path = args.train_out or _sibling(args.cohort, "_train.csv")
    test_path = args.test_out or _sibling(args.cohort, "_test.csv")
    manifest_path = args.manifest or _sibling(args.cohort, "_split.json")

    write_with_meta(train_path, serialize_cohort_csv(train), "train_cohort", config.to_record())
    write_with_meta(test_path, serialize_cohort_csv(test), "test_cohort", config.to_record())
    write_json(manifest_path, {
        "format_version": FORMAT_VERSION,
        "run_config": config.to_record(),
        "n_train": len(train),
        "n_test": len(test),
        "train_ids": train.ids,
        "test_ids": test.ids,
        "singletons_in_train": [i.id for i in train.individuals if i.n_observations == 1]
    })
    print(f"train: {len(train)} individuals -> {train_path}")
    print(f"test: {len(test)} individuals -> {test_path}")
    return 0


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    """다중 restart 학습"""
    cohort = parse_cohort_csv(read_text(args.train))
    logger.info(f"Training cohort: {cohort.summarize()}")
    model = train_with_restarts(
        cohort,
        config.hp_mode,
        n_restarts=config.n_restarts,
        seed=config.seed,
        config=EMConfig(max_iter=config.em_max_iter, rel_tol=config.em_rel_tol),
        grid_extra_resolution=config.grid_extra_resolution,
        n_jobs=config.n_jobs,
        run_config=config.to_record()
    )
    write_atomic(args.output, model.to_json())

    for k, log_likelihood in enumerate(model.restart_log_likelihoods):
        print(f"restart {k}: " + ("failed" if log_likelihood is None else f"log_likelihood={log_likelihood:.6f}"))
    succeeded = [ll for ll in model.restart_log_likelihoods if ll is not None]
    print(f"selected restart: {model.restart_index}")
    print(f"log_likelihood: max={max(succeeded):.6f} min={min(succeeded):.6f}")
    if model.independent_log_likelihood is not None:
        print(f"independent_log_likelihood: {model.independent_log_likelihood:.6f}")
    print(f"model: {args.output}")
    return 0


def cmd_predict(args: argparse.Namespace, config: RunConfig) -> int:
    """한 개체의 궤적 예측"""
    model = model_from_json(read_text(args.model))
    targets = parse_targets(args.targets, args.grid)
    individual_id, observations = (None, [])
    if args.observations:
        individual_id, observations = parse_observations_csv(read_text(args.observations))

    prediction = predict_trajectory(
        model, observations, targets, strategy=config.hp_strategy, individual_id=individual_id
    )
    write_with_meta(
        args.output,
        prediction.to_csv(),
        "prediction",
        config.to_record(),
        {"individual_id": individual_id, "n_observations": len(observations), **prediction.sidecar()}
    )
    print(f"prediction: {args.output} ({targets.size} targets, hp_strategy={prediction.hp_strategy})")
    return 0


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    """테스트 세트 평가"""
    model = model_from_json(read_text(args.model))
    test = parse_cohort_csv(read_text(args.test))
    report = evaluate_test_set(model, test, config.seed, strategy=config.hp_strategy, n_jobs=config.n_jobs)

    json_path = args.json or _sibling(args.output, ".json")
    write_with_meta(args.output, report.to_csv(), "evaluation", config.to_record())
    write_atomic(json_path, report.to_json(file_digest(args.model), config.to_record()))
    if args.curves_dir:
        curves = case_curves(model, test, config.seed, strategy=config.hp_strategy, n_jobs=config.n_jobs)
        for case_id, frame in curves.items():
            write_atomic(str(Path(args.curves_dir) / f"{_safe_stem(case_id)}.csv"), case_curve_csv(frame))
        print(f"case curves: {args.curves_dir} ({len(curves)} cases)")

    for skipped in report.skipped:
        print(f"skipped {skipped['id']}: {skipped['reason']}")
    print(f"mean_rmse_unweighted: {report.mean_rmse_unweighted:.6f}")
    print(f"mean_rmse_pooled: {report.mean_rmse_pooled:.6f}")
    print(f"overall_cic95: {report.overall_cic95:.6f}")
    return 0


def cmd_curves(args: argparse.Namespace, config: RunConfig) -> int:
    """평균 과정 곡선 (+ normative band)"""
    model = model_from_json(read_text(args.model))
    targets = parse_targets(args.targets, args.grid)
    curve = mean_process_curve(model, targets, population_predictive=args.population_predictive)

    frame = curve.to_frame()[CURVE_COLUMNS].copy()
    coverage = None
    if args.band:
        band = parse_normative_band_csv(read_text(args.band))
        coverage = band_coverage(curve, band)
        frame["band_lower"], frame["band_upper"] = band.interpolate(curve.targets)

    write_with_meta(
        args.output,
        frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"),
        "curves",
        config.to_record(),
        {"population_predictive": args.population_predictive, "band_coverage": coverage}
    )
    if coverage is not None:
        print(json.dumps(coverage, sort_keys=True))
    print(f"curves: {args.output} ({targets.size} ages)")
    return 0


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
    """평가 리포트 비교"""
    reports = {}
    for item in args.report:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise ConfigError(f"--report must be label=path, got {item!r}")
        if label in reports:
            raise ConfigError(f"duplicate report label {label!r}")
        reports[label] = report_from_json(read_text(path))

    table = compare_reports(reports)
    write_with_meta(
        args.output,
        table.to_csv(index=False, float_format="%.17g", lineterminator="\n"),
        "comparison",
        config.to_record(),
        {"reports": {label: r.hp_mode.value for label, r in reports.items()}}
    )
    print(table.to_string(index=False))
    return 0


def _common_options() -> argparse.ArgumentParser:
    parent = CliArgumentParser(add_help=False)
    group = parent.add_argument_group("run configuration (flags override --config and MAGMA_* env)")
    group.add_argument("--config", help="JSON run configuration file")
    group.add_argument("--seed", type=int, help="base seed for every random derivation")
    group.add_argument("--hp-mode", choices=[m.value for m in HpMode], help="hyperparameter regime")
    group.add_argument("--restarts", type=int, help="training restarts")
    group.add_argument("--em-max-iter", type=int, help="maximum EM iterations")
    group.add_argument("--em-rel-tol", type=float, help="relative log-likelihood tolerance")
    group.add_argument("--grid-resolution", type=int, help="extra working-grid points")
    group.add_argument("--train-fraction", type=float, help="train share of the split")
    group.add_argument("--n-jobs", type=int, help="concurrent restarts / evaluation cases")
    group.add_argument("--hp-strategy", choices=[s.value for s in HpStrategy],
                       help="test-time individual hyperparameters")
    group.add_argument("--log-level", help="logging level (default INFO)")
    group.add_argument("--metrics-file", help="write Prometheus metrics to this file")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _common_options()
    parser = CliArgumentParser(prog="magma", description="Multi-task GP with a common mean process")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[parent], help="generate a synthetic cohort")
    simulate.add_argument("--sim-config", help="simulation config JSON")
    simulate.add_argument("--output", required=True, help="cohort CSV path")
    simulate.add_argument("--truth", help="ground-truth CSV path (default <output>_truth.csv)")
    simulate.set_defaults(handler=cmd_simulate)

    split = commands.add_parser("split", parents=[parent], help="quasi-random train/test split")
    split.add_argument("cohort", help="cohort CSV")
    split.add_argument("--train-out", help="train CSV path")
    split.add_argument("--test-out", help="test CSV path")
    split.add_argument("--manifest", help="split manifest JSON path")
    split.set_defaults(handler=cmd_split)

    train = commands.add_parser("train", parents=[parent], help="train with restarts")
    train.add_argument("train", help="training cohort CSV")
    train.add_argument("--output", required=True, help="model JSON path")
    train.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", parents=[parent], help="predict one individual")
    predict.add_argument("--model", required=True, help="model JSON")
    predict.add_argument("--observations", help="observations CSV of one individual (may be empty)")
    predict.add_argument("--targets", help="comma-separated target ages")
    predict.add_argument("--grid", help="target grid start:stop:count")
    predict.add_argument("--output", required=True, help="prediction CSV path")
    predict.set_defaults(handler=cmd_predict)

    evaluate = commands.add_parser("evaluate", parents=[parent], help="evaluate on a test cohort")
    evaluate.add_argument("test", help="test cohort CSV")
    evaluate.add_argument("--model", required=True, help="model JSON")
    evaluate.add_argument("--output", required=True, help="report CSV path")
    evaluate.add_argument("--json", help="report JSON path (default <output>.json)")
    evaluate.add_argument("--curves-dir", help="write one predicted-curve CSV per evaluated case here")
    evaluate.set_defaults(handler=cmd_evaluate)

    curves = commands.add_parser("curves", parents=[parent], help="export the mean-process curve")
    curves.add_argument("--model", required=True, help="model JSON")
    curves.add_argument("--band", help="normative band CSV")
    curves.add_argument("--targets", help="comma-separated ages")
    curves.add_argument("--grid", help="age grid start:stop:count")
    curves.add_argument("--population-predictive", action="store_true",
                        help="include individual variation and noise in the band")
    curves.add_argument("--output", required=True, help="curves CSV path")
    curves.set_defaults(handler=cmd_curves)

    compare = commands.add_parser("compare", parents=[parent], help="side-by-side evaluation table")
    compare.add_argument("--report", action="append", required=True, help="label=report.json (repeatable)")
    compare.add_argument("--output", required=True, help="comparison CSV path")
    compare.set_defaults(handler=cmd_compare)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    CLI 실행

    Returns:
        int: exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    reset_metrics_service()

    try:
        config = _run_config(args)
        logging.basicConfig(
            level=getattr(logging, str(config.log_level).upper(), logging.INFO),
            format=LOG_FORMAT,
            stream=sys.stderr,
            force=True
        )
        status = args.handler(args, config)
        if config.metrics_file:
            get_metrics_service().write_textfile(config.metrics_file)
        return status
    except MagmaError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    """Main function"""
    sys.exit(run())


if __name__ == "__main__":
    main()
