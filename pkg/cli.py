#!/usr/bin/env python3
"""
실시간 대 의사 표본외 예측 실험 CLI

    python cli.py synth    --config configs/synthetic_small.json
    python cli.py run      --config configs/synthetic_small.json --jobs 4
    python cli.py evaluate --config configs/synthetic_small.json
    python cli.py report   --config configs/synthetic_small.json

run은 실패한 셀이 하나라도 있으면 종료 코드 1을 돌려준다.
"""

import argparse
import logging
import sys

from harness import (
    ExperimentConfigError, MissingVintageError, evaluate_experiment,
    load_experiment_config, report, run_experiment,
)
from result_store import ResultStore
from synthetic import SyntheticSpec, UnstableModelError, generate_synthetic_vintages

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='TVP-VAR-SV 실시간/의사 표본외 예측 실험')
    parser.add_argument('command', choices=['synth', 'run', 'evaluate', 'report'])
    parser.add_argument('--config', required=True, help='실험 설정 JSON 경로')
    parser.add_argument('--seed', type=int, default=None, help='마스터 시드 (설정 파일 값 덮어씀)')
    parser.add_argument('--jobs', type=int, default=None, help='병렬 셀 작업 수')
    parser.add_argument('--out', default=None, help='결과 디렉터리 (설정 파일 out_dir 덮어씀)')
    parser.add_argument('--verbose', action='store_true', help='DEBUG 로그 출력')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] %(message)s',
    )

    try:
        cfg = load_experiment_config(args.config, seed=args.seed, jobs=args.jobs, out_dir=args.out)
    except ExperimentConfigError as exc:
        logger.error("설정 오류: %s", exc)
        return 2

    logger.info("=" * 60)
    logger.info("  %s 시작 (dataset=%s, seed=%d)", args.command, cfg.dataset, cfg.seed)
    logger.info("=" * 60)

    try:
        if args.command == 'synth':
            spec = SyntheticSpec.from_dict(cfg.synthetic)
            vintage_dir = generate_synthetic_vintages(spec, cfg.data_dir, cfg.seed)
            logger.info("빈티지 디렉터리: %s", vintage_dir)
            return 0

        if args.command == 'run':
            store = run_experiment(cfg)
            failed = store.failed_count()
            if failed:
                logger.error("실패한 셀 %d개 (cells 테이블의 message 참조)", failed)
                return 1
            return 0

        store = ResultStore(cfg.out_dir)
        if args.command == 'evaluate':
            paths = evaluate_experiment(cfg, store)
        else:
            paths = report(store)
        for name, path in sorted(paths.items()):
            logger.info("  %s: %s", name, path)
        return 0
    except (MissingVintageError, UnstableModelError, ValueError) as exc:
        logger.error("%s 실패: %s", args.command, exc)
        return 2


if __name__ == '__main__':
    sys.exit(main())
