"""
서브커맨드 라우터 (argparse)
"""

import argparse
from typing import Dict, List, Tuple

from src.app.cli.service import COMMANDS
from src.config.setting import settings

# 서브커맨드별 추가 플래그
EXTRA_FLAGS: Dict[str, Tuple[str, ...]] = {
    "score": ("--theta",),
    "augment": ("--theta", "--ratio"),
    "eval-feasibility": ("--theta", "--ratio", "--method"),
    "eval-support": (),
    "train-policy": ("--theta", "--ratio", "--name"),
    "eval-policy": ("--regime", "--name"),
    "ablate-ratio": ("--theta", "--ratio"),
    "compare": ("--theta",),
    "support-sweep": ("--theta",),
    "pipeline": ("--theta",),
}

HELP = {
    "gen-data": "학습용 / held-out 데이터셋 생성",
    "train-model": "가우시안 전이 모델 학습",
    "check-grad": "해석적 그래디언트를 수치 미분과 비교",
    "score": "데이터셋 전체의 CAI 점수 계산",
    "roc": "held-out 데이터에서 ROC / theta sweep",
    "augment": "반사실 데이터셋 생성",
    "eval-feasibility": "반사실 재생 검증",
    "eval-support": "결합 지지 집합 추정",
    "train-policy": "행동 복제 정책 학습",
    "eval-policy": "정책 성공률 평가 (ID / OOD)",
    "ablate-ratio": "반사실 비율 ablation",
    "compare": "caiac / random_swap / none 비교",
    "support-sweep": "데이터 크기별 지지 집합 비율",
    "pipeline": "전체 파이프라인 실행 + 매니페스트",
}


def _add_extra(parser: argparse.ArgumentParser, flag: str) -> None:
    if flag == "--theta":
        parser.add_argument("--theta", type=float, default=None, help="uncontrollable 판정 임계값")
    elif flag == "--ratio":
        parser.add_argument("--ratio", type=float, default=None, help="배치 내 반사실 비율 [0, 1]")
    elif flag == "--regime":
        parser.add_argument("--regime", choices=["ID", "OOD"], default=None)
    elif flag == "--name":
        parser.add_argument("--name", default=None, help="정책 이름 (기본: bc)")
    elif flag == "--method":
        parser.add_argument("--method", choices=["caiac", "random_swap"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caiac", description=settings.VERSION)
    parser.add_argument("--version", action="version", version=settings.VERSION)
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI 실행 설정 파일")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="산출물 디렉터리 ([run] out_dir 대체)")
    common.add_argument("--jobs", type=int, default=None)
    common.add_argument("--verbose", "-v", action="store_true")

    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=HELP.get(name))
        for flag in EXTRA_FLAGS.get(name, ()):
            _add_extra(sub, flag)
    return parser


def parse_args(argv: List[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
