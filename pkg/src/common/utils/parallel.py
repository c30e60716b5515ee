"""
프로세스 풀 유틸리티

결과 순서는 입력 순서와 같다. jobs <= 1 이면 현재 프로세스에서 순차 실행한다.
"""

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from src.config.setting import settings

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int | None = None) -> List[R]:
    items = list(items)
    jobs = settings.JOBS if jobs is None else jobs
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as executor:
        return list(executor.map(fn, items))
