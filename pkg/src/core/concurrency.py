"""
Concurrency Helpers

독립 작업(training restart, 평가 case)을 thread pool 에서 동시에 실행합니다.
결과는 항상 입력 순서대로 반환되므로 이후의 reduction 이 결정론적입니다.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, Type, TypeVar, Union
import asyncio
import logging

# Configure logging
logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def _gather(fn: Callable[[T], R], items: Sequence[T], n_jobs: int) -> List[Union[R, BaseException]]:
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=n_jobs) as executor:
        tasks = [loop.run_in_executor(executor, fn, item) for item in items]
        # Wait for all tasks
        return await asyncio.gather(*tasks, return_exceptions=True)


def run_all(
    fn: Callable[[T], R],
    items: Sequence[T],
    n_jobs: int = 1,
    expected: Tuple[Type[BaseException], ...] = (Exception,)
) -> List[Union[R, BaseException]]:
    """
    items 각각에 fn 적용 (n_jobs > 1 이면 동시 실행)

    Args:
        fn: 작업 함수
        items: 입력 목록
        n_jobs: 최대 동시 실행 수
        expected: 결과 목록에 기록할 예외 타입 (그 외 예외는 전파)

    Returns:
        List: 입력 순서대로 결과 또는 예외
    """
    if n_jobs > 1 and len(items) > 1:
        logger.debug(f"Running {len(items)} tasks on {n_jobs} threads")
        outcomes = asyncio.run(_gather(fn, items, n_jobs))
    else:
        outcomes = []
        for item in items:
            try:
                outcomes.append(fn(item))
            except expected as e:
                outcomes.append(e)

    for outcome in outcomes:
        if isinstance(outcome, BaseException) and not isinstance(outcome, expected):
            raise outcome
    return outcomes
