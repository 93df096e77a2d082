import hashlib
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from .config import settings

T = TypeVar("T")
R = TypeVar("R")


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stdout,
        force=True,
    )


def derive_seed(seed: int, *role) -> int:
    """
    Child seed for one source of randomness, e.g. derive_seed(7, "shuffle-epoch", 3).

    Uses blake2b over the parent seed and the role parts, so two roles never
    share a stream and the value is stable across platforms and Python versions.
    """
    text = ":".join([str(int(seed))] + [str(r) for r in role])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *role) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *role) if role else seed)


def worker_count(limit: Optional[int] = None) -> int:
    n = settings.THREADS
    if limit is not None:
        n = min(n, limit)
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> List[R]:
    """Map fn over items on a thread pool; results keep the input order."""
    items = list(items)
    workers = worker_count(max_workers if max_workers is not None else len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
