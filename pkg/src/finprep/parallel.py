"""Order-preserving process-pool map with read-only shared state."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, List

_shared: Any = None


def _install(shared):
    global _shared
    _shared = shared


def _call(args):
    fn, item = args
    return fn(_shared, item)


def ordered_map(fn: Callable[[Any, Any], Any], items: Iterable, workers: int = 1, shared=None, chunksize: int = 16) -> List:
    """Return ``[fn(shared, x) for x in items]``, computed by ``workers``
    processes. Results come back in input order regardless of worker count.
    ``fn`` must be a module-level function."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(shared, x) for x in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=_install, initargs=(shared,)) as ex:
        return list(ex.map(_call, ((fn, x) for x in items), chunksize=chunksize))
