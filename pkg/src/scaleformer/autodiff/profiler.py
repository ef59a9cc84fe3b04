"""Multiply-accumulate accounting for matmuls and convolutions.

Counting is off unless a :func:`profile` block is active. Ops report their
MACs through :func:`record`; the active :func:`mac_scope` label decides which
bucket they land in, so attention cost can be itemized apart from projections.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from typing import Iterator


class MacCounter:
    def __init__(self) -> None:
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def __getitem__(self, scope: str) -> int:
        return self.by_scope.get(scope, 0)

    def reset(self) -> None:
        self.by_scope.clear()

    def __repr__(self) -> str:
        return f"MacCounter({dict(self.by_scope)})"


_active: list[MacCounter] = []
_scopes: list[str] = ["other"]


def enabled() -> bool:
    return bool(_active)


def record(macs: int) -> None:
    if not _active:
        return
    scope = _scopes[-1]
    for counter in _active:
        counter.by_scope[scope] += int(macs)


@contextlib.contextmanager
def profile() -> Iterator[MacCounter]:
    """Count MACs of every forward op executed inside the block."""
    counter = MacCounter()
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    _scopes.append(name)
    try:
        yield
    finally:
        _scopes.pop()
