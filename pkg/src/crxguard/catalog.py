"""The fixed catalog of declarable API permissions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

CATALOG_SIZE = 70


@dataclass(frozen=True)
class PermissionCatalog:
    names: tuple[str, ...]
    version: str = "v1"

    def __post_init__(self) -> None:
        if len(self.names) != CATALOG_SIZE:
            raise ValueError(f"catalog must hold {CATALOG_SIZE} names, got {len(self.names)}")
        if len(set(self.names)) != len(self.names) or list(self.names) != sorted(self.names):
            raise ValueError("catalog names must be unique and sorted")

    def __contains__(self, name: object) -> bool:
        return name in self.index

    def __len__(self) -> int:
        return len(self.names)

    @property
    def index(self) -> dict[str, int]:
        return _index(self.names)


@lru_cache(maxsize=8)
def _index(names: tuple[str, ...]) -> dict[str, int]:
    return {n: i for i, n in enumerate(names)}


def parse_catalog_text(text: str) -> PermissionCatalog:
    names = [ln.strip() for ln in text.splitlines()]
    return PermissionCatalog(tuple(n for n in names if n and not n.startswith("#")))


@lru_cache(maxsize=1)
def default_catalog() -> PermissionCatalog:
    text = resources.files("crxguard").joinpath("data/permissions.txt").read_text("utf-8")
    return parse_catalog_text(text)
