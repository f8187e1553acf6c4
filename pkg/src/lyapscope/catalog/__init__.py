"""Built-in example systems together with their expected verdicts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from ..errors import LyapscopeError
from ..exprcore.system import DiffeoDef, ScalarCertificate, SystemDef, SystemDocument, parse_document


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    document: SystemDocument
    expected: dict
    provenance: str

    @property
    def system(self) -> SystemDef:
        return self.document.system

    @property
    def certificates(self) -> dict:
        return self.document.certificates

    def certificate(self, name: str | None = None) -> ScalarCertificate:
        return self.document.certificate(name)

    def diffeo(self, name: str | None = None) -> DiffeoDef:
        return self.document.diffeo(name)

    def matrix(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.document.extra["matrices"][name], dtype=float)
        except KeyError:
            raise LyapscopeError(f"catalog entry {self.id!r} has no matrix {name!r}") from None

    @property
    def matrices(self) -> dict:
        return {k: np.asarray(v, dtype=float) for k, v in self.document.extra.get("matrices", {}).items()}


def _data():
    return resources.files(__package__).joinpath("data")


def raw(id: str) -> dict:
    """The entry's system-definition document as stored."""
    path = _data().joinpath(f"{id}.json")
    if not path.is_file():
        raise LyapscopeError(f"unknown catalog id {id!r}; known: {', '.join(list_ids())}")
    return json.loads(path.read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def get(id: str) -> CatalogEntry:
    doc = raw(id)
    parsed = parse_document(doc, name=id)
    return CatalogEntry(id, parsed, dict(doc.get("expected", {})), doc.get("provenance", ""))


def list_ids() -> list:
    return sorted(p.name[:-5] for p in _data().iterdir() if p.name.endswith(".json"))


def entries() -> list:
    return [get(i) for i in list_ids()]


__all__ = ["CatalogEntry", "entries", "get", "list_ids", "raw"]
