"""Embedding providers for tool feature texts.

The hash provider is the default: fully deterministic, dependency-free,
platform-stable. It is not semantically meaningful, but clustering over
it is reproducible, which is what the tests and the offline pipeline
need. Real providers can be plugged in behind the same protocol.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Protocol


class EmbeddingProvider(Protocol):
    """Maps a text to a fixed-dimension vector, deterministically per run."""

    dimensionality: int

    def embed(self, text: str) -> list[float]: ...


class HashEmbedding:
    """Deterministic pseudo-embedding derived from SHA-256 of the text.

    Identical texts always map to identical vectors, on any platform.
    """

    def __init__(self, dimensionality: int = 64):
        if dimensionality < 1:
            raise ValueError("dimensionality must be >= 1")
        self.dimensionality = dimensionality

    def embed(self, text: str) -> list[float]:
        vec: list[float] = []
        counter = 0
        while len(vec) < self.dimensionality:
            block = hashlib.sha256(f"{text}\x00{counter}".encode("utf-8")).digest()
            # 4 unsigned 64-bit lanes per block, mapped into [-1, 1)
            for (lane,) in struct.iter_unpack(">Q", block):
                vec.append(lane / 2**63 - 1.0)
                if len(vec) == self.dimensionality:
                    break
            counter += 1
        return vec


class StaticEmbedding:
    """Lookup-table provider for tests that construct embeddings by hand."""

    def __init__(self, table: dict[str, list[float]], dimensionality: int):
        self.table = dict(table)
        self.dimensionality = dimensionality

    def embed(self, text: str) -> list[float]:
        return list(self.table[text])
