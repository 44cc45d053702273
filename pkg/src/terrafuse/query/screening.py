"""Text-based feature screening: keyword overlap plus hashed trigrams.

The embedding is a 256-bucket character-trigram count vector hashed
with 32-bit FNV-1a and L2-normalized. No model weights, no platform
dependence: the same string embeds identically everywhere, which is
what lets ranking examples be pinned in tests.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from terrafuse.model import FeatureDef

EMBED_DIM = 256
_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619

# score = KEYWORD_WEIGHT * jaccard + EMBED_WEIGHT * cosine
KEYWORD_WEIGHT = 0.5
EMBED_WEIGHT = 0.5

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(s: str) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(s.casefold()))


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def embed_text(s: str) -> tuple[float, ...]:
    """Hashed character trigrams of the lowercased string, L2-normalized.

    Strings shorter than 3 characters embed to the zero vector, which
    is the flagged non-unit case callers must expect.
    """
    folded = s.casefold()
    counts = [0] * EMBED_DIM
    for i in range(len(folded) - 2):
        trigram = folded[i : i + 3]
        counts[_fnv1a(trigram.encode("utf-8")) % EMBED_DIM] += 1
    norm = math.sqrt(sum(c * c for c in counts))
    if norm == 0:
        return tuple(0.0 for _ in range(EMBED_DIM))
    return tuple(c / norm for c in counts)


def cosine(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return sum(x * y for x, y in zip(a, b))


@dataclass(frozen=True)
class FeatureEmbedding:
    feature_id: str
    keywords: frozenset[str]
    vector: tuple[float, ...]


def build_feature_index(features: list[FeatureDef]) -> list[FeatureEmbedding]:
    """Index each feature by the tokens and trigrams of name + annotation."""
    index = []
    for f in features:
        text = f.name if not f.annotation else f"{f.name} {f.annotation}"
        index.append(
            FeatureEmbedding(
                feature_id=f.id,
                keywords=tokenize(text),
                vector=embed_text(text),
            )
        )
    return index


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def screen_features(
    query: str, k: int, index: list[FeatureEmbedding]
) -> list[tuple[str, float]]:
    """Top-k features by combined keyword/embedding score, zero scores dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q_tokens = tokenize(query)
    q_vec = embed_text(query)
    scored = []
    for fe in index:
        score = KEYWORD_WEIGHT * _jaccard(q_tokens, fe.keywords) + EMBED_WEIGHT * cosine(q_vec, fe.vector)
        if score > 0.0:
            scored.append((fe.feature_id, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]
