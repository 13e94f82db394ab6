"""In-memory vector index with optional scalar or product quantization.

Stored vectors are searched by cosine similarity against their *stored*
representation: raw vectors for ``no``, dequantized 8-bit codes for ``sq``,
and decoded PQ centroids for ``pq``.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .corpus import Chunk

logger = logging.getLogger(__name__)

QUANT_MODES = ("no", "sq", "pq")
MAGIC = b"CEBVIDX1"
DEFAULT_DIM = 256
_TOKEN = re.compile(r"\w+")


class EmbeddingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingProvider:
    """``builtin`` hashes words into ``dim`` buckets; ``http`` calls an
    OpenAI-compatible ``/v1/embeddings`` endpoint."""

    kind: str = "builtin"
    dim: int = DEFAULT_DIM
    base_url: str | None = None
    model: str = ""
    timeout: float = 60.0

    @classmethod
    def from_dict(cls, d) -> "EmbeddingProvider":
        return cls(**dict(d)) if d else cls()


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hash_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """L2-normalized bag-of-words count vector over hashed buckets.

    Text without word tokens is embedded as the single empty token so every
    output has unit norm.
    """
    tokens = _TOKEN.findall(text.lower()) or [""]
    v = np.zeros(dim)
    for tok in tokens:
        v[_bucket(tok, dim)] += 1.0
    return v / np.linalg.norm(v)


def embed(
    texts: Sequence[str],
    provider: EmbeddingProvider | None = None,
    transport: httpx.BaseTransport | None = None,
) -> np.ndarray:
    """Embed ``texts`` into an (n, d) float64 array."""
    provider = provider or EmbeddingProvider()
    if provider.kind == "builtin":
        if not texts:
            return np.zeros((0, provider.dim))
        return np.stack([hash_embed(t, provider.dim) for t in texts])
    if provider.kind != "http":
        raise ValueError(f"unknown embedding provider {provider.kind!r}")
    if not texts:
        return np.zeros((0, provider.dim))
    url = provider.base_url.rstrip("/")
    if not url.endswith("/embeddings"):
        url += "/v1/embeddings"
    try:
        with httpx.Client(timeout=provider.timeout, transport=transport) as client:
            resp = client.post(url, json={"input": list(texts), "model": provider.model})
    except httpx.HTTPError as e:
        raise EmbeddingError(f"embedding provider unreachable: {e}") from e
    if resp.status_code >= 400:
        raise EmbeddingError(f"embedding provider returned HTTP {resp.status_code}")
    data = resp.json().get("data", [])
    if len(data) != len(texts):
        raise EmbeddingError(f"expected {len(texts)} embeddings, got {len(data)}")
    out = np.asarray([row["embedding"] for row in data], dtype=np.float64)
    if out.ndim != 2 or not np.all(np.isfinite(out)):
        raise EmbeddingError("embedding provider returned ragged or non-finite vectors")
    return out


# ---------------------------------------------------------------------------
# Scalar quantization
# ---------------------------------------------------------------------------


@dataclass
class ScalarQuantParams:
    mins: np.ndarray
    maxs: np.ndarray
    bits: int = 8

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "ScalarQuantParams":
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return cls(vectors.min(axis=0), vectors.max(axis=0))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sq_quantize(v: np.ndarray, p: ScalarQuantParams) -> np.ndarray:
    """8-bit codes, one per dimension. Works on a vector or a batch of rows."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != p.mins.shape[0]:
        raise ValueError(f"dimension mismatch: {v.shape[-1]} vs {p.mins.shape[0]}")
    span = p.maxs - p.mins
    flat = span == 0
    scaled = (v - p.mins) / np.where(flat, 1.0, span) * 255.0
    codes = np.clip(_round_half_away(scaled), 0, 255)
    return np.where(flat, 0, codes).astype(np.uint8)


def sq_dequantize(codes: np.ndarray, p: ScalarQuantParams) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    return p.mins + codes / 255.0 * (p.maxs - p.mins)


# ---------------------------------------------------------------------------
# Product quantization
# ---------------------------------------------------------------------------


@dataclass
class ProductQuantParams:
    M: int
    k: int
    codebooks: np.ndarray  # (M, k, d // M)
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.M * self.codebooks.shape[2]


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin picks the lowest index on ties
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _seed_centroids(sub: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``k`` distinct training sub-vectors, D^2-weighted after the first."""
    n = len(sub)
    chosen = [int(rng.integers(n))]
    d2 = ((sub - sub[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # fewer distinct points than k: fall back to unchosen indices
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, ((sub - sub[idx]) ** 2).sum(axis=1))
    return sub[chosen].copy()


def _lloyd(sub: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float) -> np.ndarray:
    centroids = _seed_centroids(sub, k, rng)
    for _ in range(max_iter):
        assign = _nearest(sub, centroids)
        updated = centroids.copy()
        for j in range(k):
            members = sub[assign == j]
            if len(members):
                updated[j] = members.mean(axis=0)
        shift = np.abs(updated - centroids).max()
        centroids = updated
        if shift < tol:
            break
    return centroids


def pq_train(
    vectors: np.ndarray, M: int, k: int, seed: int = 0, max_iter: int = 25, tol: float = 1e-6
) -> ProductQuantParams:
    """Per-subspace k-means (Lloyd's) with seeded initialization."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, d = vectors.shape
    if not 1 <= k <= 256:
        raise ValueError(f"k must be in [1, 256], got {k}")
    if M < 1 or d % M:
        raise ValueError(f"dimension {d} is not divisible by M={M}")
    if n < k:
        raise ValueError(f"need at least k={k} training vectors, got {n}")
    rng = np.random.default_rng(seed)
    sd = d // M
    books = np.stack([_lloyd(vectors[:, m * sd : (m + 1) * sd], k, rng, max_iter, tol) for m in range(M)])
    return ProductQuantParams(M, k, books, seed)


def pq_encode(v: np.ndarray, p: ProductQuantParams) -> np.ndarray:
    """M codes per vector; accepts a single vector or a batch of rows."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != p.dim:
        raise ValueError(f"dimension mismatch: {v.shape[1]} vs {p.dim}")
    sd = p.codebooks.shape[2]
    codes = np.stack(
        [_nearest(v[:, m * sd : (m + 1) * sd], p.codebooks[m]) for m in range(p.M)], axis=1
    ).astype(np.uint8)
    return codes[0] if single else codes


def pq_decode(codes: np.ndarray, p: ProductQuantParams) -> np.ndarray:
    codes = np.asarray(codes)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    out = np.concatenate([p.codebooks[m][codes[:, m]] for m in range(p.M)], axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------


class VectorIndex:
    """Flat index. Build once, then search concurrently."""

    def __init__(self, mode: str = "no", dim: int | None = None, pq_M: int = 8, pq_k: int = 256, seed: int = 0):
        if mode not in QUANT_MODES:
            raise ValueError(f"unknown quantization mode {mode!r}; expected one of {QUANT_MODES}")
        self.mode = mode
        self.dim = dim
        self.pq_M = pq_M
        self.pq_k = pq_k
        self.seed = seed
        self.chunks: list[Chunk] = []
        self.raw: np.ndarray | None = None
        self.codes: np.ndarray | None = None
        self.sq_params: ScalarQuantParams | None = None
        self.pq_params: ProductQuantParams | None = None
        self._stored: np.ndarray | None = None
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.chunks)

    @classmethod
    def build(cls, chunks: Sequence[Chunk], vectors: np.ndarray, mode: str = "no", **kw) -> "VectorIndex":
        index = cls(mode, **kw)
        index.add(chunks, vectors)
        return index

    def add(self, chunks: Sequence[Chunk], vectors: np.ndarray) -> None:
        """Insert all entries and fit the quantizer on them. Single call only."""
        if self.chunks:
            raise RuntimeError("index is already built")
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if len(chunks) != len(vectors):
            raise ValueError(f"{len(chunks)} chunks but {len(vectors)} vectors")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors must be finite")
        if self.dim is not None and vectors.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: index has {self.dim}, got {vectors.shape[1]}")
        self.dim = vectors.shape[1]
        self.chunks = list(chunks)
        if self.mode == "no":
            self.raw = vectors.copy()
        elif self.mode == "sq":
            self.sq_params = ScalarQuantParams.fit(vectors)
            self.codes = sq_quantize(vectors, self.sq_params)
        else:
            k = min(self.pq_k, len(vectors))
            if k < self.pq_k:
                logger.warning("pq: only %d vectors, reducing centroids from %d to %d", len(vectors), self.pq_k, k)
            self.pq_params = pq_train(vectors, self.pq_M, k, self.seed)
            self.codes = pq_encode(vectors, self.pq_params)
        self._finalize()

    def _finalize(self) -> None:
        if self.mode == "no":
            stored = self.raw
        elif self.mode == "sq":
            stored = sq_dequantize(self.codes, self.sq_params)
        else:
            stored = pq_decode(self.codes, self.pq_params)
        self._stored = stored
        self._norms = np.linalg.norm(stored, axis=1)

    def stored_vectors(self) -> np.ndarray:
        return self._stored

    def search(self, q: np.ndarray, k: int) -> list[tuple[str, float]]:
        return search_top_k(self, q, k)

    # -- snapshot -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        mode_byte = QUANT_MODES.index(self.mode)
        M = self.pq_params.M if self.pq_params else 0
        k = self.pq_params.k if self.pq_params else 0
        parts = [MAGIC, struct.pack("<BIIII", mode_byte, self.dim or 0, M, k, len(self))]
        if self.mode == "sq":
            parts.append(self.sq_params.mins.astype("<f4").tobytes())
            parts.append(self.sq_params.maxs.astype("<f4").tobytes())
            parts.append(self.codes.astype(np.uint8).tobytes())
        elif self.mode == "pq":
            parts.append(self.pq_params.codebooks.astype("<f4").tobytes())
            parts.append(self.codes.astype(np.uint8).tobytes())
        else:
            parts.append(self.raw.astype("<f4").tobytes())
        for c in self.chunks:
            for s in (c.chunk_id, c.source_path):
                b = s.encode("utf-8")
                parts.append(struct.pack("<I", len(b)) + b)
            parts.append(struct.pack("<Q", c.start_offset))
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        """Load a snapshot. Stored floats are 32-bit, and chunk texts are not kept."""
        buf = Path(path).read_bytes()
        if buf[:8] != MAGIC:
            raise ValueError(f"{path}: not a vector index snapshot")
        mode_byte, d, M, k, count = struct.unpack_from("<BIIII", buf, 8)
        pos = 8 + struct.calcsize("<BIIII")

        def take(dtype, n):
            nonlocal pos
            arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
            pos += arr.nbytes
            return arr

        index = cls(QUANT_MODES[mode_byte], d, pq_M=M or 8, pq_k=k or 256)
        if index.mode == "sq":
            mins = take("<f4", d).astype(np.float64)
            maxs = take("<f4", d).astype(np.float64)
            index.sq_params = ScalarQuantParams(mins, maxs)
            index.codes = take(np.uint8, count * d).reshape(count, d).copy()
        elif index.mode == "pq":
            books = take("<f4", M * k * (d // M)).astype(np.float64).reshape(M, k, d // M)
            index.pq_params = ProductQuantParams(M, k, books)
            index.codes = take(np.uint8, count * M).reshape(count, M).copy()
        else:
            index.raw = take("<f4", count * d).astype(np.float64).reshape(count, d)
        chunks = []
        for _ in range(count):
            strs = []
            for _ in range(2):
                (n,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                strs.append(buf[pos : pos + n].decode("utf-8"))
                pos += n
            (offset,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            chunks.append(Chunk(strs[0], strs[1], offset, ""))
        index.chunks = chunks
        index._finalize()
        return index


def search_top_k(index: VectorIndex, q: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top-``k`` entries by cosine similarity, ties broken by insertion order."""
    if len(index) == 0:
        raise ValueError("search on an empty index")
    if k < 1:
        raise ValueError("k must be positive")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ValueError(f"dimension mismatch: index has {index.dim}, query has {q.shape}")
    qn = np.linalg.norm(q)
    denom = index._norms * qn
    # row-wise reduction: identical rows always produce identical scores
    dots = (index._stored * q).sum(axis=1)
    scores = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.chunks[i].chunk_id, float(scores[i])) for i in order]
