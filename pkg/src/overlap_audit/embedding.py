"""Embedding providers and storage: each sample gets two unit vectors, one for
the formatted prompt and one for the answer text.

Three providers share one interface: a deterministic hashed bag-of-words model
(offline testing), a vector-file lookup, and an HTTP service client for real
sentence-embedding models.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import sqlite3
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import PreparedCorpus, Sample, format_prompt, normalize_text, split_alnum
from .errors import AuditError

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-4
TOKEN_ENV_VAR = "OVERLAP_AUDIT_HTTP_TOKEN"

_VECTOR_FILE_MAGIC = b"EMBV1"
_VECTOR_FILE_VERSION = 1
_HEADER = struct.Struct("<5sBIQ")
_ID_LEN = struct.Struct("<H")


class ProviderError(AuditError):
    """Embedding provider failure. `retryable` marks transient transport
    errors; `attempts` records how many tries were made."""

    def __init__(self, message: str, retryable: bool = False, attempts: int | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class VectorFileError(AuditError):
    pass


@dataclass(frozen=True)
class EmbeddedSample:
    """A sample's prompt-side and answer-side unit vectors (float32)."""

    sample_id: str
    q_vec: np.ndarray
    a_vec: np.ndarray

    def __post_init__(self):
        if self.q_vec.shape != self.a_vec.shape or self.q_vec.ndim != 1:
            raise AuditError(
                f"sample {self.sample_id!r}: vector shapes differ "
                f"({self.q_vec.shape} vs {self.a_vec.shape})"
            )
        if self.q_vec.shape[0] < 1:
            raise AuditError(f"sample {self.sample_id!r}: zero-dimensional vectors")

    @property
    def dimension(self) -> int:
        return int(self.q_vec.shape[0])

    @classmethod
    def create(cls, sample_id: str, q_vec, a_vec) -> "EmbeddedSample":
        """Construct with L2 normalization; rejects zero or non-finite vectors."""
        return cls(sample_id, _unit_f32(q_vec, sample_id), _unit_f32(a_vec, sample_id))


def _unit_f32(vec, label: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise AuditError(f"{label!r}: expected a 1-d vector")
    norm = float(np.linalg.norm(arr))
    if not math.isfinite(norm) or norm == 0.0:
        raise AuditError(f"{label!r}: cannot normalize zero or non-finite vector")
    out = (arr / norm).astype(np.float32)
    out.flags.writeable = False
    return out


def text_key(text: str) -> str:
    """Cache/lookup key: digest of the normalized text."""
    return hashlib.sha256(normalize_text(text).encode("utf-8")).hexdigest()


def _config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:12]


class EmbeddingProvider:
    """Base provider: returns one raw vector of `dimension` floats per text."""

    kind = "base"

    def __init__(self, dimension: int, batch_size: int = 64, config: dict | None = None):
        if dimension < 1:
            raise AuditError("provider dimension must be >= 1")
        self.dimension = dimension
        self.batch_size = max(1, batch_size)
        self.config = dict(config or {})

    @property
    def identity(self) -> str:
        return f"{self.kind}:d{self.dimension}:{_config_digest(self.config)}"

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        raise NotImplementedError


def _bow_bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dimension


class DeterministicBowProvider(EmbeddingProvider):
    """Hashed bag-of-words: lowercase alphanumeric tokens, each hashed to one of
    D buckets, weighted 1 + ln(tf). Fully deterministic across processes."""

    kind = "deterministic_bow"

    def __init__(self, dimension: int = 256, batch_size: int = 64):
        super().__init__(dimension, batch_size, {"dimension": dimension})

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = np.zeros(self.dimension, dtype=np.float64)
            tokens = split_alnum(text.lower())
            if not tokens:
                raise ProviderError(f"cannot embed text with no alphanumeric tokens: {text!r}")
            counts: dict[str, int] = {}
            for token in tokens:
                counts[token] = counts.get(token, 0) + 1
            for token, count in counts.items():
                vec[_bow_bucket(token, self.dimension)] += 1.0 + math.log(count)
            out.append(vec.tolist())
        return out


class VectorFileProvider(EmbeddingProvider):
    """Looks vectors up in a JSONL file of {"text": ..., "vector": [...]},
    keyed by normalized-text digest. Unknown texts are fatal."""

    kind = "vector_file"

    def __init__(self, path: str, dimension: int | None = None, batch_size: int = 64):
        self._table: dict[str, list[float]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise VectorFileError(f"{path}: line {line_no}: malformed JSON") from exc
                vector = [float(x) for x in record["vector"]]
                if dimension is None:
                    dimension = len(vector)
                elif len(vector) != dimension:
                    raise VectorFileError(
                        f"{path}: line {line_no}: expected dimension {dimension}, got {len(vector)}"
                    )
                self._table[text_key(record["text"])] = vector
        if dimension is None:
            raise VectorFileError(f"{path}: no vectors found")
        super().__init__(dimension, batch_size, {"path": str(path)})

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vector = self._table.get(text_key(text))
            if vector is None:
                raise ProviderError(f"vector file has no entry for text: {text[:80]!r}")
            out.append(vector)
        return out


class HttpServiceProvider(EmbeddingProvider):
    """POSTs {"texts": [...]} to {base_url}/embed and expects
    {"vectors": [[...]]} back, with optional per-text "truncated" flags."""

    kind = "http_service"

    def __init__(
        self,
        base_url: str,
        dimension: int,
        batch_size: int = 32,
        timeout: float = 30.0,
        max_retries: int = 3,
        retry_wait: float = 0.2,
    ):
        super().__init__(
            dimension,
            batch_size,
            {"base_url": base_url.rstrip("/"), "dimension": dimension},
        )
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max(1, max_retries)
        self.retry_wait = retry_wait
        self.truncated_keys: set[str] = set()

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(TOKEN_ENV_VAR)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        import requests

        last_error = "unknown error"
        for attempt in range(1, self.max_retries + 1):
            try:
                response = requests.post(
                    f"{self.base_url}/embed",
                    json={"texts": texts},
                    timeout=self.timeout,
                    headers=self._headers(),
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if 200 <= response.status_code < 300:
                    body = response.json()
                    vectors = body["vectors"]
                    if len(vectors) != len(texts):
                        raise ProviderError(
                            f"embedding service returned {len(vectors)} vectors for {len(texts)} texts"
                        )
                    for flag, text in zip(body.get("truncated") or [], texts):
                        if flag:
                            self.truncated_keys.add(text_key(text))
                    return vectors
                last_error = f"HTTP {response.status_code}"
            if attempt < self.max_retries:
                time.sleep(self.retry_wait * attempt)
        raise ProviderError(
            f"embedding service failed after {self.max_retries} attempts: {last_error}",
            retryable=True,
            attempts=self.max_retries,
        )


def provider_from_config(config: dict) -> EmbeddingProvider:
    kind = config.get("kind")
    if kind == "deterministic_bow":
        return DeterministicBowProvider(
            dimension=int(config.get("dimension", 256)),
            batch_size=int(config.get("batch_size", 64)),
        )
    if kind == "vector_file":
        return VectorFileProvider(
            path=config["path"],
            dimension=config.get("dimension"),
            batch_size=int(config.get("batch_size", 64)),
        )
    if kind == "http_service":
        return HttpServiceProvider(
            base_url=config["base_url"],
            dimension=int(config["dimension"]),
            batch_size=int(config.get("max_batch", 32)),
            timeout=float(config.get("timeout", 30.0)),
            max_retries=int(config.get("max_retries", 3)),
        )
    raise AuditError(f"unknown embedding provider kind: {kind!r}")


class VectorCache:
    """sqlite-backed vector cache keyed by (provider identity, text digest).

    Safe for concurrent use from multiple threads; vectors round-trip
    bit-exactly as float32 blobs.
    """

    def __init__(self, path: str):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS vectors ("
                " provider TEXT NOT NULL, key TEXT NOT NULL,"
                " dim INTEGER NOT NULL, data BLOB NOT NULL,"
                " PRIMARY KEY (provider, key))"
            )
            self._conn.commit()

    def get_many(self, provider_id: str, keys: list[str]) -> dict[str, np.ndarray]:
        found: dict[str, np.ndarray] = {}
        with self._lock:
            for key in keys:
                row = self._conn.execute(
                    "SELECT dim, data FROM vectors WHERE provider = ? AND key = ?",
                    (provider_id, key),
                ).fetchone()
                if row is not None:
                    vec = np.frombuffer(row[1], dtype="<f4", count=row[0])
                    found[key] = vec
        return found

    def put_many(self, provider_id: str, items: dict[str, np.ndarray]) -> None:
        with self._lock:
            self._conn.executemany(
                "INSERT OR REPLACE INTO vectors (provider, key, dim, data) VALUES (?, ?, ?, ?)",
                [
                    (provider_id, key, len(vec), vec.astype("<f4", copy=False).tobytes())
                    for key, vec in items.items()
                ],
            )
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()


def _normalize_result(provider: EmbeddingProvider, text: str, raw) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != provider.dimension:
        raise ProviderError(
            f"dimension mismatch: expected {provider.dimension}, got {arr.shape} "
            f"for text {text[:80]!r}"
        )
    norm = float(np.linalg.norm(arr))
    if not math.isfinite(norm) or norm == 0.0:
        raise ProviderError(f"provider returned zero or non-finite vector for text {text[:80]!r}")
    out = (arr / norm).astype(np.float32)
    out.flags.writeable = False
    return out


def embed_texts(
    provider: EmbeddingProvider,
    texts: list[str],
    cache: VectorCache | None = None,
    max_in_flight: int = 1,
) -> list[np.ndarray]:
    """Embed texts in input order, L2-normalized float32.

    Requests are de-duplicated by normalized-text digest (the cache key), so
    repeated texts cost one provider call. Completed batches are written to the
    cache immediately, letting interrupted runs resume.
    """
    if not texts:
        raise AuditError("texts must be non-empty")
    keys = [text_key(t) for t in texts]
    by_key: dict[str, np.ndarray] = {}
    pending: list[tuple[str, str]] = []
    seen: set[str] = set()
    for key, text in zip(keys, texts):
        if key not in seen:
            seen.add(key)
            pending.append((key, text))
    if cache is not None:
        cached = cache.get_many(provider.identity, [k for k, _ in pending])
        by_key.update(cached)
        pending = [(k, t) for k, t in pending if k not in cached]

    batches = [
        pending[i : i + provider.batch_size] for i in range(0, len(pending), provider.batch_size)
    ]

    def run_batch(batch: list[tuple[str, str]]) -> dict[str, np.ndarray]:
        raw_vectors = provider.embed_batch([t for _, t in batch])
        result = {
            key: _normalize_result(provider, text, raw)
            for (key, text), raw in zip(batch, raw_vectors)
        }
        if cache is not None:
            cache.put_many(provider.identity, result)
        return result

    if max_in_flight > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            for result in pool.map(run_batch, batches):
                by_key.update(result)
    else:
        for batch in batches:
            by_key.update(run_batch(batch))
    return [by_key[k] for k in keys]


def embed_corpus(
    provider: EmbeddingProvider,
    corpus: PreparedCorpus,
    cache: VectorCache | None = None,
    max_in_flight: int = 1,
    id_fn=None,
) -> list[EmbeddedSample]:
    """Embed each sample's formatted prompt (q side) and answer text (a side)."""
    samples = list(corpus.samples)
    if not samples:
        raise AuditError("cannot embed an empty corpus")
    id_fn = id_fn or (lambda s: s.id)
    prompts = [format_prompt(s) for s in samples]
    answers = [s.answer for s in samples]
    q_vecs = embed_texts(provider, prompts, cache=cache, max_in_flight=max_in_flight)
    a_vecs = embed_texts(provider, answers, cache=cache, max_in_flight=max_in_flight)
    return [
        EmbeddedSample(sample_id=id_fn(s), q_vec=q, a_vec=a)
        for s, q, a in zip(samples, q_vecs, a_vecs)
    ]


def write_vectors(path, samples: list[EmbeddedSample], dimension: int | None = None) -> None:
    """Write the EMBV1 binary vector file (little-endian, f32)."""
    if samples:
        dimension = samples[0].dimension
        for sample in samples:
            if sample.dimension != dimension:
                raise VectorFileError(
                    f"sample {sample.sample_id!r}: dimension {sample.dimension} != {dimension}"
                )
    elif dimension is None:
        dimension = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_VECTOR_FILE_MAGIC, _VECTOR_FILE_VERSION, dimension, len(samples)))
        for sample in samples:
            id_bytes = sample.sample_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise VectorFileError(f"sample id too long ({len(id_bytes)} bytes)")
            fh.write(_ID_LEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(sample.q_vec.astype("<f4", copy=False).tobytes())
            fh.write(sample.a_vec.astype("<f4", copy=False).tobytes())


def read_vectors(path) -> list[EmbeddedSample]:
    """Read an EMBV1 file back, bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise VectorFileError(f"{path}: truncated header at offset {len(data)}")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != _VECTOR_FILE_MAGIC:
        raise VectorFileError(f"{path}: bad magic {magic!r} at offset 0")
    if version != _VECTOR_FILE_VERSION:
        raise VectorFileError(f"{path}: unsupported version {version} at offset 5")
    if count > 0 and dim < 1:
        raise VectorFileError(f"{path}: dimension 0 with {count} records at offset 6")
    offset = _HEADER.size
    vec_bytes = dim * 4
    samples: list[EmbeddedSample] = []
    for _ in range(count):
        if offset + _ID_LEN.size > len(data):
            raise VectorFileError(f"{path}: truncated record at offset {offset}")
        (id_len,) = _ID_LEN.unpack_from(data, offset)
        offset += _ID_LEN.size
        if offset + id_len + 2 * vec_bytes > len(data):
            raise VectorFileError(f"{path}: truncated record at offset {offset}")
        sample_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        q_vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
        a_vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
        for label, vec in (("q", q_vec), ("a", a_vec)):
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise VectorFileError(
                    f"{path}: {label}-vector of {sample_id!r} has norm {norm:.6f} "
                    f"(record ending at offset {offset})"
                )
        samples.append(EmbeddedSample(sample_id=sample_id, q_vec=q_vec, a_vec=a_vec))
    if offset != len(data):
        raise VectorFileError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    return samples
