"""Subscription indexes: an exact linear scan and an HNSW graph.

Both answer the same question: which live subscriptions have a query
embedding whose cosine similarity to a chunk embedding meets that
subscription's own threshold. Results are ordered by similarity
descending, then subscription id ascending.

The HNSW graph follows Malkov & Yashunin (greedy descent through sparse
upper layers, beam search on the dense base layer, heuristic neighbor
selection). Because thresholds are stored per subscription, the base
layer search is a range search: besides the usual ``ef`` beam, any node
at or above the smallest indexed threshold keeps the search alive, so
the frontier only stops once it has dropped below every threshold.
"""

from __future__ import annotations

import heapq
import math
import random
import struct
import threading
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import StateError, ValidationError
from .vectors import SIMILARITY_DECIMALS, as_embedding

__all__ = ["MatchCandidate", "HnswParams", "ExactIndex", "HnswIndex", "save_snapshot", "load_snapshot"]

# widens the range-search floor to absorb float reassociation error
_PREFILTER_SLACK = 1e-6


@dataclass(frozen=True)
class MatchCandidate:
    subscription_id: str
    similarity: float


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValidationError("HNSW M must be >= 2")
        if self.ef_search < 1 or self.ef_construction < 1:
            raise ValidationError("ef values must be >= 1")


def _collect(store: "_VectorStore", rows: np.ndarray, sims: np.ndarray) -> list[MatchCandidate]:
    """Threshold-filter raw similarities and order the survivors."""
    sims = np.clip(np.round(sims, SIMILARITY_DECIMALS), -1.0, 1.0)
    keep = sims >= np.round(store.thresholds[rows], SIMILARITY_DECIMALS)
    out = [MatchCandidate(store.ids[r], s) for r, s in zip(rows[keep].tolist(), sims[keep].tolist())]
    out.sort(key=lambda c: (-c.similarity, c.subscription_id))
    return out


class _VectorStore:
    """Growable row store shared by both index types."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError("embedding dimension must be >= 1")
        self.dim = dim
        self.vecs = np.zeros((16, dim), dtype=np.float64)
        self.thresholds = np.zeros(16, dtype=np.float64)
        self.ids: list[str] = []

    def append(self, sub_id: str, vec: np.ndarray, threshold: float) -> int:
        n = len(self.ids)
        if n == self.vecs.shape[0]:
            grown = np.zeros((2 * n, self.dim), dtype=np.float64)
            grown[:n] = self.vecs[:n]
            self.vecs = grown
            self.thresholds = np.concatenate([self.thresholds, np.zeros(n)])
        self.vecs[n] = vec
        self.thresholds[n] = threshold
        self.ids.append(sub_id)
        return n


def _check_entry(dim: int, embedding, threshold: float) -> tuple[np.ndarray, float]:
    vec = as_embedding(embedding, dim)
    if not 0.0 <= float(threshold) <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold!r}")
    return vec, float(threshold)


class ExactIndex:
    """Brute-force index. The correctness oracle for :class:`HnswIndex`."""

    def __init__(self, dim: int):
        self._store = _VectorStore(dim)
        self._row: dict[str, int] = {}
        self._lock = threading.RLock()

    @property
    def dim(self) -> int:
        return self._store.dim

    def __len__(self) -> int:
        return len(self._row)

    def __contains__(self, sub_id: str) -> bool:
        return sub_id in self._row

    def insert(self, sub_id: str, embedding, threshold: float) -> None:
        vec, threshold = _check_entry(self.dim, embedding, threshold)
        with self._lock:
            if sub_id in self._row:
                raise StateError(f"subscription {sub_id!r} already indexed")
            self._row[sub_id] = self._store.append(sub_id, vec, threshold)

    def remove(self, sub_id: str) -> None:
        with self._lock:
            if sub_id not in self._row:
                raise StateError(f"subscription {sub_id!r} is not indexed")
            del self._row[sub_id]

    def entries(self) -> Iterator[tuple[str, np.ndarray, float]]:
        with self._lock:
            rows = sorted(self._row.values())
            for r in rows:
                yield self._store.ids[r], self._store.vecs[r].copy(), float(self._store.thresholds[r])

    def match(self, query) -> list[MatchCandidate]:
        q = as_embedding(query, self.dim)
        with self._lock:
            if not self._row:
                return []
            rows = np.fromiter(self._row.values(), dtype=np.int64, count=len(self._row))
            return _collect(self._store, rows, self._store.vecs[rows] @ q)


def exact_match(index: ExactIndex, query) -> list[MatchCandidate]:
    return index.match(query)


class HnswIndex:
    """Hierarchical navigable small-world graph over subscription queries.

    Removal is a tombstone: the node keeps routing searches but never
    appears in results. Re-inserting a removed id creates a fresh node.
    """

    def __init__(self, dim: int, params: HnswParams | None = None):
        self.params = params or HnswParams()
        self._store = _VectorStore(dim)
        self._node: dict[str, int] = {}
        self._alive_mask = np.zeros(16, dtype=bool)
        self._adj0 = np.full((16, 2 * self.params.M), -1, dtype=np.int64)
        self._dirty: set[int] = set()
        self._links: list[list[list[int]]] = []
        self._entry: Optional[int] = None
        self._max_level = -1
        self._level_mult = 1.0 / math.log(self.params.M)
        self._rng = random.Random(self.params.seed)
        self._min_threshold: Optional[float] = None
        self._lock = threading.RLock()

    @property
    def dim(self) -> int:
        return self._store.dim

    def __len__(self) -> int:
        return len(self._node)

    def __contains__(self, sub_id: str) -> bool:
        return sub_id in self._node

    def entries(self) -> Iterator[tuple[str, np.ndarray, float]]:
        with self._lock:
            for sub_id, n in sorted(self._node.items(), key=lambda kv: kv[1]):
                yield sub_id, self._store.vecs[n].copy(), float(self._store.thresholds[n])

    # -- graph primitives -------------------------------------------------

    def _max_links(self, layer: int) -> int:
        return 2 * self.params.M if layer == 0 else self.params.M

    def _sims(self, q: np.ndarray, nodes: list[int]) -> np.ndarray:
        return self._store.vecs[nodes] @ q

    def _greedy(self, q: np.ndarray, node: int, sim: float, layer: int) -> tuple[int, float]:
        improved = True
        while improved:
            improved = False
            nbrs = self._links[node][layer]
            if not nbrs:
                break
            sims = self._sims(q, nbrs)
            best = int(np.argmax(sims))
            if sims[best] > sim:
                node, sim = nbrs[best], float(sims[best])
                improved = True
        return node, sim

    def _search_layer(self, q: np.ndarray, entry: int, entry_sim: float, ef: int, layer: int) -> list[tuple[float, int]]:
        visited = {entry}
        cand = [(-entry_sim, entry)]
        best = [(entry_sim, entry)]
        while cand:
            neg, c = heapq.heappop(cand)
            if -neg < best[0][0] and len(best) >= ef:
                break
            fresh = [e for e in self._links[c][layer] if e not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for e, s in zip(fresh, self._sims(q, fresh).tolist()):
                if len(best) < ef or s > best[0][0]:
                    heapq.heappush(cand, (-s, e))
                    heapq.heappush(best, (s, e))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted(best, reverse=True)

    def _select_neighbors(self, base: np.ndarray, found: list[tuple[float, int]], m: int) -> list[int]:
        # heuristic selection: keep a candidate only if it is closer to the
        # base than to every neighbor already kept, then backfill
        chosen: list[int] = []
        skipped: list[int] = []
        for sim, e in found:
            if len(chosen) >= m:
                break
            if chosen:
                to_chosen = self._sims(self._store.vecs[e], chosen)
                if np.any(to_chosen > sim):
                    skipped.append(e)
                    continue
            chosen.append(e)
        for e in skipped:
            if len(chosen) >= m:
                break
            chosen.append(e)
        return chosen

    def _shrink(self, node: int, layer: int) -> None:
        links = self._links[node][layer]
        cap = self._max_links(layer)
        if len(links) <= cap:
            return
        base = self._store.vecs[node]
        sims = self._sims(base, links)
        order = sorted(zip(sims.tolist(), links), reverse=True)
        self._links[node][layer] = self._select_neighbors(base, order, cap)

    # -- writes -----------------------------------------------------------

    def insert(self, sub_id: str, embedding, threshold: float) -> None:
        vec, threshold = _check_entry(self.dim, embedding, threshold)
        with self._lock:
            if sub_id in self._node:
                raise StateError(f"subscription {sub_id!r} already indexed")
            level = int(-math.log(1.0 - self._rng.random()) * self._level_mult)
            node = self._store.append(sub_id, vec, threshold)
            if node >= self._alive_mask.size:
                self._alive_mask = np.concatenate([self._alive_mask, np.zeros(self._alive_mask.size, dtype=bool)])
            self._alive_mask[node] = True
            self._dirty.add(node)
            self._links.append([[] for _ in range(level + 1)])
            self._node[sub_id] = node
            self._min_threshold = None

            if self._entry is None:
                self._entry, self._max_level = node, level
                return

            ep = self._entry
            ep_sim = float(self._store.vecs[ep] @ vec)
            for layer in range(self._max_level, level, -1):
                ep, ep_sim = self._greedy(vec, ep, ep_sim, layer)
            for layer in range(min(level, self._max_level), -1, -1):
                found = self._search_layer(vec, ep, ep_sim, self.params.ef_construction, layer)
                nbrs = self._select_neighbors(vec, found, self.params.M)
                self._links[node][layer] = nbrs
                for e in nbrs:
                    self._links[e][layer].append(node)
                    self._shrink(e, layer)
                    if layer == 0:
                        self._dirty.add(e)
                ep_sim, ep = found[0]
            if level > self._max_level:
                self._entry, self._max_level = node, level

    def remove(self, sub_id: str) -> None:
        with self._lock:
            node = self._node.pop(sub_id, None)
            if node is None:
                raise StateError(f"subscription {sub_id!r} is not indexed")
            self._alive_mask[node] = False
            self._min_threshold = None

    # -- reads ------------------------------------------------------------

    def _floor(self) -> float:
        if self._min_threshold is None:
            live = list(self._node.values())
            self._min_threshold = float(self._store.thresholds[live].min()) if live else 1.0
        return self._min_threshold

    def _sync_base_layer(self) -> None:
        n = len(self._store.ids)
        width = self._max_links(0)
        if self._adj0.shape[0] < n:
            grown = np.full((max(n, 2 * self._adj0.shape[0]), width), -1, dtype=np.int64)
            grown[: self._adj0.shape[0]] = self._adj0
            self._adj0 = grown
        for node in self._dirty:
            links = self._links[node][0]
            self._adj0[node, :] = -1
            self._adj0[node, : len(links)] = links
        self._dirty.clear()

    def _range_search(self, q: np.ndarray, entry: int, entry_sim: float, ef: int, floor: float) -> tuple[np.ndarray, np.ndarray]:
        # wave-parallel beam search: every candidate that still beats the
        # beam's worst (or clears the floor) is expanded in one batch
        n = len(self._store.ids)
        visited = np.zeros(n, dtype=bool)
        visited[entry] = True
        pool_ids = np.array([entry], dtype=np.int64)
        pool_sims = np.array([entry_sim])
        beam = np.array([entry_sim])
        hit_ids = [pool_ids[pool_sims >= floor]]
        hit_sims = [pool_sims[pool_sims >= floor]]
        while pool_ids.size:
            worst = beam.min() if beam.size >= ef else -np.inf
            pick = (pool_sims >= worst) | (pool_sims >= floor)
            if not pick.any():
                break
            expand = pool_ids[pick]
            pool_ids, pool_sims = pool_ids[~pick], pool_sims[~pick]
            nbrs = self._adj0[expand].ravel()
            nbrs = nbrs[nbrs >= 0]
            nbrs = np.unique(nbrs[~visited[nbrs]])
            if not nbrs.size:
                continue
            visited[nbrs] = True
            sims = self._store.vecs[nbrs] @ q
            in_range = sims >= floor
            hit_ids.append(nbrs[in_range])
            hit_sims.append(sims[in_range])
            keep = in_range | (sims > worst)
            pool_ids = np.concatenate([pool_ids, nbrs[keep]])
            pool_sims = np.concatenate([pool_sims, sims[keep]])
            beam = np.concatenate([beam, sims])
            if beam.size > ef:
                beam = np.partition(beam, beam.size - ef)[beam.size - ef:]
        return np.concatenate(hit_ids), np.concatenate(hit_sims)

    def match(self, query, ef: int | None = None) -> list[MatchCandidate]:
        q = as_embedding(query, self.dim)
        with self._lock:
            if not self._node:
                return []
            if self._dirty:
                self._sync_base_layer()
            ef = max(ef or self.params.ef_search, 1)
            ep = self._entry
            ep_sim = float(self._store.vecs[ep] @ q)
            for layer in range(self._max_level, 0, -1):
                ep, ep_sim = self._greedy(q, ep, ep_sim, layer)
            floor = self._floor() - _PREFILTER_SLACK
            ids, sims = self._range_search(q, ep, ep_sim, ef, floor)
            alive = self._alive_mask[ids]
            return _collect(self._store, ids[alive], sims[alive])


def hnsw_match(index: HnswIndex, query) -> list[MatchCandidate]:
    return index.match(query)


# -- snapshots ---------------------------------------------------------------

_MAGIC = b"GSUBIDX1"
_HEADER = struct.Struct("<IIIIqI")


def save_snapshot(index: HnswIndex | ExactIndex, path: str | Path) -> None:
    """Write the live entries of ``index`` (a cache, rebuildable from the log)."""
    params = getattr(index, "params", HnswParams())
    entries = list(index.entries())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(index.dim, params.M, params.ef_construction, params.ef_search, params.seed, len(entries)))
        for sub_id, vec, threshold in entries:
            raw = sub_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<d", threshold))
            fh.write(vec.astype("<f8").tobytes())


def load_snapshot(path: str | Path) -> HnswIndex:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValidationError("not an index snapshot")
    off = len(_MAGIC)
    dim, m, efc, efs, seed, count = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    index = HnswIndex(dim, HnswParams(m, efc, efs, seed))
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        sub_id = data[off:off + n].decode("utf-8")
        off += n
        (threshold,) = struct.unpack_from("<d", data, off)
        off += 8
        vec = np.frombuffer(data, dtype="<f8", count=dim, offset=off).astype(np.float64)
        off += 8 * dim
        index.insert(sub_id, vec, threshold)
    if off != len(data):
        raise ValidationError("trailing bytes in index snapshot")
    return index
