"""Interaction / knowledge-graph loading and the immutable adjacency index.

File formats follow the common KG-recommendation dataset layout:

* CF files (``train.txt``, ``test.txt``): one user per line, whitespace
  separated integers, the first token is the user id, the rest are item ids.
* KG file (``kg_final.txt``): one ``head relation tail`` triplet per line,
  canonical relations only.

Users and entities live in separate id spaces. Item ids are a prefix of the
entity id space.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Malformed input or inconsistent graph data."""


class ParseError(GraphError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True)
class InteractionSet:
    num_users: int
    num_items: int
    positives: tuple[tuple[int, ...], ...]
    # users whose line carried no items, and users seen on more than one line
    empty_users: frozenset[int] = frozenset()
    merged_users: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.positives) != self.num_users:
            raise GraphError("positives must have one entry per user")
        for u, items in enumerate(self.positives):
            if items and (items[0] < 0 or items[-1] >= self.num_items):
                raise GraphError(f"user {u} has item id outside [0, {self.num_items})")

    @classmethod
    def from_lists(cls, lists, num_items: int | None = None, num_users: int | None = None) -> InteractionSet:
        positives = tuple(tuple(sorted(set(int(i) for i in items))) for items in lists)
        if num_users is not None and num_users > len(positives):
            positives = positives + ((),) * (num_users - len(positives))
        if num_items is None:
            num_items = 1 + max((items[-1] for items in positives if items), default=-1)
        return cls(len(positives), num_items, positives)

    @property
    def num_interactions(self) -> int:
        return sum(len(p) for p in self.positives)

    def pairs(self) -> np.ndarray:
        """All (user, item) pairs as an (n, 2) int64 array, user-major order."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), [len(p) for p in self.positives])
        items = np.fromiter((i for p in self.positives for i in p), dtype=np.int64, count=len(users))
        return np.stack([users, items], axis=1)

    def positive_sets(self) -> list[frozenset[int]]:
        return [frozenset(p) for p in self.positives]


@dataclass(frozen=True)
class TripleSet:
    num_entities: int
    num_relations: int
    triples: np.ndarray  # (n, 3) int64, rows (head, relation, tail), sorted, unique
    has_inverse: bool = False
    num_canonical_relations: int | None = None

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        t.setflags(write=False)
        object.__setattr__(self, "triples", t)
        if self.num_canonical_relations is None:
            object.__setattr__(self, "num_canonical_relations", self.num_relations)
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= self.num_entities:
                raise GraphError("triple references entity outside [0, num_entities)")
            if t[:, 1].min() < 0 or t[:, 1].max() >= self.num_relations:
                raise GraphError("triple references relation outside [0, num_relations)")

    @classmethod
    def from_triples(cls, triples, num_entities: int | None = None, num_relations: int | None = None) -> TripleSet:
        arr = _unique_rows(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
        if num_entities is None:
            num_entities = int(arr[:, [0, 2]].max()) + 1 if len(arr) else 0
        if num_relations is None:
            num_relations = int(arr[:, 1].max()) + 1 if len(arr) else 0
        return cls(num_entities, num_relations, arr)

    def __len__(self):
        return len(self.triples)


def _unique_rows(arr: np.ndarray) -> np.ndarray:
    if len(arr) == 0:
        return arr.reshape(0, 3)
    return np.unique(arr, axis=0)


def _parse_ints(path, lineno, line):
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        bad = next(tok for tok in line.split() if not tok.lstrip("-").isdigit())
        raise ParseError(path, lineno, f"non-integer token {bad!r}") from None


def load_cf(path, num_users: int | None = None, num_items: int | None = None) -> InteractionSet:
    """Parse a CF file. Duplicate user lines are merged and recorded in ``merged_users``."""
    path = Path(path)
    per_user: dict[int, set[int]] = {}
    empty, merged = set(), set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            ids = _parse_ints(path, lineno, line)
            u, items = ids[0], ids[1:]
            if u < 0 or any(i < 0 for i in items):
                raise ParseError(path, lineno, "negative id")
            if u in per_user:
                merged.add(u)
                logger.warning("%s:%d: duplicate line for user %d, merging", path, lineno, u)
            per_user.setdefault(u, set()).update(items)
    n_users = max(per_user, default=-1) + 1
    if num_users is not None:
        if num_users < n_users:
            raise GraphError(f"num_users override {num_users} < observed {n_users}")
        n_users = num_users
    max_item = max((max(s) for s in per_user.values() if s), default=-1)
    n_items = max_item + 1 if num_items is None else num_items
    if n_items <= max_item:
        raise GraphError(f"num_items override {n_items} <= observed item id {max_item}")
    for u, s in per_user.items():
        if not s:
            empty.add(u)
    positives = tuple(tuple(sorted(per_user.get(u, ()))) for u in range(n_users))
    return InteractionSet(n_users, n_items, positives, frozenset(empty), frozenset(merged))


def load_kg(path) -> TripleSet:
    """Parse canonical ``h r t`` triplets; duplicates are stored once."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            ids = _parse_ints(path, lineno, line)
            if len(ids) != 3:
                raise ParseError(path, lineno, f"expected 3 integers, got {len(ids)}")
            if min(ids) < 0:
                raise ParseError(path, lineno, "negative id")
            rows.append(ids)
    kg = TripleSet.from_triples(rows)
    used = np.unique(kg.triples[:, 1]) if len(kg) else np.array([], dtype=np.int64)
    if len(used) != kg.num_relations:
        logger.warning("%s: relation ids are not contiguous (%d used of %d)", path, len(used), kg.num_relations)
    return kg


def add_inverse_relations(kg: TripleSet) -> TripleSet:
    """Append (t, r + R, h) for every canonical (h, r, t); doubles the relation count."""
    if kg.has_inverse:
        raise GraphError("inverse relations already added (relation count already doubled)")
    R = kg.num_relations
    t = kg.triples
    inverse = np.stack([t[:, 2], t[:, 1] + R, t[:, 0]], axis=1)
    both = _unique_rows(np.concatenate([t, inverse]))
    return TripleSet(kg.num_entities, 2 * R, both, has_inverse=True, num_canonical_relations=R)


class GraphIndex:
    """Immutable CSR adjacency for the intent graph (user side) and the KG.

    ``entity_adj[v]`` lists ``(relation, neighbor)`` pairs for every triple with
    head ``v``, sorted by neighbor id then relation id.
    """

    def __init__(self, num_users, num_items, num_entities, num_relations,
                 user_ptr, user_items, ent_ptr, ent_rel, ent_nbr):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.user_ptr = _frozen(user_ptr)
        self.user_items = _frozen(user_items)
        self.ent_ptr = _frozen(ent_ptr)
        self.ent_rel = _frozen(ent_rel)
        self.ent_nbr = _frozen(ent_nbr)

    # ---- adjacency views ----
    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    @property
    def entity_degrees(self) -> np.ndarray:
        return np.diff(self.ent_ptr)

    def user_neighbors(self, u: int) -> list[int]:
        return self.user_items[self.user_ptr[u]:self.user_ptr[u + 1]].tolist()

    def entity_neighbors(self, v: int) -> list[tuple[int, int]]:
        lo, hi = self.ent_ptr[v], self.ent_ptr[v + 1]
        return list(zip(self.ent_rel[lo:hi].tolist(), self.ent_nbr[lo:hi].tolist()))

    @property
    def user_adj(self) -> list[list[int]]:
        return [self.user_neighbors(u) for u in range(self.num_users)]

    @property
    def entity_adj(self) -> list[list[tuple[int, int]]]:
        return [self.entity_neighbors(v) for v in range(self.num_entities)]

    @cached_property
    def kg_heads(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(self.num_entities, dtype=np.int64), self.entity_degrees))

    @cached_property
    def user_rows(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees))

    @cached_property
    def user_mean(self) -> SegmentMean:
        """Averages item messages into users (one row per interaction)."""
        return SegmentMean(self.user_rows, self.num_users)

    @cached_property
    def entity_mean(self) -> SegmentMean:
        """Averages KG messages into head entities (one row per triple)."""
        return SegmentMean(self.kg_heads, self.num_entities)

    def __eq__(self, other):
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (self.counts() == other.counts()
                and all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays())))

    __hash__ = None

    def counts(self) -> tuple[int, int, int, int]:
        return (self.num_users, self.num_items, self.num_entities, self.num_relations)

    def _arrays(self):
        return (self.user_ptr, self.user_items, self.ent_ptr, self.ent_rel, self.ent_nbr)

    def __repr__(self):
        return (f"GraphIndex(users={self.num_users}, items={self.num_items}, entities={self.num_entities}, "
                f"relations={self.num_relations}, interactions={len(self.user_items)}, triples={len(self.ent_nbr)})")

    # ---- serialization ----
    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<I6Q", INDEX_VERSION, *self.counts(), len(self.user_items), len(self.ent_nbr)))
            for arr in self._arrays():
                fh.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())

    @classmethod
    def load(cls, path) -> GraphIndex:
        data = Path(path).read_bytes()
        if data[:8] != INDEX_MAGIC:
            raise GraphError(f"{path}: not a graph index file")
        header = struct.calcsize("<I6Q")
        version, nu, ni, ne, nr, n_ui, n_kg = struct.unpack_from("<I6Q", data, 8)
        if version != INDEX_VERSION:
            raise GraphError(f"{path}: unsupported index version {version}")
        offset = 8 + header
        arrays = []
        for n in (nu + 1, n_ui, ne + 1, n_kg, n_kg):
            arrays.append(np.frombuffer(data, dtype="<i8", count=n, offset=offset).astype(np.int64))
            offset += 8 * n
        if offset != len(data):
            raise GraphError(f"{path}: trailing bytes in index file")
        return cls(nu, ni, ne, nr, *arrays)


INDEX_MAGIC = b"KGINIDX\x00"
INDEX_VERSION = 1


def _frozen(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


class SegmentMean:
    """Linear map averaging message rows into segments: out[s] = mean(x[segment_ids == s]).

    Empty segments produce zero rows. Held as a CSR matrix so forward and
    backward are sparse products with a fixed summation order.
    """

    def __init__(self, segment_ids, num_segments: int):
        segment_ids = np.asarray(segment_ids, dtype=np.int64)
        counts = np.bincount(segment_ids, minlength=num_segments).astype(np.float64)
        self.counts = counts
        self.num_segments = num_segments
        self.num_messages = len(segment_ids)
        weights = 1.0 / counts[segment_ids] if len(segment_ids) else np.zeros(0)
        self.matrix = sp.csr_matrix(
            (weights, (segment_ids, np.arange(len(segment_ids)))),
            shape=(num_segments, len(segment_ids)),
        )
        self.matrix_t = self.matrix.T.tocsr()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ x)

    def transpose(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix_t @ g)

    @property
    def empty_segments(self) -> np.ndarray:
        return np.flatnonzero(self.counts == 0)


def build_index(cf: InteractionSet, kg: TripleSet) -> GraphIndex:
    if not kg.has_inverse:
        raise GraphError("build_index expects a KG with inverse relations applied")
    if cf.num_items > kg.num_entities:
        raise GraphError(
            f"item id space ({cf.num_items}) exceeds entity id space ({kg.num_entities}); "
            "items must be a prefix of entities")

    user_ptr = np.zeros(cf.num_users + 1, dtype=np.int64)
    user_ptr[1:] = np.cumsum([len(p) for p in cf.positives])
    user_items = np.fromiter((i for p in cf.positives for i in p), dtype=np.int64, count=int(user_ptr[-1]))

    t = kg.triples
    # sort by head, then neighbor id, then relation id
    order = np.lexsort((t[:, 1], t[:, 2], t[:, 0])) if len(t) else np.zeros(0, dtype=np.int64)
    t = t[order]
    ent_ptr = np.zeros(kg.num_entities + 1, dtype=np.int64)
    ent_ptr[1:] = np.cumsum(np.bincount(t[:, 0], minlength=kg.num_entities))
    return GraphIndex(cf.num_users, cf.num_items, kg.num_entities, kg.num_relations,
                      user_ptr, user_items, ent_ptr, t[:, 1], t[:, 2])


def k_core_filter(cf: InteractionSet, kg: TripleSet, k: int = 10):
    """Iterative k-core filtering with id remapping.

    Users and items with fewer than ``k`` interactions are dropped until
    stable; non-item entities in fewer than ``k`` canonical triples are
    dropped. Ids are compacted with items kept as the entity prefix.
    Returns ``(positives_by_new_user, TripleSet)``.
    """
    pairs = cf.pairs()
    while True:
        ucount = np.bincount(pairs[:, 0], minlength=cf.num_users)
        icount = np.bincount(pairs[:, 1], minlength=cf.num_items)
        keep = (ucount[pairs[:, 0]] >= k) & (icount[pairs[:, 1]] >= k)
        if keep.all():
            break
        pairs = pairs[keep]
    items = np.unique(pairs[:, 1])
    users = np.unique(pairs[:, 0])
    item_map = {int(i): n for n, i in enumerate(items)}
    user_map = {int(u): n for n, u in enumerate(users)}

    t = kg.triples
    ent_count = np.bincount(np.concatenate([t[:, 0], t[:, 2]]), minlength=kg.num_entities)
    is_item = np.zeros(kg.num_entities, dtype=bool)
    is_item[: cf.num_items] = True
    kept_item = np.zeros(kg.num_entities, dtype=bool)
    kept_item[items] = True
    keep_ent = kept_item | (~is_item & (ent_count >= k))
    t = t[keep_ent[t[:, 0]] & keep_ent[t[:, 2]]]
    others = [v for v in np.flatnonzero(keep_ent) if not is_item[v]]
    ent_map = dict(item_map)
    for n, v in enumerate(others):
        ent_map[int(v)] = len(items) + n

    lists = [[] for _ in users]
    for u, i in pairs:
        lists[user_map[int(u)]].append(item_map[int(i)])
    new_triples = [(ent_map[int(h)], int(r), ent_map[int(tt)]) for h, r, tt in t]
    new_kg = TripleSet.from_triples(new_triples, num_entities=len(items) + len(others),
                                    num_relations=kg.num_relations)
    return lists, new_kg


def write_cf(path, lists) -> None:
    with open(path, "w") as fh:
        for u, items in enumerate(lists):
            fh.write(" ".join(str(x) for x in [u, *items]) + "\n")


def write_kg(path, kg: TripleSet) -> None:
    with open(path, "w") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{h} {r} {t}\n")


@dataclass
class Dataset:
    """Train/test interactions plus the inverse-augmented KG and its index."""

    train: InteractionSet
    test: InteractionSet
    kg: TripleSet
    index: GraphIndex = field(init=False)

    def __post_init__(self):
        self.index = build_index(self.train, self.kg)


def load_dataset(data_dir) -> Dataset:
    """Load ``train.txt``, ``test.txt`` and ``kg_final.txt`` from a directory."""
    data_dir = Path(data_dir)
    train = load_cf(data_dir / "train.txt")
    test = load_cf(data_dir / "test.txt")
    kg = load_kg(data_dir / "kg_final.txt")
    num_users = max(train.num_users, test.num_users)
    num_items = max(train.num_items, test.num_items)
    num_entities = max(kg.num_entities, num_items)
    train = _resize(train, num_users, num_items)
    test = _resize(test, num_users, num_items)
    kg = TripleSet(num_entities, kg.num_relations, kg.triples)
    return Dataset(train, test, add_inverse_relations(kg))


def _resize(cf: InteractionSet, num_users: int, num_items: int) -> InteractionSet:
    positives = cf.positives + ((),) * (num_users - cf.num_users)
    return InteractionSet(num_users, num_items, positives, cf.empty_users, cf.merged_users)
