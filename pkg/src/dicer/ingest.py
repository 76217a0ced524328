"""Reading interaction and trust files, splitting, and negative sampling."""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

_SEP = re.compile(r"[\s,]+")


@dataclass
class InteractionSet:
    """Deduplicated implicit interactions over dense 0-based ids.

    ``user_ids[k]`` / ``item_ids[k]`` hold the raw id behind dense index ``k``.
    """

    users: np.ndarray
    items: np.ndarray
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.users)

    def pairs(self):
        return np.stack([self.users, self.items], axis=1)


@dataclass
class SocialEdges:
    """Undirected user-user edges, stored in both directions, dense ids."""

    src: np.ndarray
    dst: np.ndarray
    self_loops_dropped: int = 0
    unknown_dropped: int = 0

    def __len__(self):
        return len(self.src)


@dataclass
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    num_users: int
    num_items: int
    seed: int = 0

    def user_items(self, part):
        """Map user -> set of items for one split part (or a tuple of parts)."""
        parts = (part,) if isinstance(part, str) else part
        out = {}
        for name in parts:
            for u, i in getattr(self, name):
                out.setdefault(int(u), set()).add(int(i))
        return out


@dataclass
class LabeledBatch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.users)


def _lines(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, _SEP.split(line)


def _int_token(tok, path, lineno):
    try:
        return int(tok)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed id token {tok!r}") from None


def parse_interactions(path) -> InteractionSet:
    """Read ``user item [rating ...]`` lines into an :class:`InteractionSet`.

    Ids must be integers. Lines with a non-positive rating are dropped; any
    positive rating counts as one implicit interaction. Dense indices follow
    first appearance in the file.
    """
    user_map, item_map = {}, {}
    seen = set()
    users, items = [], []
    any_line = False
    for lineno, toks in _lines(path):
        any_line = True
        if len(toks) < 2:
            raise DataError(f"{path}:{lineno}: expected 'user item [rating]', got {' '.join(toks)!r}")
        u = _int_token(toks[0], path, lineno)
        i = _int_token(toks[1], path, lineno)
        if len(toks) > 2:
            try:
                rating = float(toks[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed rating {toks[2]!r}") from None
            if rating <= 0:
                continue
        du = user_map.setdefault(u, len(user_map))
        di = item_map.setdefault(i, len(item_map))
        if (du, di) not in seen:
            seen.add((du, di))
            users.append(du)
            items.append(di)
    if not any_line:
        raise DataError(f"{path}: no interactions")
    return InteractionSet(np.array(users), np.array(items), list(user_map), list(item_map))


def parse_social(path, interactions: InteractionSet) -> SocialEdges:
    """Read ``user user`` lines, symmetrize, and map onto dense user ids.

    Self-loops and edges touching users absent from ``interactions`` are
    dropped and counted. Extra columns (e.g. trust values) are ignored.
    """
    user_map = {raw: k for k, raw in enumerate(interactions.user_ids)}
    edges = set()
    loops = unknown = 0
    for lineno, toks in _lines(path):
        if len(toks) < 2:
            raise DataError(f"{path}:{lineno}: expected 'user user', got {' '.join(toks)!r}")
        a = _int_token(toks[0], path, lineno)
        b = _int_token(toks[1], path, lineno)
        if a == b:
            loops += 1
            continue
        if a not in user_map or b not in user_map:
            unknown += 1
            continue
        da, db = user_map[a], user_map[b]
        edges.add((da, db))
        edges.add((db, da))
    if loops:
        logger.warning("%s: dropped %d self-loop(s)", path, loops)
    if unknown:
        logger.warning("%s: dropped %d edge(s) with users absent from the ratings", path, unknown)
    ordered = sorted(edges)
    src = np.array([e[0] for e in ordered], dtype=np.int64)
    dst = np.array([e[1] for e in ordered], dtype=np.int64)
    return SocialEdges(src, dst, loops, unknown)


def split_dataset(data: InteractionSet, seed: int) -> DatasetSplit:
    """Uniform random 80/10/10 split by interaction."""
    n = len(data)
    if n < 10:
        raise DataError(f"need at least 10 interactions to split, got {n}")
    pairs = data.pairs()
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return DatasetSplit(
        train=pairs[perm[:n_train]],
        validation=pairs[perm[n_train:n_train + n_val]],
        test=pairs[perm[n_train + n_val:]],
        num_users=data.num_users,
        num_items=data.num_items,
        seed=seed,
    )


def epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))


def draw_negatives(train, num_users, num_items, ratio, rng, exclude=None):
    """Draw ``ratio`` non-interacted items per training positive.

    Returns ``(users, items)`` arrays. Items are uniform over the complement
    of the user's training items (plus ``exclude`` pairs, if given).
    Degenerate users whose history covers every item are skipped.
    """
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    block = train if exclude is None else np.concatenate([train, np.asarray(exclude).reshape(-1, 2)])
    order = np.lexsort((block[:, 1], block[:, 0]))
    codes = np.unique(block[order, 0] * num_items + block[order, 1])
    seen_users = codes // num_items
    seen_items = codes % num_items
    bounds = np.searchsorted(seen_users, np.arange(num_users + 1))
    pos_count = np.bincount(train[:, 0], minlength=num_users)

    out_u, out_i = [], []
    skipped = 0
    for u in np.flatnonzero(pos_count):
        hist = seen_items[bounds[u]:bounds[u + 1]]
        free = num_items - len(hist)
        if free <= 0:
            skipped += 1
            continue
        k = int(pos_count[u]) * ratio
        r = rng.integers(0, free, size=k)
        # r-th item not in the sorted history
        shift = np.searchsorted(hist - np.arange(len(hist)), r, side="right")
        out_u.append(np.full(k, u, dtype=np.int64))
        out_i.append(r + shift)
    if skipped:
        logger.warning("negative sampling: skipped %d user(s) with no unobserved items", skipped)
    if not out_u:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_u), np.concatenate(out_i)


def sample_negatives(train, num_users, num_items, ratio=8, epoch_seed=0, batch_size=4096):
    """One epoch of shuffled labeled batches: every positive plus ``ratio`` negatives each.

    ``epoch_seed`` is either an int or a ``(seed, epoch)`` pair.
    """
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    rng = epoch_rng(*epoch_seed) if isinstance(epoch_seed, tuple) else np.random.default_rng(epoch_seed)
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    neg_u, neg_i = draw_negatives(train, num_users, num_items, ratio, rng)
    users = np.concatenate([train[:, 0], neg_u])
    items = np.concatenate([train[:, 1], neg_i])
    labels = np.concatenate([np.ones(len(train)), np.zeros(len(neg_u))])
    perm = rng.permutation(len(users))
    users, items, labels = users[perm], items[perm], labels[perm]
    return [
        LabeledBatch(users[s:s + batch_size], items[s:s + batch_size], labels[s:s + batch_size])
        for s in range(0, len(users), batch_size)
    ]


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in np.asarray(pairs).reshape(-1, 2):
            fh.write(f"{u} {i}\n")


def read_pairs(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    text = path.read_text()
    if not text.strip():
        return np.zeros((0, 2), dtype=np.int64)
    return np.loadtxt(path, dtype=np.int64, ndmin=2)


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_keyvalue(path, values):
    """Plain-text manifest: one ``key = value`` line per entry, sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]}\n")


def read_keyvalue(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def save_split(directory, split: DatasetSplit, data: InteractionSet | None = None, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part in ("train", "validation", "test"):
        write_pairs(directory / f"{part}.txt", getattr(split, part))
    manifest = {
        "num_users": split.num_users,
        "num_items": split.num_items,
        "seed": split.seed,
        "train": len(split.train),
        "validation": len(split.validation),
        "test": len(split.test),
    }
    if data is not None:
        for kind, ids in (("user", data.user_ids), ("item", data.item_ids)):
            with open(directory / f"{kind}_ids.txt", "w", encoding="utf-8") as fh:
                for dense, raw in enumerate(ids):
                    fh.write(f"{dense} {raw}\n")
            manifest[f"{kind}_id_map"] = f"{kind}_ids.txt"
    for part in ("train", "validation", "test"):
        manifest[f"sha256_{part}"] = file_digest(directory / f"{part}.txt")
    manifest.update(extra or {})
    write_keyvalue(directory / "split_manifest.txt", manifest)


def load_split(directory) -> DatasetSplit:
    directory = Path(directory)
    meta = read_keyvalue(directory / "split_manifest.txt")
    parts = {p: read_pairs(directory / f"{p}.txt") for p in ("train", "validation", "test")}
    return DatasetSplit(
        num_users=int(meta["num_users"]), num_items=int(meta["num_items"]), seed=int(meta["seed"]), **parts
    )


def export_interactions(path, data: InteractionSet):
    """Write interactions back out with their raw ids, in stored order."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in zip(data.users, data.items):
            fh.write(f"{data.user_ids[u]} {data.item_ids[i]}\n")
