"""Synthetic datasets with known structure, for tests and desk-scale runs."""
from __future__ import annotations

import numpy as np

from .ingest import DatasetSplit, InteractionSet, SocialEdges


def make_planted_blocks(n_users=200, n_items=200, n_blocks=4, p_in=0.3, p_out=0.01,
                        p_social=0.05, seed=0):
    """Community-structured interactions and friendships.

    Users and items are split into ``n_blocks`` contiguous equal blocks. A
    user interacts with an item of its own block with probability ``p_in``
    and with any other item with probability ``p_out``; two users of the same
    block are friends with probability ``p_social``.

    Returns ``(interactions, social, user_block, item_block)``.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) * n_blocks // n_users
    item_block = np.arange(n_items) * n_blocks // n_items
    same = user_block[:, None] == item_block[None, :]
    prob = np.where(same, p_in, p_out)
    u, i = np.nonzero(rng.random((n_users, n_items)) < prob)
    data = InteractionSet(u, i, list(range(n_users)), list(range(n_items)))

    friend = rng.random((n_users, n_users)) < p_social
    friend = np.triu(friend & (user_block[:, None] == user_block[None, :]), k=1)
    a, b = np.nonzero(friend)
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    order = np.lexsort((dst, src))
    return data, SocialEdges(src[order], dst[order]), user_block, item_block


def make_micro_instance():
    """Five users, six items: a hand-sized instance with every structure non-empty.

    Returns ``(split, social)``; only the train part of ``split`` is populated
    beyond a token validation/test pair.
    """
    train = np.array([
        (0, 0), (0, 1), (0, 2),
        (1, 0), (1, 1), (1, 3),
        (2, 2), (2, 3), (2, 4),
        (3, 3), (3, 4), (3, 5),
        (4, 0), (4, 4), (4, 5),
    ])
    split = DatasetSplit(
        train=train,
        validation=np.array([(0, 3)]),
        test=np.array([(1, 5)]),
        num_users=5,
        num_items=6,
        seed=0,
    )
    pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]
    src = np.array([a for a, b in pairs] + [b for a, b in pairs])
    dst = np.array([b for a, b in pairs] + [a for a, b in pairs])
    order = np.lexsort((dst, src))
    return split, SocialEdges(src[order], dst[order])


def micro_batch():
    """Labeled pairs for the micro instance: all train positives plus fixed negatives."""
    split, _ = make_micro_instance()
    pos = split.train
    neg = np.array([(0, 3), (0, 5), (1, 2), (1, 4), (2, 0), (2, 5), (3, 0), (3, 1), (4, 2), (4, 3)])
    users = np.concatenate([pos[:, 0], neg[:, 0]])
    items = np.concatenate([pos[:, 1], neg[:, 1]])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return users, items, labels
