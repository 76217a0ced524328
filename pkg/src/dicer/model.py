"""Forward computation: relation-aware propagation, dual-side modulation, three heads.

Row-vector convention throughout: node representations are rows, weight
matrices right-multiply (``rep @ W``). Every function works on
:class:`~dicer.autodiff.Tensor` values so that the same code path serves
training (inside a tape) and inference (outside one).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError
from .graphs import AdjacencyGraph, GraphBundle

STACKS = ("item", "social", "user")
HEADS = ("O", "U", "I")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    layers: int = 3
    lambda1: float = 1 / 3
    lambda2: float = 1 / 3
    lambda3: float = 1 / 3
    leaky_slope: float = 0.2
    dropout_rate: float = 0.3
    eta: float = 0.1
    neighbor_cap: int = 30
    history_cap: int = 50
    use_user_interest: bool = True
    use_item_attraction: bool = True
    use_item_collab_context: bool = True
    use_user_collab_context: bool = True
    use_social_context: bool = True
    modulation_kind: str = "maxpool"
    use_gnn: bool = True
    self_first_term: bool = False
    normalize: bool = False
    mlp_hidden: tuple = field(default=None)

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if min(lams) < 0 or abs(sum(lams) - 1.0) > 1e-9:
            raise ConfigError(f"lambdas must be nonnegative and sum to 1, got {lams}")
        if self.modulation_kind not in ("maxpool", "attention"):
            raise ConfigError(f"modulation_kind must be 'maxpool' or 'attention', got {self.modulation_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden", (self.embed_dim, max(1, self.embed_dim // 2)))
        else:
            object.__setattr__(self, "mlp_hidden", tuple(int(w) for w in self.mlp_hidden))

    @property
    def rep_width(self):
        """Width of the graph-enhanced representations."""
        return (self.layers + 1) * self.embed_dim if self.use_gnn else self.embed_dim

    def active_heads(self):
        return [
            h for h, on in zip(HEADS, (True, self.use_user_interest, self.use_item_attraction)) if on
        ]

    def head_weights(self):
        """Head weights, renormalized over the heads that are switched on."""
        raw = dict(zip(HEADS, (self.lambda1, self.lambda2, self.lambda3)))
        active = self.active_heads()
        s = sum(raw[h] for h in active)
        if s <= 0:
            raise ConfigError("all active heads have zero weight")
        return {h: raw[h] / s for h in active}

    def active_stacks(self):
        if not self.use_gnn:
            return []
        flags = (self.use_item_collab_context, self.use_social_context, self.use_user_collab_context)
        return [s for s, on in zip(STACKS, flags) if on]

    def to_dict(self):
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)


VARIANTS = {
    "full": {},
    "wo-ui": {"use_user_interest": False},
    "wo-ia": {"use_item_attraction": False},
    "minus-alpha": {"use_item_collab_context": False},
    "minus-beta": {"use_user_collab_context": False},
    "minus-mu": {"use_social_context": False},
    "minus-all": {"use_item_collab_context": False, "use_user_collab_context": False,
                  "use_social_context": False},
    "attn": {"modulation_kind": "attention"},
    "embed": {"use_gnn": False},
    "layers-1": {"layers": 1},
    "layers-2": {"layers": 2},
    "layers-3": {"layers": 3},
}

OUT_OF_SCOPE_VARIANTS = {"gat"}


def apply_variant(config: ModelConfig, variant: str) -> ModelConfig:
    """Return ``config`` adjusted for a named ablation variant.

    Dropping a head zeroes its weight and renormalizes the others.
    """
    name = variant.lower()
    if name.startswith("dicer-"):
        name = name[len("dicer-"):]
    if name in OUT_OF_SCOPE_VARIANTS:
        raise ConfigError(
            f"variant {variant!r} is out of scope: the GAT replacement for the propagation "
            "module is listed under Non-goals and not implemented"
        )
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    cfg = replace(config, **VARIANTS[name])
    lams = {"O": cfg.lambda1, "U": cfg.lambda2, "I": cfg.lambda3}
    if not cfg.use_user_interest:
        lams["U"] = 0.0
    if not cfg.use_item_attraction:
        lams["I"] = 0.0
    s = sum(lams.values())
    if s <= 0:
        raise ConfigError(f"variant {variant!r} leaves no head with positive weight")
    return replace(cfg, lambda1=lams["O"] / s, lambda2=lams["U"] / s, lambda3=lams["I"] / s)


# ---------------------------------------------------------------- parameters


def param_shapes(config: ModelConfig, num_users, num_items):
    d = config.embed_dim
    shapes = {"P": (num_users, d), "Q": (num_items, d)}
    for layer in range(1, config.layers + 1):
        for stack in config.active_stacks():
            shapes[f"rgnn.{stack}.{layer}.W1"] = (d, d)
            shapes[f"rgnn.{stack}.{layer}.W2"] = (d, d)
    width = config.rep_width
    for head in config.active_heads():
        dims = [2 * width, *config.mlp_hidden, 1]
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"head.{head}.{k}.W"] = (a, b)
            shapes[f"head.{head}.{k}.b"] = (1, b)
    return shapes


def init_params(config: ModelConfig, num_users, num_items, seed=0):
    """Xavier-uniform weights and embeddings, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config, num_users, num_items).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# --------------------------------------------------------------- propagation


@dataclass
class EnhancedReps:
    h_star: Tensor
    z_star: Tensor
    h_layers: list
    z_layers: list


def rgnn_layer(reps, graph: AdjacencyGraph, W1, W2, slope=0.2, self_first_term=False, normalize=False):
    """One relation-aware propagation step over ``graph``.

    For node u with neighbors N(u):
    ``out_u = LeakyReLU(sum_v (rep_v @ W1 + (rep_u * rep_v) @ W2))``.
    The self-interaction term factors as ``rep_u * sum_v rep_v``.
    With ``self_first_term`` the first term uses ``rep_u`` instead of ``rep_v``.
    """
    n = reps.shape[0]
    seg, members = graph.edges()
    weights = None
    if normalize and len(seg):
        deg = np.maximum(graph.degrees(), 1).astype(np.float64)
        weights = 1.0 / np.sqrt(deg[seg] * deg[members])
    agg = ad.segment_sum(ad.gather_rows(reps, members), seg, n, weights)
    if self_first_term:
        count = np.bincount(seg, weights=weights, minlength=n)[:, None] if len(seg) else np.zeros((n, 1))
        first = ad.matmul(ad.mul(reps, Tensor(count)), W1)
    else:
        first = ad.matmul(agg, W1)
    pre = ad.add(first, ad.matmul(ad.mul(reps, agg), W2))
    return ad.leaky_relu(pre, slope)


def propagate(params, graphs: GraphBundle, config: ModelConfig) -> EnhancedReps:
    P, Q = params["P"], params["Q"]
    if not config.use_gnn:
        return EnhancedReps(P, Q, [P], [Q])
    stacks = set(config.active_stacks())
    zero_u = Tensor(np.zeros(P.shape))
    zero_i = Tensor(np.zeros(Q.shape))
    kw = dict(slope=config.leaky_slope, self_first_term=config.self_first_term, normalize=config.normalize)

    def step(stack, reps, graph, layer, zero):
        if stack not in stacks:
            return zero
        return rgnn_layer(reps, graph, params[f"rgnn.{stack}.{layer}.W1"],
                          params[f"rgnn.{stack}.{layer}.W2"], **kw)

    h, z = P, Q
    hs, zs = [P], [Q]
    for layer in range(1, config.layers + 1):
        z = step("item", z, graphs.item_collab, layer, zero_i)
        h_social = step("social", h, graphs.social, layer, zero_u)
        h_collab = step("user", h, graphs.user_collab, layer, zero_u)
        h = ad.add(h_social, h_collab)
        hs.append(h)
        zs.append(z)
    if config.layers == 0:
        return EnhancedReps(P, Q, hs, zs)
    return EnhancedReps(ad.concat_last_dim(hs), ad.concat_last_dim(zs), hs, zs)


# ---------------------------------------------------------------- modulation


def expand_segments(graph: AdjacencyGraph, owners, exclude=None):
    """Flatten the neighbor lists of ``owners`` into ``(segment, member)`` arrays.

    Segment ``k`` holds ``graph.neighbors(owners[k])`` minus ``exclude[k]``.
    Segments come out in non-decreasing order.
    """
    owners = np.asarray(owners, dtype=np.int64)
    starts = graph.indptr[owners]
    counts = graph.indptr[owners + 1] - starts
    seg = np.repeat(np.arange(len(owners)), counts)
    offsets = np.cumsum(counts) - counts
    pos = np.arange(len(seg)) - np.repeat(offsets, counts) + np.repeat(starts, counts)
    members = graph.indices[pos]
    if exclude is not None:
        keep = members != np.asarray(exclude, dtype=np.int64)[seg]
        seg, members = seg[keep], members[keep]
    return seg, members


def _modulate(table, members, context, ctx_index, seg, num_segments, kind):
    """Modulate history rows ``table[members]`` by context rows ``context[ctx_index]``.

    ``maxpool``: per-dimension max of the element-wise products per segment.
    ``attention``: softmax over dot(context, row), then the weighted row sum.
    """
    if kind == "maxpool":
        return ad.gather_mul_segment_max(table, members, context, ctx_index, seg, num_segments)
    rows = ad.gather_rows(table, members)
    prod = ad.mul(rows, ad.gather_rows(context, ctx_index))
    weights = ad.segment_softmax(ad.sum_last_dim(prod), seg, num_segments)
    return ad.segment_sum(ad.mul(rows, weights), seg, num_segments)


def interest_modulation(context, history_reps, kind="maxpool"):
    """Per-dimension max of ``history_j * context`` over one history set.

    Single-instance form of the batched modulation; an empty history gives a
    zero vector. Returns a ``(1, width)`` tensor.
    """
    ctx = ad.as_tensor(np.asarray(context, dtype=np.float64).reshape(1, -1)
                       if not isinstance(context, Tensor) else context)
    hist = ad.as_tensor(history_reps)
    n = hist.shape[0]
    if n == 0:
        return Tensor(np.zeros((1, ctx.shape[-1])))
    zeros = np.zeros(n, dtype=np.int64)
    return _modulate(hist, np.arange(n), ctx, zeros, zeros, 1, kind)


def friend_attention(m_u, friend_interests):
    """Softmax-weighted friend interests added to the user's own interest.

    Returns ``(x, alpha)`` with ``x`` of shape ``(1, width)`` and ``alpha``
    of shape ``(num_friends, 1)``.
    """
    mu = ad.as_tensor(m_u) if isinstance(m_u, Tensor) else Tensor(np.asarray(m_u, dtype=np.float64).reshape(1, -1))
    mf = ad.as_tensor(friend_interests)
    n = mf.shape[0] if mf.data.ndim == 2 else 0
    if n == 0:
        return mu, Tensor(np.zeros((0, 1)))
    seg = np.zeros(n, dtype=np.int64)
    scores = ad.sum_last_dim(ad.mul(ad.gather_rows(mu, seg), mf))
    alpha = ad.segment_softmax(scores, seg, 1)
    x = ad.add(mu, ad.segment_sum(ad.mul(mf, alpha), seg, 1))
    return x, alpha


# -------------------------------------------------------------------- heads


def _mlp(params, head, inp, config, train, rng):
    h = inp
    n_layers = len(config.mlp_hidden) + 1
    for k in range(n_layers):
        h = ad.add(ad.matmul(h, params[f"head.{head}.{k}.W"]), params[f"head.{head}.{k}.b"])
        if k < n_layers - 1:
            h = ad.leaky_relu(h, config.leaky_slope)
            h = ad.dropout(h, config.dropout_rate, train, rng)
    return ad.sigmoid(h)


def score(h_star_u, z_star_i, x, y, params, config: ModelConfig, train=False, rng=None):
    """Three matching heads and their weighted sum. Returns ``(pred, heads)``.

    ``x`` / ``y`` may be ``None`` when the corresponding head is switched off.
    """
    heads = {"O": _mlp(params, "O", ad.concat_last_dim([h_star_u, z_star_i]), config, train, rng)}
    if config.use_user_interest:
        heads["U"] = _mlp(params, "U", ad.concat_last_dim([x, z_star_i]), config, train, rng)
    if config.use_item_attraction:
        heads["I"] = _mlp(params, "I", ad.concat_last_dim([y, h_star_u]), config, train, rng)
    pred = None
    for head, w in config.head_weights().items():
        term = ad.scale(heads[head], w)
        pred = term if pred is None else ad.add(pred, term)
    return pred, heads


# ------------------------------------------------------------------ forward


@dataclass
class ForwardResult:
    pred: Tensor
    heads: dict
    m_u: Tensor = None
    x: Tensor = None
    y: Tensor = None
    alpha: Tensor = None
    alpha_segments: np.ndarray = None


def forward_batch(users, items, reps: EnhancedReps, graphs: GraphBundle, params, config: ModelConfig,
                  train=False, rng=None) -> ForwardResult:
    """Predicted interaction probabilities for aligned ``(users[b], items[b])`` pairs.

    Histories come from ``graphs.history`` (train split, capped). The scored
    item is left out of the user's and each friend's history, and the user
    out of the item's history.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    B = len(users)
    kind = config.modulation_kind
    h_u = ad.gather_rows(reps.h_star, users)
    z_i = ad.gather_rows(reps.z_star, items)
    out = ForwardResult(pred=None, heads={})

    if config.use_user_interest:
        user_hist = graphs.history.items_of_user
        seg, members = expand_segments(user_hist, users, exclude=items)
        m_u = _modulate(reps.z_star, members, z_i, seg, seg, B, kind)
        fseg, friends = expand_segments(graphs.social, users)
        if len(friends):
            hseg, hmembers = expand_segments(user_hist, friends, exclude=items[fseg])
            m_f = _modulate(reps.z_star, hmembers, z_i, fseg[hseg], hseg, len(friends), kind)
            scores = ad.sum_last_dim(ad.mul(ad.gather_rows(m_u, fseg), m_f))
            alpha = ad.segment_softmax(scores, fseg, B)
            x = ad.add(m_u, ad.segment_sum(ad.mul(m_f, alpha), fseg, B))
            out.alpha, out.alpha_segments = alpha, fseg
        else:
            x = m_u
        out.m_u, out.x = m_u, x

    if config.use_item_attraction:
        seg, members = expand_segments(graphs.history.users_of_item, items, exclude=users)
        out.y = _modulate(reps.h_star, members, h_u, seg, seg, B, kind)

    h_in = ad.dropout(h_u, config.dropout_rate, train, rng)
    z_in = ad.dropout(z_i, config.dropout_rate, train, rng)
    out.pred, out.heads = score(h_in, z_in, out.x, out.y, params, config, train, rng)
    return out


def loss(predictions, labels):
    """Summed binary cross-entropy over the batch."""
    return ad.binary_cross_entropy(predictions, labels)


def predict_pairs(params, graphs, config, users, items, chunk=4096, reps=None):
    """Inference-mode probabilities for many pairs, in chunks. Returns a 1-D array."""
    if reps is None:
        reps = propagate(params, graphs, config)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty(len(users))
    for s in range(0, len(users), chunk):
        res = forward_batch(users[s:s + chunk], items[s:s + chunk], reps, graphs, params, config)
        out[s:s + chunk] = res.pred.data[:, 0]
    return out
