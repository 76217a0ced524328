"""Built-in verification: finite-difference check of the whole micro-model."""
from __future__ import annotations

from contextlib import contextmanager

from .autodiff import grad_check
from .autodiff import ops
from .datasets import make_micro_instance, micro_batch
from .exceptions import ConfigError
from .graphs import build_graphs
from .model import ModelConfig, forward_batch, init_params, loss, propagate

MICRO_CONFIG = ModelConfig(embed_dim=4, layers=2, dropout_rate=0.0)

# op name -> Function class whose backward a fault can corrupt
_FAULTABLE = {
    cls.name: cls
    for cls in vars(ops).values()
    if isinstance(cls, type) and issubclass(cls, ops.Function) and cls is not ops.Function
}


@contextmanager
def inject_fault(op_name, factor=1.5):
    """Scale the gradient an op returns by ``factor`` for the duration of the block.

    Test hook for negative controls; the original backward is restored on exit.
    """
    if op_name not in _FAULTABLE:
        raise ConfigError(f"unknown op {op_name!r} for fault injection; choose from {sorted(_FAULTABLE)}")
    cls = _FAULTABLE[op_name]
    original = cls.__dict__["backward"]

    def broken(ctx, grad):
        return tuple(None if g is None else g * factor for g in original.__func__(ctx, grad))

    cls.backward = staticmethod(broken)
    try:
        yield
    finally:
        cls.backward = original


def micro_gradcheck(config: ModelConfig = MICRO_CONFIG, seed=0, h=1e-5, tol=1e-4):
    """Gradient check of the summed cross-entropy over every micro-model parameter."""
    if config.dropout_rate != 0.0:
        raise ConfigError("gradient checking needs dropout_rate = 0")
    split, social = make_micro_instance()
    graphs = build_graphs(split.train, split.num_users, split.num_items, social.src, social.dst,
                          eta=config.eta, neighbor_cap=config.neighbor_cap,
                          history_cap=config.history_cap, seed=seed)
    params = init_params(config, split.num_users, split.num_items, seed=seed)
    users, items, labels = micro_batch()

    def objective():
        reps = propagate(params, graphs, config)
        return loss(forward_batch(users, items, reps, graphs, params, config).pred, labels)

    return grad_check(objective, params, h=h, tol=tol, seed=seed)
