"""RMSProp with an inverse-time learning-rate schedule."""

from dataclasses import dataclass

import numpy as np


class GradientError(RuntimeError):
    """A non-finite gradient reached the optimizer."""


@dataclass
class OptimizerState:
    v: dict                 # per-parameter mean-square accumulators
    t: int = 0
    lr: float = 0.001
    decay: float = 8e-9
    rho: float = 0.9
    eps: float = 1e-7


def init_state(params, lr=0.001, decay=8e-9, rho=0.9, eps=1e-7):
    v = {name: np.zeros_like(p) for name, p in params.items()}
    return OptimizerState(v=v, t=0, lr=lr, decay=decay, rho=rho, eps=eps)


def lr_at(state):
    """Effective learning rate for the upcoming step."""
    return state.lr / (1.0 + state.decay * state.t)


def rmsprop_step(params, grads, state):
    """One update: v <- rho*v + (1-rho)*g^2; p <- p - lr_t*g/(sqrt(v)+eps).

    Returns fresh (params, state); inputs are not mutated.
    """
    lr_t = lr_at(state)
    new_params = {}
    new_v = {}
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
        v = state.rho * state.v[name] + (1.0 - state.rho) * (g * g)
        new_params[name] = params[name] - lr_t * g / (np.sqrt(v) + state.eps)
        new_v[name] = v
    return new_params, OptimizerState(v=new_v, t=state.t + 1, lr=state.lr,
                                      decay=state.decay, rho=state.rho, eps=state.eps)
