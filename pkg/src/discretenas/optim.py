"""Optimizers for network weights (SGD with momentum) and architecture (Adam)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .autodiff import ShapeError
from .supernet import ArchParams

Arrays = Dict[str, np.ndarray]


def _check(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {None if g is None else g.shape}, "
                             f"parameter {p.shape}")


def cosine_lr(epoch: float, total_epochs: int, lr0: float = 0.25) -> float:
    """Cosine decay from ``lr0`` toward 0 over ``total_epochs``, no restart."""
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


@dataclass
class SGD:
    lr: float = 0.25
    momentum: float = 0.9
    weight_decay: float = 3e-4
    velocity: Arrays = field(default_factory=dict)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float = None) -> Arrays:
        """``v <- m v + (g + wd p)``; ``p <- p - lr v``. Returns new arrays."""
        _check(params, grads)
        lr = self.lr if lr is None else lr
        out = {}
        for name, p in params.items():
            d = grads[name] + self.weight_decay * p
            v = self.velocity.get(name)
            v = d if v is None else self.momentum * v + d
            self.velocity[name] = v
            out[name] = p - lr * v
        return out


def sgd_momentum_step(theta: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
                      momentum: float = 0.9, weight_decay: float = 3e-4,
                      velocity: Arrays = None) -> Arrays:
    opt = SGD(lr, momentum, weight_decay, velocity if velocity is not None else {})
    return opt.step(theta, grads)


@dataclass
class Adam:
    """Bias-corrected Adam with L2 weight decay folded into the gradient."""

    lr: float = 3e-4
    betas: tuple = (0.5, 0.999)
    weight_decay: float = 1e-3
    eps: float = 1e-8
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    t: Dict[str, int] = field(default_factory=dict)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> Arrays:
        _check(params, grads)
        b1, b2 = self.betas
        out = {}
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            t = self.t.get(name, 0) + 1
            m = b1 * self.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
            v = b2 * self.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
            self.m[name], self.v[name], self.t[name] = m, v, t
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            out[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def adam_step(params, grads, state: Adam = None, lr: float = 3e-4, betas=(0.5, 0.999),
              weight_decay: float = 1e-3, eps: float = 1e-8) -> Arrays:
    state = state if state is not None else Adam(lr, betas, weight_decay, eps)
    return state.step(params, grads)


def project_beta(arch: ArchParams, bound: float = 1.0) -> ArchParams:
    """Clamp every edge logit to at most ``bound`` (in place; returns ``arch``)."""
    for t in arch.cell_types:
        arch.beta[t] = np.minimum(arch.beta[t], bound)
    return arch


@dataclass
class OptimState:
    """Optimizer state for one search run."""

    sgd: SGD
    adam_alpha: Adam
    adam_beta: Adam
    epoch: int = 0
