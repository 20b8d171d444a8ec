"""Tversky index and loss over soft probability maps."""

from __future__ import annotations

import torch

from .errors import ConfigError


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")


def tversky_index(p: torch.Tensor, g: torch.Tensor, alpha: float = 0.7,
                  smooth_eps: float = 1e-6) -> torch.Tensor:
    """T = (|PG| + eps) / (|PG| + alpha |P\\G| + (1-alpha) |G\\P| + eps).

    Set cardinalities are soft counts over all elements jointly:
    |PG| = sum p*g, |P\\G| = sum p*(1-g), |G\\P| = sum (1-p)*g.
    At alpha = 0.5 this is the soft Dice coefficient.
    """
    _check_alpha(alpha)
    p = p.reshape(-1)
    g = g.reshape(-1)
    tp = (p * g).sum()
    fp = (p * (1.0 - g)).sum()
    fn = ((1.0 - p) * g).sum()
    return (tp + smooth_eps) / (tp + alpha * fp + (1.0 - alpha) * fn + smooth_eps)


def tversky_loss(p: torch.Tensor, g: torch.Tensor, alpha: float = 0.7,
                 smooth_eps: float = 1e-6) -> torch.Tensor:
    """1 - tversky_index; differentiable w.r.t. p."""
    return 1.0 - tversky_index(p, g, alpha=alpha, smooth_eps=smooth_eps)
