"""Heteroscedastic reconstruction objectives.

Numeric: mean squared residual over the feature's dimensions, scaled by
exp(-s), plus s. Categorical: natural-log cross-entropy with the same
scaling. s is the per-target log-variance; sigma = exp(s/2). Driving s
down buys loss only while the scaled error term stays smaller, so the
minimizer sits at exp(s*) = squared residual.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def squared_residual(y: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
    """Mean over the last (dimension) axis of (y - mu)^2."""
    return ((y - mu) ** 2).mean(dim=-1)


def hetero_numeric_term(y: torch.Tensor, mu: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """y, mu: (..., d); s: (...). Returns (...)."""
    return squared_residual(y, mu) / torch.exp(s) + s


def cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Natural-log CE. logits: (..., v); target: (...) class indices."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                           target.reshape(-1), reduction="none").reshape(target.shape)

def hetero_categorical_term(logits: torch.Tensor, target: torch.Tensor,
                            s: torch.Tensor) -> torch.Tensor:
    return cross_entropy(logits, target) / torch.exp(s) + s


def sigma_from_s(s: torch.Tensor) -> torch.Tensor:
    return torch.exp(s / 2)
