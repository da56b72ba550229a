"""Live multiply-accumulate counter driven by forward hooks.

Counts conv and linear MACs from the actual tensor shapes seen at run time,
plus the two attention matmuls. Independent of the static cost model.
"""
from __future__ import annotations

from contextlib import contextmanager

import torch
from torch import nn

from .fusion.model import SelfAttention


class MacCounter:
    def __init__(self):
        self.total = 0
        self.by_module: dict[str, int] = {}

    def _add(self, name: str, macs: int) -> None:
        self.total += macs
        self.by_module[name] = self.by_module.get(name, 0) + macs

    def _hook(self, name: str):
        def hook(module, inputs, output):
            x = inputs[0]
            if isinstance(module, nn.Conv2d):
                k = module.kernel_size[0] * module.kernel_size[1]
                per_out = k * module.in_channels // module.groups
                self._add(name, per_out * output.numel())
            elif isinstance(module, nn.Linear):
                self._add(name, module.in_features * output.numel())
            elif isinstance(module, SelfAttention):
                b, n, d = x.shape
                self._add(name, 2 * b * n * n * d)
        return hook

    @contextmanager
    def attach(self, model: nn.Module):
        handles = [m.register_forward_hook(self._hook(name)) for name, m in model.named_modules()
                   if isinstance(m, (nn.Conv2d, nn.Linear, SelfAttention))]
        try:
            yield self
        finally:
            for h in handles:
                h.remove()


def count_macs(model: nn.Module, fn, *args, **kwargs) -> int:
    """Run ``fn(*args, **kwargs)`` under no_grad with ``model`` hooked; return MACs."""
    counter = MacCounter()
    with counter.attach(model), torch.no_grad():
        fn(*args, **kwargs)
    return counter.total
