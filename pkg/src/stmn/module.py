"""Tiny parameter-container base class shared by the model components."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import BatchNormState, LSTMParams, Tensor


class Module:
    """Walks attributes to find trainable tensors and BN running statistics.

    Parameters are leaf ``Tensor`` attributes with ``requires_grad``; nested
    ``Module``, ``BatchNormState`` and ``LSTMParams`` attributes are visited
    recursively. Names are dotted attribute paths, sorted for a stable order.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in sorted(vars(self)):
            value = getattr(self, name)
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, BatchNormState):
                yield full + ".gamma", value.gamma
                yield full + ".beta", value.beta
            elif isinstance(value, LSTMParams):
                yield full + ".w_ih", value.w_ih
                yield full + ".w_hh", value.w_hh
                yield full + ".bias", value.bias
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, BatchNormState):
                        yield f"{full}.{i}.gamma", item.gamma
                        yield f"{full}.{i}.beta", item.beta

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in sorted(vars(self)):
            value = getattr(self, name)
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, BatchNormState):
                yield full + ".running_mean", value.running_mean
                yield full + ".running_var", value.running_var
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
                    elif isinstance(item, BatchNormState):
                        yield f"{full}.{i}.running_mean", item.running_mean
                        yield f"{full}.{i}.running_var", item.running_var

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (e.g. to float64 for grad checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for value in vars(m).values():
                states = value if isinstance(value, (list, tuple)) else [value]
                for st in states:
                    if isinstance(st, BatchNormState):
                        st.running_mean = st.running_mean.astype(dtype)
                        st.running_var = st.running_var.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - (set(own) | set(bufs))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if p.data.shape != tuple(state[name].shape):
                raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, buf in bufs.items():
            if buf.shape != tuple(state[name].shape):
                raise ValueError(f"shape mismatch for {name}: {buf.shape} vs {state[name].shape}")
            buf[...] = state[name]
