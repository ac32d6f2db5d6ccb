"""Fixed-capacity FIFO queue of momentum-branch keys used as the shared negative set."""

from __future__ import annotations

import torch

from .encoder import Branch, EmbeddingBatch, check_unit_norm
from .errors import ContractError, ParameterError, StateError


class MemoryBank:
    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1 or dim < 1:
            raise ParameterError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self.storage = torch.zeros(capacity, dim, dtype=dtype)
        self.write_cursor = 0
        self.filled = 0

    def __len__(self) -> int:
        return self.filled

    @torch.no_grad()
    def enqueue(self, features: EmbeddingBatch) -> "MemoryBank":
        if not isinstance(features, EmbeddingBatch) or features.branch is not Branch.MOMENTUM:
            raise ContractError("only momentum-branch EmbeddingBatch features may be enqueued")
        keys = features.vectors.detach()
        n = keys.shape[0]
        if n > self.capacity:
            raise ParameterError(f"batch of {n} exceeds bank capacity {self.capacity}")
        if keys.shape[1] != self.dim:
            raise ParameterError(f"feature dim {keys.shape[1]} != bank dim {self.dim}")
        check_unit_norm(keys, "enqueued keys")
        idx = (self.write_cursor + torch.arange(n)) % self.capacity
        self.storage[idx] = keys.to(self.storage.dtype)
        self.write_cursor = (self.write_cursor + n) % self.capacity
        self.filled = min(self.capacity, self.filled + n)
        return self

    def as_negatives(self) -> torch.Tensor:
        """Snapshot (filled x d) of valid rows; a copy, so later enqueues do not alter it."""
        if self.filled == 0:
            raise StateError("memory bank is empty; losses need at least one negative")
        return self.storage[: self.filled].detach().clone()

    def ordered(self) -> torch.Tensor:
        """Valid rows oldest-first."""
        if self.filled < self.capacity:
            return self.storage[: self.filled].clone()
        return torch.roll(self.storage, -self.write_cursor, dims=0).clone()

    def state_dict(self) -> dict:
        return {"storage": self.storage.clone(), "write_cursor": self.write_cursor, "filled": self.filled}

    def load_state_dict(self, state: dict) -> None:
        storage = state["storage"]
        if tuple(storage.shape) != (self.capacity, self.dim):
            raise ParameterError("bank state shape mismatch")
        self.storage = storage.clone().to(self.storage.dtype)
        self.write_cursor = int(state["write_cursor"])
        self.filled = int(state["filled"])
