"""Block-structured parameter space with restriction/interpolation operators.

The global vector stacks ``M`` task-specific blocks followed by one shared
block.  Every client sees a two-block local view ``(w_i, sqrt(1/M) w_shared)``;
the operators below move between the two representations without ever
materialising the (sparse) operator matrices.

Client indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class LayoutError(ValueError):
    """Raised when blocks, views or client lists disagree with a layout."""


@dataclass(frozen=True)
class BlockLayout:
    task_dims: tuple[int, ...]
    shared_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_dims", tuple(int(d) for d in self.task_dims))
        if len(self.task_dims) < 1:
            raise LayoutError("layout needs at least one task block")
        if any(d < 1 for d in self.task_dims) or self.shared_dim < 1:
            raise LayoutError(f"all block dims must be >= 1, got {self.task_dims} / {self.shared_dim}")

    @property
    def num_clients(self) -> int:
        return len(self.task_dims)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        # start index of each task block, then the shared block, then the end
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.task_dims)]))

    @property
    def shared_offset(self) -> int:
        return self.offsets[-1]

    @property
    def total_dim(self) -> int:
        return self.shared_offset + self.shared_dim

    @cached_property
    def shared_scale(self) -> float:
        """sqrt(1/M), computed once per layout."""
        return float(np.sqrt(1.0 / self.num_clients))

    def task_slice(self, i: int) -> slice:
        self.check_client(i)
        return slice(self.offsets[i], self.offsets[i + 1])

    @property
    def shared_slice(self) -> slice:
        return slice(self.shared_offset, self.total_dim)

    def check_client(self, i: int) -> None:
        if not 0 <= i < self.num_clients:
            raise IndexError(f"client index {i} out of range for M={self.num_clients}")

    def to_dict(self) -> dict:
        return {"task_dims": list(self.task_dims), "shared_dim": self.shared_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockLayout":
        unknown = set(d) - {"task_dims", "shared_dim"}
        if unknown:
            raise LayoutError(f"unknown layout keys: {sorted(unknown)}")
        return cls(tuple(d["task_dims"]), int(d["shared_dim"]))

    @classmethod
    def uniform(cls, num_clients: int, task_dim: int, shared_dim: int) -> "BlockLayout":
        return cls((task_dim,) * num_clients, shared_dim)


def _frozen(x) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GlobalParam:
    """A point of the global space, stored as one flat read-only vector.

    The shared block always holds *raw* shared weights.
    """

    layout: BlockLayout
    vector: np.ndarray

    def __post_init__(self) -> None:
        v = _frozen(self.vector)
        if v.shape != (self.layout.total_dim,):
            raise LayoutError(f"expected vector of length {self.layout.total_dim}, got shape {v.shape}")
        object.__setattr__(self, "vector", v)

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "GlobalParam":
        return cls(layout, np.zeros(layout.total_dim))

    @classmethod
    def from_blocks(cls, layout: BlockLayout, tasks: Sequence[np.ndarray], shared: np.ndarray) -> "GlobalParam":
        if len(tasks) != layout.num_clients:
            raise LayoutError(f"expected {layout.num_clients} task blocks, got {len(tasks)}")
        parts = []
        for i, t in enumerate(tasks):
            t = np.atleast_1d(np.asarray(t, dtype=np.float64))
            if t.shape != (layout.task_dims[i],):
                raise LayoutError(f"task block {i} has shape {t.shape}, layout says {layout.task_dims[i]}")
            parts.append(t)
        s = np.atleast_1d(np.asarray(shared, dtype=np.float64))
        if s.shape != (layout.shared_dim,):
            raise LayoutError(f"shared block has shape {s.shape}, layout says {layout.shared_dim}")
        parts.append(s)
        return cls(layout, np.concatenate(parts))

    def task(self, i: int) -> np.ndarray:
        return self.vector[self.layout.task_slice(i)]

    @property
    def shared(self) -> np.ndarray:
        return self.vector[self.layout.shared_slice]

    @property
    def tasks(self) -> list[np.ndarray]:
        return [self.task(i) for i in range(self.layout.num_clients)]

    def __add__(self, other: "GlobalParam") -> "GlobalParam":
        _same_layout(self.layout, other.layout)
        return GlobalParam(self.layout, self.vector + other.vector)

    def __sub__(self, other: "GlobalParam") -> "GlobalParam":
        _same_layout(self.layout, other.layout)
        return GlobalParam(self.layout, self.vector - other.vector)

    def __mul__(self, a: float) -> "GlobalParam":
        return GlobalParam(self.layout, a * self.vector)

    __rmul__ = __mul__

    def norm_sq(self) -> float:
        return float(self.vector @ self.vector)


@dataclass(frozen=True, eq=False)
class LocalView:
    """Output of ``restrict``: the client's task block and the *scaled* shared block."""

    task: np.ndarray
    shared: np.ndarray
    client_id: int
    layout: BlockLayout

    def __post_init__(self) -> None:
        self.layout.check_client(self.client_id)
        t, s = _frozen(np.atleast_1d(self.task)), _frozen(np.atleast_1d(self.shared))
        if t.shape != (self.layout.task_dims[self.client_id],) or s.shape != (self.layout.shared_dim,):
            raise LayoutError(
                f"view shapes {t.shape}/{s.shape} do not match layout for client {self.client_id}"
            )
        object.__setattr__(self, "task", t)
        object.__setattr__(self, "shared", s)

    @property
    def raw_shared(self) -> np.ndarray:
        return self.shared / self.layout.shared_scale

    @classmethod
    def from_raw(cls, layout: BlockLayout, client_id: int, task, raw_shared) -> "LocalView":
        return cls(task, layout.shared_scale * np.asarray(raw_shared, dtype=np.float64), client_id, layout)


@dataclass(eq=False)
class ClientState:
    """A client's local parameters: its task block and its own copy of the shared block."""

    task: np.ndarray
    shared_copy: np.ndarray
    client_id: int

    def copy(self) -> "ClientState":
        return ClientState(self.task.copy(), self.shared_copy.copy(), self.client_id)

    def check(self, layout: BlockLayout) -> None:
        layout.check_client(self.client_id)
        if self.task.shape != (layout.task_dims[self.client_id],) or self.shared_copy.shape != (layout.shared_dim,):
            raise LayoutError(f"client {self.client_id} state does not match layout")


def _same_layout(a: BlockLayout, b: BlockLayout) -> None:
    if a != b:
        raise LayoutError(f"layout mismatch: {a} vs {b}")


def restrict(w: GlobalParam, i: int) -> LocalView:
    """R_i w = (w_i, sqrt(1/M) w_shared)."""
    layout = w.layout
    layout.check_client(i)
    return LocalView(w.task(i), layout.shared_scale * w.shared, i, layout)


def interpolate(v: LocalView, layout: BlockLayout | None = None) -> GlobalParam:
    """I_i v = R_i^T v: task block i gets ``v.task``, shared block gets sqrt(1/M) ``v.shared``."""
    if layout is not None:
        _same_layout(layout, v.layout)
    layout = v.layout
    out = np.zeros(layout.total_dim)
    out[layout.task_slice(v.client_id)] = v.task
    out[layout.shared_slice] = layout.shared_scale * v.shared
    return GlobalParam(layout, out)


def virtual_average(clients: Sequence[ClientState], layout: BlockLayout) -> GlobalParam:
    """sum_i I_i R_i v_i: task blocks copied, shared block is the mean of the local copies."""
    if len(clients) != layout.num_clients:
        raise LayoutError(f"expected {layout.num_clients} clients, got {len(clients)}")
    out = np.empty(layout.total_dim)
    shared = np.zeros(layout.shared_dim)
    seen = set()
    # fixed summation order by client id keeps the result schedule-independent
    for c in sorted(clients, key=lambda c: c.client_id):
        c.check(layout)
        seen.add(c.client_id)
        out[layout.task_slice(c.client_id)] = c.task
        shared += c.shared_copy
    if len(seen) != layout.num_clients:
        raise LayoutError("duplicate client ids in client list")
    out[layout.shared_slice] = shared / layout.num_clients
    return GlobalParam(layout, out)


def decomposition_norms(w: GlobalParam) -> tuple[float, float]:
    """Return (sum_i ||I_i R_i w||^2, ||w||^2)."""
    layout = w.layout
    m = layout.num_clients
    shared_sq = float(w.shared @ w.shared)
    task_sq = sum(float(w.task(i) @ w.task(i)) for i in range(m))
    return task_sq + m * shared_sq / m**2, task_sq + shared_sq


def drift(w_bar: GlobalParam, clients: Iterable[ClientState]) -> float:
    """sum_i ||R_i w_bar - R_i v_i||^2 for client states ``v_i``."""
    layout = w_bar.layout
    total = 0.0
    for c in clients:
        dt = w_bar.task(c.client_id) - c.task
        ds = w_bar.shared - c.shared_copy
        total += float(dt @ dt) + float(ds @ ds) / layout.num_clients
    return total
