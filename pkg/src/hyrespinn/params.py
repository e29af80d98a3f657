"""Named flat storage for trainable and fixed model arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var

__all__ = ["ParamStore", "ParamEntry"]


@dataclass
class ParamEntry:
    value: np.ndarray
    trainable: bool = True
    init: str = ""


@dataclass
class ParamStore:
    """Ordered name -> array collection with init provenance.

    Trainable entries are what the optimizer sees; fixed entries (RBF
    centers, Fourier projection matrices) ride along so a checkpoint fully
    reconstructs the model.
    """

    _entries: dict[str, ParamEntry] = field(default_factory=dict)

    def add(self, name: str, value, trainable: bool = True, init: str = "") -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        self._entries[name] = ParamEntry(arr, trainable, init)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_names(self) -> list[str]:
        return [n for n, e in self._entries.items() if e.trainable]

    def set(self, name: str, value: np.ndarray) -> None:
        """Replace a value in place (optimizer updates); shape must match."""
        e = self._entries[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != e.value.shape:
            raise ValueError(
                f"parameter {name!r}: shape {value.shape} != {e.value.shape}"
            )
        e.value = value

    def as_vars(self) -> dict[str, Var]:
        """Fresh leaf Vars for one training/evaluation step."""
        return {
            n: Var(e.value, requires_grad=e.trainable)
            for n, e in self._entries.items()
        }

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, e in self._entries.items():
            out.add(n, e.value.copy(), e.trainable, e.init)
        return out
