"""Uniform 1D grids and grid functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [lo, hi].

    Closed grids place nodes at lo + j*(hi-lo)/(m-1) for j = 0..m-1, so both
    endpoints are nodes. Periodic grids place nodes at lo + j*(hi-lo)/m and
    omit the right endpoint.
    """

    lo: float
    hi: float
    m: int
    periodic: bool = False

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("grid endpoints must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"grid requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.m < 2:
            raise ValueError(f"grid requires m >= 2, got m={self.m}")

    @property
    def h(self) -> float:
        span = self.hi - self.lo
        return span / self.m if self.periodic else span / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.m)


@dataclass(frozen=True)
class Field:
    """Real-valued function sampled on a grid, one value per node."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.m,):
            raise ValueError(
                f"field needs {self.grid.m} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
