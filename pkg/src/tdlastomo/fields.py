"""Scalar fields sampled on the active pixels of a :class:`PixelGrid`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .geometry import PixelGrid


@dataclass(frozen=True, eq=False)
class Field:
    grid: PixelGrid
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.num_pixels,):
            raise ShapeError(f"field has {values.shape} values, grid has {self.grid.num_pixels} pixels")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def image(self, fill=np.nan) -> np.ndarray:
        return self.grid.to_image(self.values, fill)

    def with_values(self, values, unit: str | None = None) -> "Field":
        return Field(self.grid, values, self.unit if unit is None else unit)

    def __len__(self):
        return self.values.size


def check_same_grid(*fields: Field) -> PixelGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if not grid.same_as(f.grid):
            raise ShapeError("fields are defined on different grids")
    return grid
