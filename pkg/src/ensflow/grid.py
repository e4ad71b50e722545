"""Structured rectangular mesh over the unit square.

Cells carry the piecewise-constant degrees of freedom (saturation, pressure),
faces carry one normal-flux degree of freedom each. Orderings are canonical
and fixed so that flattened state vectors and CSV files are bit-stable:

* cells are row-major, ``cell = i + nx * j`` for ``i in [0, nx)``,
  ``j in [0, ny)``;
* faces list the x-normal block first (``(nx+1) * ny`` faces, indexed
  ``i + (nx+1) * j``), then the y-normal block (``nx * (ny+1)`` faces,
  indexed ``i + nx * j`` plus the x-block offset);
* stored flux values are the velocity components along +x (x-normal faces)
  and +y (y-normal faces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

X_NORMAL = "x"
Y_NORMAL = "y"


@dataclass(frozen=True)
class FaceRef:
    """A face identified by orientation and lattice pair (i, j).

    The unit normal convention is global: +x for x-normal faces, +y for
    y-normal faces. Flux signs are always interpreted against it.
    """

    orientation: str
    i: int
    j: int

    def index(self, grid: "Grid") -> int:
        if self.orientation == X_NORMAL:
            return grid.xface_index(self.i, self.j)
        return grid.yface_index(self.i, self.j)


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product mesh of [0, 1]^2 with nx * ny cells."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(
                f"grid needs at least 2 cells per axis, got {self.nx} x {self.ny}"
            )

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_faces(self) -> int:
        return self.n_xfaces + self.n_yfaces

    @property
    def state_dim(self) -> int:
        """Flattened (saturation, flux, pressure) dimension."""
        return 2 * self.n_cells + self.n_faces

    # -- index maps ---------------------------------------------------------

    def cell_index(self, i: int, j: int) -> int:
        self._check(0 <= i < self.nx and 0 <= j < self.ny, f"cell ({i},{j})")
        return i + self.nx * j

    def cell_ij(self, cell: int) -> tuple[int, int]:
        self._check(0 <= cell < self.n_cells, f"cell {cell}")
        return cell % self.nx, cell // self.nx

    def xface_index(self, i: int, j: int) -> int:
        self._check(0 <= i <= self.nx and 0 <= j < self.ny, f"x-face ({i},{j})")
        return i + (self.nx + 1) * j

    def yface_index(self, i: int, j: int) -> int:
        self._check(0 <= i < self.nx and 0 <= j <= self.ny, f"y-face ({i},{j})")
        return self.n_xfaces + i + self.nx * j

    def _check(self, ok: bool, what: str) -> None:
        if not ok:
            raise IndexError(f"{what} out of range for {self.nx} x {self.ny} grid")

    # -- geometry -----------------------------------------------------------

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) cell-center coordinates, canonical cell order."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        x = (i + 0.5) * self.hx
        y = (j + 0.5) * self.hy
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def face_midpoints(self) -> np.ndarray:
        """(n_faces, 2) face-midpoint coordinates, canonical face order."""
        xi = np.arange(self.nx + 1) * self.hx
        yj = (np.arange(self.ny) + 0.5) * self.hy
        xx, yy = np.meshgrid(xi, yj)
        xmid = np.column_stack([xx.ravel(), yy.ravel()])
        xi = (np.arange(self.nx) + 0.5) * self.hx
        yj = np.arange(self.ny + 1) * self.hy
        xx, yy = np.meshgrid(xi, yj)
        ymid = np.column_stack([xx.ravel(), yy.ravel()])
        return np.vstack([xmid, ymid])

    def is_boundary_face(self, face: FaceRef) -> bool:
        if face.orientation == X_NORMAL:
            return face.i == 0 or face.i == self.nx
        return face.j == 0 or face.j == self.ny

    def cell_faces(self, cell: int) -> tuple[tuple[FaceRef, int], ...]:
        """(west, east, south, north) faces of a cell with outward signs.

        The sign converts the stored flux direction (+x / +y) into the
        outward flux for this cell: -1 for west/south, +1 for east/north.
        """
        i, j = self.cell_ij(cell)
        return (
            (FaceRef(X_NORMAL, i, j), -1),
            (FaceRef(X_NORMAL, i + 1, j), +1),
            (FaceRef(Y_NORMAL, i, j), -1),
            (FaceRef(Y_NORMAL, i, j + 1), +1),
        )

    def face_cells(self, face: FaceRef) -> tuple[int, ...]:
        """Adjacent cell indices, (upwind-side, downwind-side) along the normal."""
        cells = []
        if face.orientation == X_NORMAL:
            if face.i > 0:
                cells.append(self.cell_index(face.i - 1, face.j))
            if face.i < self.nx:
                cells.append(self.cell_index(face.i, face.j))
        else:
            if face.j > 0:
                cells.append(self.cell_index(face.i, face.j - 1))
            if face.j < self.ny:
                cells.append(self.cell_index(face.i, face.j))
        return tuple(cells)


def build_grid(nx: int, ny: int) -> Grid:
    """Build a uniform nx * ny grid on the unit square (nx, ny >= 2)."""
    return Grid(nx, ny)
