"""Two-phase incompressible flow on the unit square, IMPES time stepping.

Each step solves the implicit pressure/velocity system and then advances
saturation explicitly with first-order upwinding:

* the lowest-order face-flux / cellwise-constant mixed discretization is
  reduced, via face-lumped quadrature of the velocity mass matrix, to a
  cell-centered five-point pressure system with harmonic inter-cell
  transmissibilities T = |f| / (h_L / (2 c_L) + h_R / (2 c_R)) where
  c = K * lambda(s); Dirichlet pressure enters through half-cell
  transmissibilities at boundary faces;
* saturation is updated per cell from the upwinded fractional-flow flux
  through its four faces.

All operations are pure functions of their inputs; states are never
mutated in place, so independent ensemble members can be stepped
concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid


class SolverError(RuntimeError):
    """Raised when the pressure solve fails or produces non-finite values."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CflWarning(UserWarning):
    """Emitted when the explicit transport step violates its CFL bound."""


@dataclass(frozen=True)
class SolverParams:
    """Physical and numerical parameters of the IMPES stepper."""

    mu: float = 0.2
    dt: float = 0.001
    linear_tol: float = 1e-10
    clamp_saturation: bool = True
    cfl_check: bool = True
    max_iter: int = 5000

    def __post_init__(self):
        if self.mu <= 0 or self.dt <= 0 or self.linear_tol <= 0:
            raise ValueError("mu, dt and linear_tol must be positive")


@dataclass(frozen=True)
class StateVector:
    """Concatenated (saturation, face fluxes, pressure) filter state."""

    grid: Grid
    s: np.ndarray
    u: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.s.shape != (self.grid.n_cells,):
            raise ValueError("saturation block has wrong length")
        if self.u.shape != (self.grid.n_faces,):
            raise ValueError("flux block has wrong length")
        if self.p.shape != (self.grid.n_cells,):
            raise ValueError("pressure block has wrong length")

    @property
    def dim(self) -> int:
        return self.grid.state_dim

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.s, self.u, self.p])

    @classmethod
    def from_flat(cls, grid: Grid, vec: np.ndarray) -> "StateVector":
        if vec.shape != (grid.state_dim,):
            raise ValueError(
                f"expected flat state of length {grid.state_dim}, got {vec.shape}"
            )
        nc, nf = grid.n_cells, grid.n_faces
        return cls(grid, vec[:nc].copy(), vec[nc : nc + nf].copy(), vec[nc + nf :].copy())

    @classmethod
    def zeros(cls, grid: Grid) -> "StateVector":
        return cls(
            grid,
            np.zeros(grid.n_cells),
            np.zeros(grid.n_faces),
            np.zeros(grid.n_cells),
        )


def state_slices(grid: Grid) -> dict[str, slice]:
    """Block slices of the flattened state, keyed by variable name."""
    nc, nf = grid.n_cells, grid.n_faces
    return {
        "saturation": slice(0, nc),
        "velocity": slice(nc, nc + nf),
        "pressure": slice(nc + nf, 2 * nc + nf),
    }


# -- constitutive relations ---------------------------------------------------


def total_mobility(s, mu: float = 0.2):
    """lambda(s) = s^2 / mu + (1 - s)^2, strictly positive for all real s."""
    s = np.asarray(s, dtype=float)
    return s * s / mu + (1.0 - s) ** 2


def fractional_flow(s, mu: float = 0.2):
    """F(s) = s^2 / (s^2 + mu (1 - s)^2), monotone from F(0)=0 to F(1)=1."""
    s = np.asarray(s, dtype=float)
    s2 = s * s
    return s2 / (s2 + mu * (1.0 - s) ** 2)


def fractional_flow_deriv(s, mu: float = 0.2):
    """dF/ds = 2 mu s (1 - s) / (s^2 + mu (1 - s)^2)^2."""
    s = np.asarray(s, dtype=float)
    den = s * s + mu * (1.0 - s) ** 2
    return 2.0 * mu * s * (1.0 - s) / (den * den)


def max_wave_speed(mu: float = 0.2) -> float:
    """max over s in [0, 1] of dF/ds, used by the CFL check."""
    s = np.linspace(0.0, 1.0, 4097)
    return float(fractional_flow_deriv(s, mu).max())


# -- boundary data ------------------------------------------------------------


def default_pressure_bc(x, y):
    """Dirichlet pressure p_D = 1 - x1 on the whole boundary."""
    return 1.0 - np.asarray(x, dtype=float)


def default_inflow_saturation(x, y):
    """Boundary saturation: 1 on the inflow side {x1 = 0}, 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.0, 1.0, 0.0)


# -- pressure / velocity solve ------------------------------------------------


def _face_conductances(grid: Grid, coeff: np.ndarray, sealed: tuple = ()):
    """Per-face velocity conductances g with u_face = g * (p_left - p_right).

    coeff is K * lambda(s) per cell, shaped (ny, nx). Interior faces use the
    harmonic average over the two half cells, boundary faces the half-cell
    distance to the Dirichlet value. Sides listed in sealed get no-flow
    boundaries (zero conductance) instead of Dirichlet data.
    """
    hx, hy = grid.hx, grid.hy
    inv = 1.0 / coeff
    gx = np.empty((grid.ny, grid.nx + 1))
    gx[:, 1:-1] = 2.0 / (hx * (inv[:, :-1] + inv[:, 1:]))
    gx[:, 0] = 0.0 if "west" in sealed else 2.0 * coeff[:, 0] / hx
    gx[:, -1] = 0.0 if "east" in sealed else 2.0 * coeff[:, -1] / hx
    gy = np.empty((grid.ny + 1, grid.nx))
    gy[1:-1, :] = 2.0 / (hy * (inv[:-1, :] + inv[1:, :]))
    gy[0, :] = 0.0 if "south" in sealed else 2.0 * coeff[0, :] / hy
    gy[-1, :] = 0.0 if "north" in sealed else 2.0 * coeff[-1, :] / hy
    return gx, gy


def _boundary_pressures(grid: Grid, p_dirichlet):
    hx, hy = grid.hx, grid.hy
    yc = (np.arange(grid.ny) + 0.5) * hy
    xc = (np.arange(grid.nx) + 0.5) * hx
    west = np.asarray(p_dirichlet(np.zeros(grid.ny), yc), dtype=float)
    east = np.asarray(p_dirichlet(np.ones(grid.ny), yc), dtype=float)
    south = np.asarray(p_dirichlet(xc, np.zeros(grid.nx)), dtype=float)
    north = np.asarray(p_dirichlet(xc, np.ones(grid.nx)), dtype=float)
    return west, east, south, north


def _fluxes_from_pressure(grid, p2, gx, gy, bc):
    west, east, south, north = bc
    ux = np.empty((grid.ny, grid.nx + 1))
    ux[:, 1:-1] = gx[:, 1:-1] * (p2[:, :-1] - p2[:, 1:])
    ux[:, 0] = gx[:, 0] * (west - p2[:, 0])
    ux[:, -1] = gx[:, -1] * (p2[:, -1] - east)
    uy = np.empty((grid.ny + 1, grid.nx))
    uy[1:-1, :] = gy[1:-1, :] * (p2[:-1, :] - p2[1:, :])
    uy[0, :] = gy[0, :] * (south - p2[0, :])
    uy[-1, :] = gy[-1, :] * (p2[-1, :] - north)
    return ux, uy


def assemble_and_solve_darcy(
    grid: Grid,
    permeability: np.ndarray,
    s: np.ndarray,
    params: SolverParams,
    p_dirichlet: Callable = default_pressure_bc,
    q: Optional[np.ndarray] = None,
    p_initial_guess: Optional[np.ndarray] = None,
    sealed: tuple = (),
):
    """Solve the implicit Darcy system for one time level.

    Returns (u, p) with u the per-face normal velocities (canonical face
    order) and p the cell pressures. The cell-centered system is SPD and is
    solved by conjugate gradients with diagonal preconditioning; the solve
    is re-tightened until every cell's net volumetric outflux residual is
    below 10 * linear_tol * max|u| (with a machine-precision floor relative
    to the data for degenerate zero-flow problems).

    Raises SolverError for nonpositive coefficients, non-convergence or
    non-finite results.
    """
    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    coeff = (np.asarray(permeability, float) * total_mobility(s, params.mu)).reshape(ny, nx)
    if not np.all(np.isfinite(coeff)) or np.any(coeff <= 0.0):
        raise SolverError("nonpositive or non-finite K*lambda(s) coefficient")

    gx, gy = _face_conductances(grid, coeff, sealed)
    bc = _boundary_pressures(grid, p_dirichlet)
    west, east, south, north = bc

    # five-point balance: sum over faces of outward volumetric flux = q |cell|
    ax_e = hy * gx[:, 1:]   # east-face coefficient of each cell
    ax_w = hy * gx[:, :-1]
    ay_n = hx * gy[1:, :]
    ay_s = hx * gy[:-1, :]
    diag = (ax_e + ax_w + ay_n + ay_s).ravel()

    n = grid.n_cells
    off_e = -ax_e[:, :-1].ravel()  # cell (i,j) <-> (i+1,j)
    off_n = -ay_n[:-1, :].ravel()  # cell (i,j) <-> (i,j+1)
    rows_e = np.arange(n).reshape(ny, nx)[:, :-1].ravel()
    rows_n = np.arange(n).reshape(ny, nx)[:-1, :].ravel()
    A = sp.coo_matrix(
        (
            np.concatenate([diag, off_e, off_e, off_n, off_n]),
            (
                np.concatenate([np.arange(n), rows_e, rows_e + 1, rows_n, rows_n + nx]),
                np.concatenate([np.arange(n), rows_e + 1, rows_e, rows_n + nx, rows_n]),
            ),
        ),
        shape=(n, n),
    ).tocsr()

    b2 = np.zeros((ny, nx))
    b2[:, 0] += hy * gx[:, 0] * west
    b2[:, -1] += hy * gx[:, -1] * east
    b2[0, :] += hx * gy[0, :] * south
    b2[-1, :] += hx * gy[-1, :] * north
    if q is not None:
        b2 += np.asarray(q, float).reshape(ny, nx) * hx * hy
    b = b2.ravel()

    inv_diag = 1.0 / diag
    precond = spla.LinearOperator((n, n), matvec=lambda r: inv_diag * r)
    x0 = None if p_initial_guess is None else np.asarray(p_initial_guess, float)

    rtol = params.linear_tol
    p = x0
    for _ in range(4):
        p, info = spla.cg(A, b, x0=p, rtol=rtol, atol=0.0, maxiter=params.max_iter, M=precond)
        if info > 0:
            raise SolverError(
                "pressure CG did not converge",
                residual=float(np.linalg.norm(b - A @ p)),
                iterations=info,
            )
        if info < 0:
            raise SolverError("pressure CG reported illegal input", iterations=info)
        p2 = p.reshape(ny, nx)
        ux, uy = _fluxes_from_pressure(grid, p2, gx, gy, bc)
        umax = max(np.abs(ux).max(), np.abs(uy).max())
        residual = np.abs(b - A @ p).max()
        # floor for zero-flow data, where the velocity-relative bound vanishes
        floor = 1e-12 * max(np.abs(b).max(), 1e-300)
        if residual <= max(10.0 * params.linear_tol * umax, floor):
            break
        rtol *= 1e-3
    else:
        raise SolverError(
            "pressure solve could not reach the mass-conservation tolerance",
            residual=float(residual),
        )
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(ux)) and np.all(np.isfinite(uy))):
        raise SolverError("pressure solve produced non-finite values")

    u = np.concatenate([ux.ravel(), uy.ravel()])
    return u, p.copy()


# -- explicit saturation transport ---------------------------------------------


def cfl_number(grid: Grid, u: np.ndarray, params: SolverParams) -> float:
    """dt * max|u . n| * max F' / min(hx, hy); > 1 violates the bound."""
    speed = np.abs(u).max() if u.size else 0.0
    return params.dt * speed * max_wave_speed(params.mu) / min(grid.hx, grid.hy)


def advance_saturation(
    grid: Grid,
    s: np.ndarray,
    u: np.ndarray,
    params: SolverParams,
    s_inflow: Callable = default_inflow_saturation,
    q: Optional[np.ndarray] = None,
):
    """One explicit upwind transport step for the saturation.

    Per cell: s' = s - (dt / |cell|) * sum_f F(s_up) (u . n_out) |f|, with
    the upwind saturation taken from this cell on outflow faces and from the
    neighbor (or the boundary inflow value) on inflow faces. A nonzero total
    source q adds dt * F(s) * q. The result is clamped to [0, 1] when
    params.clamp_saturation is set.
    """
    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    s2 = np.asarray(s, float).reshape(ny, nx)
    ux = u[: grid.n_xfaces].reshape(ny, nx + 1)
    uy = u[grid.n_xfaces :].reshape(ny + 1, nx)

    if params.cfl_check:
        number = cfl_number(grid, u, params)
        if number > 1.0 + 1e-12:
            warnings.warn(
                f"transport CFL number {number:.3f} exceeds 1; "
                "reduce dt or expect a nonmonotone update",
                CflWarning,
                stacklevel=2,
            )

    yc = (np.arange(ny) + 0.5) * hy
    xc = (np.arange(nx) + 0.5) * hx
    sb_w = np.asarray(s_inflow(np.zeros(ny), yc), float)
    sb_e = np.asarray(s_inflow(np.ones(ny), yc), float)
    sb_s = np.asarray(s_inflow(xc, np.zeros(nx)), float)
    sb_n = np.asarray(s_inflow(xc, np.ones(nx)), float)

    s_up_x = np.empty((ny, nx + 1))
    s_up_x[:, 1:-1] = np.where(ux[:, 1:-1] > 0.0, s2[:, :-1], s2[:, 1:])
    s_up_x[:, 0] = np.where(ux[:, 0] > 0.0, sb_w, s2[:, 0])
    s_up_x[:, -1] = np.where(ux[:, -1] > 0.0, s2[:, -1], sb_e)
    s_up_y = np.empty((ny + 1, nx))
    s_up_y[1:-1, :] = np.where(uy[1:-1, :] > 0.0, s2[:-1, :], s2[1:, :])
    s_up_y[0, :] = np.where(uy[0, :] > 0.0, sb_s, s2[0, :])
    s_up_y[-1, :] = np.where(uy[-1, :] > 0.0, s2[-1, :], sb_n)

    fx = fractional_flow(s_up_x, params.mu) * ux
    fy = fractional_flow(s_up_y, params.mu) * uy
    div = (fx[:, 1:] - fx[:, :-1]) * hy + (fy[1:, :] - fy[:-1, :]) * hx

    s_new = s2 - params.dt / (hx * hy) * div
    if q is not None:
        s_new = s_new + params.dt * fractional_flow(s2, params.mu) * np.asarray(q, float).reshape(ny, nx)
    if params.clamp_saturation:
        s_new = np.clip(s_new, 0.0, 1.0)
    return s_new.ravel()


def step(
    state: StateVector,
    permeability: np.ndarray,
    params: SolverParams,
    p_dirichlet: Callable = default_pressure_bc,
    s_inflow: Callable = default_inflow_saturation,
    q: Optional[np.ndarray] = None,
    sealed: tuple = (),
) -> StateVector:
    """One IMPES step: implicit Darcy solve with lambda(s^n), then explicit
    upwind saturation advance with the new velocity."""
    u, p = assemble_and_solve_darcy(
        state.grid,
        permeability,
        state.s,
        params,
        p_dirichlet=p_dirichlet,
        q=q,
        p_initial_guess=state.p if np.any(state.p) else None,
        sealed=sealed,
    )
    s_new = advance_saturation(state.grid, state.s, u, params, s_inflow=s_inflow, q=q)
    return StateVector(state.grid, s_new, u, p)
