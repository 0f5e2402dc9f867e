"""Monotone finite-volume solvers for the skeleton and parabolic equations.

The flux divergence is discretised with a two-point monotone flux
(Engquist-Osher by default, Godunov optional) on the periodic grid.  Control
and noise sources are added explicitly with the coefficients frozen at the
pre-step state, and the viscous term uses the centred 2N+1 point Laplacian.
All array kernels accept optional leading batch axes, which is how the Monte
Carlo drivers advance many trajectories at once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BlowUpError, DomainError, StabilityError
from .models import Control, Field, FluxModel, NoiseModel, TorusGrid, flux_truncate

__all__ = [
    "SolverConfig",
    "Trajectory",
    "numerical_flux",
    "step_skeleton",
    "step_parabolic",
    "solve_skeleton",
    "solve_parabolic",
    "admissible_dt",
    "l1l1_distance",
]

SCHEMES = ("engquist_osher", "godunov")


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.45
    scheme: str = "engquist_osher"
    viscosity_eta: float = 0.0
    truncation_R: float | None = None
    substeps: int | None = None
    blowup: float = 1e6
    store: str = "all"

    def __post_init__(self):
        if not (0 < self.cfl <= 1):
            raise DomainError(f"cfl out of (0,1]: {self.cfl}")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.viscosity_eta < 0:
            raise DomainError("viscosity_eta must be >= 0")
        if self.truncation_R is not None and not self.truncation_R > 0:
            raise DomainError("truncation_R must be > 0")
        if self.substeps is not None and self.substeps < 1:
            raise DomainError("substeps must be >= 1")
        if self.store not in ("all", "nodes"):
            raise DomainError("store must be 'all' or 'nodes'")


@dataclass(frozen=True)
class Trajectory:
    """Solution snapshots on a common grid.

    ``values[i]`` is the field at ``times[i]``.  Control nodes sit every
    ``node_stride`` snapshots when every solver step is stored.
    """

    grid: TorusGrid
    times: np.ndarray
    values: np.ndarray
    node_stride: int = 1
    meta: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must start at 0 and increase strictly")
        t.setflags(write=False)
        v = np.asarray(self.values)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def field(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    @property
    def fields(self) -> list[Field]:
        return [self.field(i) for i in range(len(self))]

    @property
    def initial(self) -> Field:
        return self.field(0)

    @property
    def final(self) -> Field:
        return self.field(-1)

    def node_times(self) -> np.ndarray:
        return self.times[:: self.node_stride]

    def node_values(self) -> np.ndarray:
        return self.values[:: self.node_stride]

    def write_csv(self, out_dir: str | Path, prefix: str = "snapshot",
                  nodes_only: bool = True) -> Path:
        """Write one ``x1[,x2],u`` CSV per snapshot plus ``<prefix>_manifest.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        times = self.node_times() if nodes_only else self.times
        values = self.node_values() if nodes_only else self.values
        centers = self.grid.centers.reshape(-1, self.grid.dim)
        header = [f"x{i + 1}" for i in range(self.grid.dim)] + ["u"]
        files = []
        for i, (t, v) in enumerate(zip(times, values)):
            name = f"{prefix}_{i:05d}.csv"
            with open(out / name, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for xc, val in zip(centers, v.reshape(-1)):
                    w.writerow([f"{c:.17g}" for c in xc] + [f"{val:.17g}"])
            files.append((i, t, name))
        manifest = out / f"{prefix}_manifest.csv"
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "time", "file"])
            for i, t, name in files:
                w.writerow([i, f"{t:.17g}", name])
        return manifest


# {{{ numerical flux

def _eo_split(flux: FluxModel, u: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """``A+(u) = A(0) + int_0^u max(a, 0)`` and ``A-(u) = int_0^u min(a, 0)``."""
    plus = np.full(u.shape, float(flux.flux(0.0, axis)))
    minus = np.zeros(u.shape)
    for lo, hi, sign in flux.sign_intervals[axis]:
        if sign == 0:
            continue
        piece = flux.flux(np.clip(u, lo, hi), axis) - flux.flux(min(max(0.0, lo), hi), axis)
        if sign > 0:
            plus = plus + piece
        else:
            minus = minus + piece
    return plus, minus


def _godunov(flux: FluxModel, ul: np.ndarray, ur: np.ndarray, axis: int) -> np.ndarray:
    lo = np.minimum(ul, ur)
    hi = np.maximum(ul, ur)
    cands = [flux.flux(ul, axis), flux.flux(ur, axis)]
    cands += [flux.flux(np.clip(r, lo, hi), axis) for r in flux.extrema_candidates[axis]]
    stack = np.stack(cands)
    return np.where(ul <= ur, stack.min(axis=0), stack.max(axis=0))


def numerical_flux(flux: FluxModel, u_left, u_right, axis: int = 0,
                   scheme: str = "engquist_osher"):
    """Monotone two-point flux across an interface normal to ``axis``."""
    ul = np.asarray(u_left, dtype=float)
    ur = np.asarray(u_right, dtype=float)
    if scheme == "engquist_osher":
        plus, _ = _eo_split(flux, ul, axis)
        _, minus = _eo_split(flux, ur, axis)
        F = plus + minus
    elif scheme == "godunov":
        F = _godunov(flux, ul, ur, axis)
    else:
        raise DomainError(f"unknown scheme {scheme!r}")
    F = np.where(ul == ur, flux.flux(ul, axis), F)
    return float(F) if F.ndim == 0 else F


def _is_zero_flux(flux: FluxModel) -> bool:
    return all(all(c == 0.0 for c in axis[1:]) for axis in flux.coeffs)


def _flux_divergence(u: np.ndarray, flux: FluxModel, grid: TorusGrid, scheme: str) -> np.ndarray:
    dx = grid.cell_width
    div = np.zeros(u.shape)
    for ax in range(grid.dim):
        arr_ax = u.ndim - grid.dim + ax
        if scheme == "engquist_osher":
            plus, minus = _eo_split(flux, u, ax)
            F = plus + np.roll(minus, -1, axis=arr_ax)
            right = np.roll(u, -1, axis=arr_ax)
            F = np.where(u == right, flux.flux(u, ax), F)
        else:
            F = _godunov(flux, u, np.roll(u, -1, axis=arr_ax), ax)
        div = div + (F - np.roll(F, 1, axis=arr_ax)) / dx
    return div


def _laplacian(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    dx2 = grid.cell_width ** 2
    lap = np.zeros(u.shape)
    for ax in range(grid.dim):
        arr_ax = u.ndim - grid.dim + ax
        lap = lap + (np.roll(u, -1, axis=arr_ax) - 2.0 * u + np.roll(u, 1, axis=arr_ax)) / dx2
    return lap


def grad_sq(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Squared forward-difference gradient ``sum_axis ((u_{i+1} - u_i) / dx)^2``."""
    dx = grid.cell_width
    out = np.zeros(u.shape)
    for ax in range(grid.dim):
        arr_ax = u.ndim - grid.dim + ax
        out = out + ((np.roll(u, -1, axis=arr_ax) - u) / dx) ** 2
    return out

# }}}


# {{{ stability

def _rate(flux: FluxModel, lo: float, hi: float, grid: TorusGrid, eta: float) -> float:
    dx = grid.cell_width
    rate = sum(flux.max_speed(lo, hi, ax) for ax in range(grid.dim)) / dx
    return rate + 2.0 * grid.dim * eta / dx ** 2


def admissible_dt(flux: FluxModel, values: np.ndarray, grid: TorusGrid, eta: float = 0.0,
                  cfl: float = 1.0) -> float:
    """Largest dt with ``dt * (sum max|a| / dx + 2 N eta / dx^2) <= cfl``."""
    rate = _rate(flux, float(np.min(values)), float(np.max(values)), grid, eta)
    return math.inf if rate == 0 else cfl / rate


def _check_step(flux, u, grid, eta, dt):
    limit = admissible_dt(flux, u, grid, eta, cfl=1.0)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(
            f"time step {dt:.6g} exceeds the monotone stability limit; "
            f"admissible dt <= {limit:.6g}", limit)

# }}}


# {{{ single steps

def _mode_sum(coef: np.ndarray, noise_grid: np.ndarray) -> np.ndarray:
    """``sum_k coef[..., k] * noise_grid[k]`` as an explicit ordered loop."""
    dim_extra = noise_grid.ndim - 1
    acc = None
    for k in range(noise_grid.shape[0]):
        c = coef[..., k].reshape(coef.shape[:-1] + (1,) * dim_extra)
        term = c * noise_grid[k]
        acc = term if acc is None else acc + term
    return acc


def _advance(u, flux, noise, noise_grid, grid, h, dt, *, scheme, eta=0.0, eps=0.0, dW=None,
             zero_flux=None):
    """One explicit step on raw arrays; ``u`` may carry leading batch axes."""
    if zero_flux is None:
        zero_flux = _is_zero_flux(flux)
    v = u if zero_flux else u - dt * _flux_divergence(u, flux, grid, scheme)
    if eta > 0:
        v = v + dt * eta * _laplacian(u, grid)
    coupling = noise.coupling(u)
    v = v + dt * (coupling * _mode_sum(np.asarray(h, dtype=float), noise_grid))
    if eps > 0 and dW is not None:
        v = v + math.sqrt(eps) * (coupling * _mode_sum(np.asarray(dW, dtype=float), noise_grid))
    return v


def step_skeleton(u: Field, flux: FluxModel, noise: NoiseModel, h_at_t, dt: float,
                  scheme: str = "engquist_osher") -> Field:
    """Conservative flux update plus explicit control source ``dt * sum_k g_k h^k``."""
    h = np.atleast_1d(np.asarray(h_at_t, dtype=float))
    if h.shape != (noise.K,):
        raise DomainError(f"control vector must have length {noise.K}")
    _check_step(flux, u.values, u.grid, 0.0, dt)
    out = _advance(u.values, flux, noise, noise.on_grid(u.grid), u.grid, h, dt, scheme=scheme)
    return Field(u.grid, out)


def step_parabolic(u: Field, flux: FluxModel, noise: NoiseModel, h_at_t, eta: float,
                   R: float | None, dt: float, scheme: str = "engquist_osher") -> Field:
    """:func:`step_skeleton` plus the explicit viscous term ``eta * Lap(u) * dt``."""
    if eta < 0:
        raise DomainError("viscosity must be >= 0")
    if R is not None and math.isfinite(R):
        flux = flux_truncate(flux, R)
    h = np.atleast_1d(np.asarray(h_at_t, dtype=float))
    if h.shape != (noise.K,):
        raise DomainError(f"control vector must have length {noise.K}")
    _check_step(flux, u.values, u.grid, eta, dt)
    out = _advance(u.values, flux, noise, noise.on_grid(u.grid), u.grid, h, dt,
                   scheme=scheme, eta=eta)
    return Field(u.grid, out)

# }}}


# {{{ time integration

def substeps_for(u0_values: np.ndarray, grid: TorusGrid, flux: FluxModel, control: Control,
                 cfg: SolverConfig, eta: float) -> int:
    """Number of equal solver steps per control interval."""
    if cfg.substeps is not None:
        return cfg.substeps
    dt_adm = admissible_dt(flux, u0_values, grid, eta, cfl=cfg.cfl)
    if math.isinf(dt_adm):
        return 1
    return max(1, math.ceil(control.dt / dt_adm * (1 - 1e-12)))


def integrate(u0: np.ndarray, grid: TorusGrid, flux: FluxModel, noise: NoiseModel,
              control: Control, cfg: SolverConfig, *, eta: float = 0.0, eps: float = 0.0,
              increments: np.ndarray | None = None, substeps: int | None = None,
              keep: str = "all", reference: np.ndarray | None = None,
              energy: bool = False) -> dict[str, Any]:
    """Advance raw arrays through the control horizon.

    ``u0`` may carry a leading batch axis; ``increments`` then has shape
    ``(batch, steps, K)``, otherwise ``(steps, K)``.  ``keep`` is ``"all"``,
    ``"nodes"`` or ``"final"``.  With ``reference`` (node snapshots of a
    trajectory on the same control grid) the running L1([0,T];L1) distance to
    it is accumulated per batch member.
    """
    if noise.K != control.K:
        raise DomainError(f"control has {control.K} modes but noise has {noise.K}")
    if noise.dim != grid.dim or flux.dim != grid.dim:
        raise DomainError("grid, flux and noise dimensions differ")
    m = substeps if substeps is not None else substeps_for(u0, grid, flux, control, cfg, eta)
    n = control.n_steps
    dt = control.dt / m
    total = n * m
    if eps > 0:
        if increments is None:
            raise DomainError("stochastic integration needs noise increments")
        if increments.shape[-2] != total:
            raise DomainError(f"noise path has {increments.shape[-2]} steps, need {total}")
    noise_grid = noise.on_grid(grid)
    zero_flux = _is_zero_flux(flux)
    dV = grid.cell_volume
    spatial_axes = tuple(range(u0.ndim - grid.dim, u0.ndim))

    u = np.array(u0, dtype=float)
    times = [0.0]
    snaps = [u.copy()] if keep != "final" else []
    gap = None if reference is None else np.zeros(u.shape[: u.ndim - grid.dim])
    sup_l2 = float(np.max(np.sum(u ** 2, axis=spatial_axes) * dV)) if energy else 0.0
    dissipation = 0.0
    step = 0
    for j in range(n):
        h = control.coeffs[j]
        for _ in range(m):
            _check_step(flux, u, grid, eta, dt)
            if energy and eta > 0:
                dissipation += eta * dt * float(np.max(np.sum(grad_sq(u, grid), axis=spatial_axes) * dV))
            dW = None
            if eps > 0:
                dW = increments[..., step, :]
            u = _advance(u, flux, noise, noise_grid, grid, h, dt, scheme=cfg.scheme, eta=eta,
                         eps=eps, dW=dW, zero_flux=zero_flux)
            step += 1
            max_abs = float(np.max(np.abs(u)))
            if not np.isfinite(max_abs) or max_abs > cfg.blowup:
                raise BlowUpError(
                    f"max|u| = {max_abs:.3g} exceeds {cfg.blowup:.3g} at step {step} "
                    f"(t = {step * dt:.6g}); reduce the control or check stability",
                    step, step * dt, max_abs)
            if energy:
                sup_l2 = max(sup_l2, float(np.max(np.sum(u ** 2, axis=spatial_axes) * dV)))
            if keep == "all":
                times.append(step * dt)
                snaps.append(u.copy())
        if keep == "nodes":
            times.append((j + 1) * control.dt)
            snaps.append(u.copy())
        if reference is not None:
            gap = gap + control.dt * np.sum(np.abs(u - reference[j + 1]), axis=spatial_axes) * dV
    if keep == "all":
        times = [k * dt for k in range(total + 1)]
    elif keep == "nodes":
        times = list(control.times)
    out: dict[str, Any] = {"final": u, "substeps": m, "dt": dt, "steps": total}
    if keep != "final":
        out["times"] = np.array(times)
        out["values"] = np.stack(snaps, axis=u.ndim - grid.dim) if u.ndim > grid.dim else np.stack(snaps)
    if gap is not None:
        out["l1l1_gap"] = gap
    if energy:
        out["sup_l2_sq"] = sup_l2
        out["dissipation"] = dissipation
    return out


def _as_control(h: Control | None, noise: NoiseModel, T: float | None) -> Control:
    if h is None:
        if T is None:
            raise DomainError("need a control or a horizon T")
        return Control.zeros(noise.K, T, 1)
    if T is not None and abs(h.T - T) > 1e-12 * max(1.0, T):
        raise DomainError(f"control horizon {h.T} differs from T = {T}")
    return h


def _check_u0(u0: Field):
    if not np.all(np.isfinite(u0.values)):
        raise DomainError("initial datum must be bounded")


def _trajectory(u0: Field, res: dict, cfg: SolverConfig, meta: dict,
                diagnostics: dict | None = None) -> Trajectory:
    stride = res["substeps"] if cfg.store == "all" else 1
    return Trajectory(u0.grid, res["times"], res["values"], node_stride=stride,
                      meta=meta, diagnostics=diagnostics or {})


def solve_skeleton(u0: Field, flux: FluxModel, noise: NoiseModel, h: Control | None,
                   T: float | None = None, cfg: SolverConfig | None = None) -> Trajectory:
    """Trajectory of the controlled conservation law driven by ``h``."""
    cfg = cfg or SolverConfig()
    _check_u0(u0)
    h = _as_control(h, noise, T)
    res = integrate(u0.values, u0.grid, flux, noise, h, cfg, keep=cfg.store)
    meta = {"solver": "skeleton", "cfg": cfg, "flux": flux, "noise": noise, "control": h,
            "dt": res["dt"]}
    return _trajectory(u0, res, cfg, meta)


def solve_parabolic(u0: Field, flux: FluxModel, noise: NoiseModel, h: Control | None,
                    T: float | None = None, eta: float = 0.0, R: float | None = None,
                    cfg: SolverConfig | None = None) -> Trajectory:
    """Viscous, optionally truncated, skeleton trajectory with energy diagnostics.

    ``diagnostics`` holds ``sup_l2_sq`` (max over steps of ``||u||_2^2``),
    ``dissipation`` (``eta * int ||grad u||^2 dt`` by left-point steps) and
    their sum ``energy``.
    """
    cfg = cfg or SolverConfig()
    if eta < 0:
        raise DomainError("viscosity must be >= 0")
    _check_u0(u0)
    h = _as_control(h, noise, T)
    if R is not None and math.isfinite(R):
        flux = flux_truncate(flux, R)
    res = integrate(u0.values, u0.grid, flux, noise, h, cfg, eta=eta, keep=cfg.store,
                    energy=True)
    diag = {"sup_l2_sq": res["sup_l2_sq"], "dissipation": res["dissipation"],
            "energy": res["sup_l2_sq"] + res["dissipation"]}
    meta = {"solver": "parabolic", "cfg": replace(cfg, viscosity_eta=eta, truncation_R=R),
            "flux": flux, "noise": noise, "control": h, "eta": eta, "dt": res["dt"]}
    return _trajectory(u0, res, cfg, meta, diag)


def l1l1_distance(a: Trajectory, b: Trajectory) -> float:
    """``dt * sum_j ||a(t_j) - b(t_j)||_L1`` over the shared control nodes ``t_1..t_n``."""
    ta, tb = a.node_times(), b.node_times()
    if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise DomainError("trajectories do not share control nodes")
    if a.grid != b.grid:
        raise DomainError("trajectories live on different grids")
    dt = ta[1] - ta[0]
    va, vb = a.node_values(), b.node_values()
    axes = tuple(range(1, va.ndim))
    dists = np.sum(np.abs(va[1:] - vb[1:]), axis=axes) * a.grid.cell_volume
    return float(dt * np.sum(dists))

# }}}
