r"""Kinetic formulation toolkit.

A field ``u`` is lifted to its equilibrium kinetic function
:math:`f(x, \xi) = 1_{u(x) > \xi}` on a uniform xi-grid whose nodes act as
midpoints of cells of width ``dxi``.  On top of the lift this module provides
the kinetic form of the L1 distance, the mollified doubling-of-variables
functional, the explicit kinetic measure of viscous runs and the weak-form
residual of the heat-equation kinetic identity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CostError, DomainError, RangeError
from .hyperbolic import (SolverConfig, Trajectory, _is_zero_flux, grad_sq, solve_skeleton,
                         substeps_for)
from .models import Control, Field, FluxModel, NoiseModel, TorusGrid, torus_displacement

__all__ = [
    "XiGrid",
    "KineticSnapshot",
    "DiscreteKineticMeasure",
    "MollifierPair",
    "TestFunction",
    "ContractionReport",
    "kinetic_lift",
    "l1_via_kinetic",
    "mollifier_pair",
    "mollified_modulus",
    "doubling_functional",
    "default_delta",
    "parabolic_kinetic_measure",
    "heat_kinetic_residual",
    "contraction_check",
]

DOUBLING_BUDGET = 256.0 ** 2 * 128.0 ** 2


@dataclass(frozen=True)
class XiGrid:
    xi_min: float
    xi_max: float
    points: int

    def __post_init__(self):
        if not self.xi_min < self.xi_max:
            raise DomainError("xi_min must be < xi_max")
        if self.points < 16:
            raise DomainError("xi-grid needs at least 16 points")

    @classmethod
    def bracketing(cls, *fields, points: int = 64, margin: float = 1.0) -> XiGrid:
        lo = min(float(np.min(_values(f))) for f in fields) - margin
        hi = max(float(np.max(_values(f))) for f in fields) + margin
        return cls(lo, hi, points)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.xi_min, self.xi_max, self.points)

    @property
    def dxi(self) -> float:
        return (self.xi_max - self.xi_min) / (self.points - 1)

    def check_brackets(self, values) -> None:
        v = np.asarray(values)
        lo, hi = float(np.min(v)), float(np.max(v))
        if self.xi_min > lo - 1.0 or self.xi_max < hi + 1.0:
            raise RangeError(
                f"xi-grid [{self.xi_min}, {self.xi_max}] does not bracket the field range "
                f"[{lo}, {hi}] with unit margin")


def _values(f) -> np.ndarray:
    if isinstance(f, Field):
        return f.values
    if isinstance(f, Trajectory):
        return f.values
    return np.asarray(f, dtype=float)


@dataclass(frozen=True)
class KineticSnapshot:
    grid: TorusGrid
    xi: XiGrid
    f: np.ndarray
    u_source: Field

    def reconstruct(self) -> Field:
        """Midpoint-rule inverse of the lift: ``u ~ xi_min - dxi/2 + int f dxi``."""
        dxi = self.xi.dxi
        return Field(self.grid, self.xi.xi_min - 0.5 * dxi + dxi * np.sum(self.f, axis=-1))

    def young_cells(self) -> np.ndarray:
        """Index of the xi-cell carrying the Dirac mass of the Young measure at each x."""
        return np.sum(self.f, axis=-1) - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "xi", "f"])
        xs = self.grid.centers.reshape(-1, self.grid.dim)
        nodes = self.xi.nodes
        flat = self.f.reshape(-1, self.xi.points)
        for xc, row in zip(xs, flat):
            x = ";".join(f"{c:.17g}" for c in xc)
            for z, val in zip(nodes, row):
                w.writerow([x, f"{z:.17g}", int(val)])
        return buf.getvalue()


def kinetic_lift(u: Field, xi: XiGrid) -> KineticSnapshot:
    """Equilibrium lift ``f(x, xi_j) = 1 if u(x) > xi_j else 0``."""
    xi.check_brackets(u.values)
    f = (u.values[..., None] > xi.nodes).astype(np.uint8)
    f.setflags(write=False)
    return KineticSnapshot(u.grid, xi, f, u)


def l1_via_kinetic(u1: Field, u2: Field, xi: XiGrid) -> tuple[float, float]:
    """``(||(u1-u2)^+||_1, ||(u1-u2)^-||_1)`` from ``int int f1 (1-f2)`` and its mirror."""
    if u1.grid != u2.grid:
        raise DomainError("fields live on different grids")
    f1 = kinetic_lift(u1, xi).f.astype(float)
    f2 = kinetic_lift(u2, xi).f.astype(float)
    w = u1.grid.cell_volume * xi.dxi
    pos = float(np.sum(f1 * (1.0 - f2)) * w)
    neg = float(np.sum((1.0 - f1) * f2) * w)
    return pos, neg


# {{{ mollifiers

def _bump(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierPair:
    """Discrete kernels: ``rho`` over torus offsets, ``psi`` over xi offsets.

    ``rho[i]`` is the weight of the displacement ``i * dx`` (wrapped), and
    ``psi[l + P - 1]`` that of the xi offset ``l * dxi`` for
    ``l = -(P-1), ..., P-1``.
    """

    gamma: float
    delta: float
    grid: TorusGrid
    xi: XiGrid
    rho: np.ndarray
    psi: np.ndarray

    @property
    def psi_offsets(self) -> np.ndarray:
        P = self.xi.points
        return np.arange(-(P - 1), P) * self.xi.dxi

    def rho_offsets(self) -> np.ndarray:
        """Wrapped displacement of each offset cell, shape ``grid.shape + (dim,)``."""
        idx = np.stack(np.meshgrid(*[np.arange(self.grid.cells_per_axis)] * self.grid.dim,
                                   indexing="ij"), axis=-1)
        return torus_displacement(idx * self.grid.cell_width, 0.0)

    def rho_matrix(self) -> np.ndarray:
        """Circulant matrix ``R[x, y] = rho(x - y)`` over flattened cells."""
        n = self.grid.cells_per_axis
        idx = np.stack(np.meshgrid(*[np.arange(n)] * self.grid.dim, indexing="ij"),
                       axis=-1).reshape(-1, self.grid.dim)
        diff = (idx[:, None, :] - idx[None, :, :]) % n
        return self.rho[tuple(diff[..., a] for a in range(self.grid.dim))]

    def psi_matrix(self) -> np.ndarray:
        """Toeplitz matrix ``Psi[j, l] = psi(xi_j - xi_l)``."""
        P = self.xi.points
        j = np.arange(P)
        return self.psi[(j[:, None] - j[None, :]) + P - 1]


def mollifier_pair(gamma: float, delta: float, grid: TorusGrid, xi: XiGrid) -> MollifierPair:
    """Scaled smooth bumps with unit discrete mass, supported in ``|x|<gamma``, ``|s|<delta``."""
    if not (0 < gamma < 0.5):
        raise DomainError("gamma must lie in (0, 1/2)")
    if not delta > 0:
        raise DomainError("delta must be > 0")
    n = grid.cells_per_axis
    idx = np.stack(np.meshgrid(*[np.arange(n)] * grid.dim, indexing="ij"), axis=-1)
    disp = torus_displacement(idx * grid.cell_width, 0.0)
    r = np.linalg.norm(disp, axis=-1) / gamma
    rho = _bump(r)
    if rho.sum() == 0:
        rho = np.zeros(grid.shape)
        rho[(0,) * grid.dim] = 1.0
    rho = rho / (rho.sum() * grid.cell_volume)

    P = xi.points
    s = np.arange(-(P - 1), P) * xi.dxi
    psi = _bump(s / delta)
    if psi.sum() == 0:
        psi = np.zeros(2 * P - 1)
        psi[P - 1] = 1.0
    psi = 0.5 * (psi + psi[::-1])
    psi = psi / (psi.sum() * xi.dxi)
    rho.setflags(write=False)
    psi.setflags(write=False)
    return MollifierPair(gamma, delta, grid, xi, rho, psi)


def default_delta(gamma: float) -> float:
    """Coupling ``delta = gamma^(4/3)`` between the x- and xi-mollification scales."""
    return gamma ** (4.0 / 3.0)


def mollified_modulus(u: Field, gamma: float) -> float:
    """``int int rho_gamma(x - y) |u(x) - u(y)| dx dy`` on the grid."""
    xi = XiGrid.bracketing(u, points=16)
    mp = mollifier_pair(gamma, 1.0, u.grid, xi)
    v = u.values.reshape(-1)
    R = mp.rho_matrix()
    return float(np.sum(R * np.abs(v[:, None] - v[None, :])) * u.grid.cell_volume ** 2)

# }}}


def doubling_functional(u1: Field, u2: Field, gamma: float, delta: float | None,
                        xi: XiGrid) -> float:
    r"""Dense quadrature of
    :math:`\iiiint \rho_\gamma(x-y)\psi_\delta(\xi-\zeta)(f_1\bar f_2 + \bar f_1 f_2)`.

    The sum is organised as xi-convolutions followed by a matrix product,
    which evaluates exactly the same quadrature as the naive four-fold loop.
    """
    if u1.grid != u2.grid:
        raise DomainError("fields live on different grids")
    if delta is None:
        delta = default_delta(gamma)
    nx = u1.grid.n_cells
    ops = float(nx) ** 2 * float(xi.points) ** 2
    if ops > DOUBLING_BUDGET:
        raise CostError(
            f"doubling functional on {nx} cells x {xi.points} xi-points needs ~{ops:.3g} "
            f"kernel evaluations, above the desk-scale budget {DOUBLING_BUDGET:.3g}",
            ops, DOUBLING_BUDGET)
    mp = mollifier_pair(gamma, delta, u1.grid, xi)
    f1 = kinetic_lift(u1, xi).f.reshape(nx, -1).astype(float)
    f2 = kinetic_lift(u2, xi).f.reshape(nx, -1).astype(float)
    dxi = xi.dxi
    Psi = mp.psi_matrix()
    smooth_f2bar = (1.0 - f2) @ Psi.T * dxi
    smooth_f2 = f2 @ Psi.T * dxi
    inner = (f1 @ smooth_f2bar.T + (1.0 - f1) @ smooth_f2.T) * dxi
    R = mp.rho_matrix()
    return float(np.sum(R * inner) * u1.grid.cell_volume ** 2)


# {{{ kinetic measure

@dataclass(frozen=True)
class DiscreteKineticMeasure:
    """Point masses ``mass[i]`` at ``(cells[i], time_index[i], xi[i])``."""

    grid: TorusGrid
    cells: np.ndarray
    time_index: np.ndarray
    times: np.ndarray
    xi: np.ndarray
    mass: np.ndarray

    @classmethod
    def empty(cls, grid: TorusGrid) -> DiscreteKineticMeasure:
        z = np.zeros(0)
        return cls(grid, np.zeros((0, grid.dim), dtype=int), z.astype(int), z, z, z)

    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    def tail_mass(self, R: float) -> float:
        return float(np.sum(self.mass[np.abs(self.xi) > R]))

    def pair(self, phi) -> float:
        """``m(phi)`` for ``phi(x, t, xi)`` vectorised over arrays."""
        if len(self.mass) == 0:
            return 0.0
        x = (self.cells + 0.5) * self.grid.cell_width
        return float(np.sum(self.mass * phi(x, self.times, self.xi)))

    def binned(self, xi: XiGrid) -> np.ndarray:
        """Mass per xi-cell on ``xi`` (nodes as cell midpoints)."""
        edges = np.concatenate([xi.nodes - 0.5 * xi.dxi, [xi.xi_max + 0.5 * xi.dxi]])
        hist, _ = np.histogram(self.xi, bins=edges, weights=self.mass)
        return hist

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "t", "xi", "mass"])
        x = (self.cells + 0.5) * self.grid.cell_width
        for xc, t, z, m in zip(x, self.times, self.xi, self.mass):
            w.writerow([";".join(f"{c:.17g}" for c in xc), f"{t:.17g}", f"{z:.17g}",
                        f"{m:.17g}"])
        return buf.getvalue()


def _every_step(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    vals = traj.values
    dts = np.diff(traj.times)
    cfg = traj.meta.get("cfg")
    if isinstance(cfg, SolverConfig) and cfg.store != "all":
        raise DomainError("kinetic diagnostics need every solver step stored (store='all')")
    return vals, dts


def parabolic_kinetic_measure(traj: Trajectory, eta: float, xi: XiGrid) -> DiscreteKineticMeasure:
    """Explicit measure ``eta |grad u|^2 delta_{u = xi}`` of a viscous run.

    Each stored step ``n < N`` contributes mass ``eta |grad u^n(x)|^2 dV dt_n``
    at ``xi = u^n(x)``, the left-point sum also used for the solver's recorded
    dissipation.
    """
    if eta < 0:
        raise DomainError("viscosity must be >= 0")
    grid = traj.grid
    if eta == 0:
        return DiscreteKineticMeasure.empty(grid)
    vals, dts = _every_step(traj)
    xi.check_brackets(vals)
    pre = vals[:-1]
    g2 = grad_sq(pre, grid)
    mass = eta * g2 * grid.cell_volume * dts.reshape((-1,) + (1,) * grid.dim)
    keep = mass > 0
    tix, *cells = np.nonzero(keep)
    cells = np.stack(cells, axis=-1)
    return DiscreteKineticMeasure(grid, cells, tix, traj.times[tix], pre[keep], mass[keep])

# }}}


# {{{ weak-form residual

@dataclass(frozen=True)
class TestFunction:
    r"""Separable test function :math:`\alpha(x)\chi(\xi)`.

    ``alpha`` is ``const``, ``cos`` or ``sin`` of ``2 pi k.x``; ``chi`` is the
    raised-cosine bump of half-width ``chi_width`` centred at ``chi_center``.
    """

    __test__ = False

    alpha_kind: str = "cos"
    wavevector: tuple[int, ...] = (1,)
    chi_center: float = 0.0
    chi_width: float = 1.0

    def __post_init__(self):
        if self.alpha_kind not in ("const", "cos", "sin"):
            raise DomainError(f"unsupported test function alpha kind {self.alpha_kind!r}")
        if not self.chi_width > 0:
            raise DomainError("chi_width must be > 0")

    def alpha(self, x: np.ndarray) -> np.ndarray:
        if self.alpha_kind == "const":
            return np.ones(x.shape[:-1])
        phase = 2 * np.pi * (x @ np.asarray(self.wavevector, dtype=float))
        return np.cos(phase) if self.alpha_kind == "cos" else np.sin(phase)

    def laplacian_alpha(self, x: np.ndarray) -> np.ndarray:
        if self.alpha_kind == "const":
            return np.zeros(x.shape[:-1])
        k2 = (2 * np.pi) ** 2 * float(np.sum(np.square(self.wavevector)))
        return -k2 * self.alpha(x)

    def _s(self, xi):
        return (np.asarray(xi, dtype=float) - self.chi_center) / self.chi_width

    def chi(self, xi) -> np.ndarray:
        s = self._s(xi)
        return np.where(np.abs(s) < 1, 0.5 * (1 + np.cos(np.pi * s)), 0.0)

    def dchi(self, xi) -> np.ndarray:
        s = self._s(xi)
        return np.where(np.abs(s) < 1, -0.5 * np.pi / self.chi_width * np.sin(np.pi * s), 0.0)

    def theta(self, u) -> np.ndarray:
        """``int_{-inf}^u chi``, i.e. the exact xi-integral of ``1_{u > xi} chi(xi)``."""
        s = np.clip(self._s(u), -1.0, 1.0)
        w = self.chi_width
        return 0.5 * w * (s + 1) + 0.5 * w / np.pi * np.sin(np.pi * s)


def heat_kinetic_residual(traj: Trajectory, phi: TestFunction, xi: XiGrid) -> float:
    r"""Absolute discrete residual of the kinetic identity for a pure heat run.

    With :math:`\psi = \alpha\chi` and the explicit measures
    :math:`m = \eta|\nabla u|^2\delta_{u=\xi}`, :math:`\nu = \delta_{u=\xi}`
    the identity tested at the final time reads

    .. math::

        \langle f(T),\psi\rangle = \langle f_0,\psi\rangle
        + \eta\int_0^T\langle f,\Delta\psi\rangle
        + \int_0^T\!\!\int \psi(x,u)\,\Phi(u)\,(h\,dt + \sqrt{\varepsilon}dW)
        + \tfrac{\varepsilon}{2}\int_0^T\!\!\int\partial_\xi\psi(x,u)G^2
        - m(\partial_\xi\psi).

    Time integrals are left-point sums over the stored solver steps (the Ito
    convention of the stepper) and xi-pairings of the indicator use the exact
    antiderivative of ``chi``.
    """
    if not isinstance(phi, TestFunction):
        raise DomainError("unsupported test function specification")
    flux = traj.meta.get("flux")
    if flux is None or not _is_zero_flux(flux):
        raise DomainError("heat residual needs a run with zero flux")
    eta = float(traj.meta.get("eta", 0.0))
    if eta <= 0:
        raise DomainError("heat residual needs a viscous run (eta > 0)")
    if phi.wavevector and len(phi.wavevector) != traj.grid.dim:
        raise DomainError("test function wavevector dimension differs from the grid")
    noise: NoiseModel = traj.meta["noise"]
    control: Control = traj.meta["control"]
    eps = float(traj.meta.get("eps", 0.0))
    vals, dts = _every_step(traj)
    xi.check_brackets(vals)

    grid = traj.grid
    dV = grid.cell_volume
    x = grid.centers
    alpha = phi.alpha(x)
    lap_alpha = phi.laplacian_alpha(x)
    ng = noise.on_grid(grid)
    stride = traj.node_stride
    pre = vals[:-1]
    dt_b = dts.reshape((-1,) + (1,) * grid.dim)

    lhs = np.sum(alpha * phi.theta(vals[-1])) * dV
    rhs = np.sum(alpha * phi.theta(vals[0])) * dV
    rhs += eta * np.sum(dt_b * phi.theta(pre) * lap_alpha) * dV

    coupling = noise.coupling(pre)
    chi_u = phi.chi(pre)
    dchi_u = phi.dchi(pre)
    n_steps = len(pre)
    h_idx = np.arange(n_steps) // stride
    h = control.coeffs[h_idx]                                   # (steps, K)
    src = np.tensordot(h, ng, axes=(1, 0))                      # (steps, *shape)
    rhs += np.sum(dt_b * alpha * chi_u * coupling * src) * dV
    if eps > 0:
        path = traj.meta["noise_path"]
        dW = path.increments[:n_steps]
        noise_src = np.tensordot(dW, ng, axes=(1, 0))
        rhs += math.sqrt(eps) * np.sum(alpha * chi_u * coupling * noise_src) * dV
        G2 = np.sum(ng ** 2, axis=0) * coupling ** 2
        rhs += 0.5 * eps * np.sum(dt_b * alpha * dchi_u * G2) * dV
    rhs -= eta * np.sum(dt_b * alpha * dchi_u * grad_sq(pre, grid)) * dV
    return float(abs(lhs - rhs))

# }}}


@dataclass(frozen=True)
class ContractionReport:
    ratio: float
    bound: float
    max_distance: float
    initial_distance: float
    distances: np.ndarray

    @property
    def violated(self) -> bool:
        return self.ratio > self.bound


def contraction_check(u0_a: Field, u0_b: Field, h: Control, flux: FluxModel,
                      noise: NoiseModel, T: float | None = None, M: float | None = None,
                      cfg: SolverConfig | None = None) -> ContractionReport:
    """Run two skeleton solutions with the same control and compare L1 growth.

    The reported bound is ``exp(2 sqrt(D1) (T + M))``.  Identical initial data
    give ``ratio = 0``; ``max_distance`` then measures discrete uniqueness.
    """
    T = h.T if T is None else T
    if M is None:
        M = h.norm_sq()
    if not h.in_ball(M):
        raise DomainError(f"control has squared norm {h.norm_sq():.6g} > M = {M}")
    cfg = cfg or SolverConfig()
    if cfg.substeps is None:
        # both runs must share the time grid; take the finer of the two choices
        m = max(substeps_for(u.values, u.grid, flux, h, cfg, 0.0) for u in (u0_a, u0_b))
        cfg = replace(cfg, substeps=m)
    ta = solve_skeleton(u0_a, flux, noise, h, T, cfg)
    tb = solve_skeleton(u0_b, flux, noise, h, T, cfg)
    axes = tuple(range(1, ta.values.ndim))
    d = np.sum(np.abs(ta.values - tb.values), axis=axes) * u0_a.grid.cell_volume
    d0 = float(d[0])
    dmax = float(np.max(d))
    ratio = 0.0 if d0 == 0 else dmax / d0
    bound = math.exp(2.0 * math.sqrt(noise.D1) * (T + M))
    return ContractionReport(ratio, bound, dmax, d0, d)
