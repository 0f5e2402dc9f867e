"""Domain types: torus grids, fields, flux and noise models, controls.

Every type here is immutable after construction.  Array fields are stored as
read-only numpy arrays so instances can be shared freely between threads.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError

__all__ = [
    "TorusGrid",
    "Field",
    "FluxModel",
    "NoiseModel",
    "Control",
    "BoundsReport",
    "flux_eval",
    "flux_truncate",
    "noise_eval",
    "certify_bounds",
    "control_norm_sq",
]


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# {{{ grid and field

@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell-centred grid on the unit torus ``[0, 1)^dim``."""

    dim: int
    cells_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        if self.cells_per_axis < 4:
            raise DomainError(
                f"cells_per_axis must be >= 4, got {self.cells_per_axis}")

    @property
    def cell_width(self) -> float:
        return 1.0 / self.cells_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.cell_width ** self.dim

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``shape + (dim,)``."""
        x = (np.arange(self.cells_per_axis) + 0.5) * self.cell_width
        mesh = np.meshgrid(*([x] * self.dim), indexing="ij")
        out = np.stack(mesh, axis=-1)
        out.setflags(write=False)
        return out

    def neighbor(self, index: Sequence[int], axis: int, offset: int) -> tuple[int, ...]:
        idx = list(index)
        idx[axis] = (idx[axis] + offset) % self.cells_per_axis
        return tuple(idx)

    def total_measure(self) -> float:
        return float(np.sum(np.full(self.shape, self.cell_volume)))


def torus_displacement(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Shortest signed displacement ``x - y`` on the unit torus, per axis."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return d - np.round(d)


@dataclass(frozen=True)
class Field:
    """Cell values of a scalar function on a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.n_cells:
            raise DomainError(
                f"field has {vals.size} values, grid has {self.grid.n_cells} cells")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", _frozen_array(vals))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable[..., np.ndarray]) -> Field:
        """Sample ``fn(x1[, x2])`` at cell centres."""
        c = grid.centers
        return cls(grid, fn(*[c[..., i] for i in range(grid.dim)]))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> Field:
        return cls(grid, np.full(grid.shape, float(value)))

    def mean(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.grid.cell_volume)

    def l1_distance(self, other: Field) -> float:
        if other.grid != self.grid:
            raise DomainError("fields live on different grids")
        return float(np.sum(np.abs(self.values - other.values)) * self.grid.cell_volume)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

# }}}


# {{{ flux

@dataclass(frozen=True)
class FluxModel:
    """Polynomial flux ``A: R -> R^dim`` with optional linear truncation.

    ``coeffs[axis]`` lists the ascending-power coefficients of ``A_axis``.
    When ``truncation_R`` is set, ``A`` is replaced outside ``[-R, R]`` by its
    tangent line at ``+-R``.
    """

    kind: str
    coeffs: tuple[tuple[float, ...], ...]
    truncation_R: float | None = None
    growth_C: float = field(default=0.0)
    growth_p: float = field(default=2.0)

    def __post_init__(self):
        if self.kind not in ("burgers", "linear", "polynomial"):
            raise DomainError(f"unknown flux kind {self.kind!r}")
        coeffs = tuple(tuple(float(c) for c in axis) or (0.0,) for axis in self.coeffs)
        if len(coeffs) not in (1, 2):
            raise DomainError("flux must have one coefficient list per axis (dim 1 or 2)")
        object.__setattr__(self, "coeffs", coeffs)
        if self.truncation_R is not None and not self.truncation_R > 0:
            raise DomainError(f"truncation radius must be > 0, got {self.truncation_R}")
        if self.growth_C <= 0:
            C, p = _polynomial_growth_constants(coeffs)
            object.__setattr__(self, "growth_C", C)
            object.__setattr__(self, "growth_p", p)

    # constructors

    @classmethod
    def burgers(cls, dim: int = 1) -> FluxModel:
        return cls("burgers", ((0.0, 0.0, 0.5),) * dim)

    @classmethod
    def linear(cls, c: float | Sequence[float]) -> FluxModel:
        cs = np.atleast_1d(np.asarray(c, dtype=float))
        return cls("linear", tuple((0.0, float(ci)) for ci in cs))

    @classmethod
    def zero(cls, dim: int = 1) -> FluxModel:
        return cls.linear([0.0] * dim)

    @classmethod
    def polynomial(cls, coeffs: Sequence[float] | Sequence[Sequence[float]],
                   dim: int = 1) -> FluxModel:
        arr = list(coeffs)
        if arr and isinstance(arr[0], (list, tuple, np.ndarray)):
            per_axis = tuple(tuple(a) for a in arr)
        else:
            per_axis = (tuple(arr),) * dim
        return cls("polynomial", per_axis)

    # evaluation

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    @cached_property
    def _polys(self) -> tuple[Polynomial, ...]:
        return tuple(Polynomial(c) for c in self.coeffs)

    @cached_property
    def _derivs(self) -> tuple[Polynomial, ...]:
        return tuple(p.deriv() for p in self._polys)

    def flux(self, u, axis: int = 0) -> np.ndarray:
        """``A_axis(u)``, elementwise."""
        u = np.asarray(u, dtype=float)
        p = self._polys[axis]
        R = self.truncation_R
        if R is None:
            return p(u)
        uc = np.clip(u, -R, R)
        return p(uc) + self._derivs[axis](uc) * (u - uc)

    def speed(self, u, axis: int = 0) -> np.ndarray:
        """``a_axis(u) = A_axis'(u)``, elementwise."""
        u = np.asarray(u, dtype=float)
        if self.truncation_R is not None:
            u = np.clip(u, -self.truncation_R, self.truncation_R)
        return self._derivs[axis](u)

    def max_speed(self, lo: float, hi: float, axis: int = 0) -> float:
        """Maximum of ``|a_axis|`` over ``[lo, hi]``."""
        if self.truncation_R is not None:
            R = self.truncation_R
            lo, hi = min(max(lo, -R), R), min(max(hi, -R), R)
        cands = [lo, hi]
        for r in self._critical_points(self._derivs[axis]):
            if lo < r < hi:
                cands.append(r)
        return float(np.max(np.abs(self._derivs[axis](np.array(cands)))))

    @staticmethod
    def _critical_points(a: Polynomial) -> list[float]:
        da = a.deriv()
        if da.degree() < 1:
            return []
        return [float(r.real) for r in da.roots() if abs(r.imag) < 1e-12]

    @cached_property
    def sign_intervals(self) -> tuple[tuple[tuple[float, float, float], ...], ...]:
        """Per axis, the maximal intervals ``(lo, hi, sign)`` where ``a`` keeps a sign."""
        out = []
        R = self.truncation_R
        for a in self._derivs:
            if a.degree() >= 1 and np.any(a.coef[1:] != 0):
                roots = sorted(float(r.real) for r in a.roots() if abs(r.imag) < 1e-12)
            else:
                roots = []
            if R is not None:
                roots = [r for r in roots if -R < r < R] + [-R, R]
            bps = sorted(set(roots))
            edges = [-np.inf] + bps + [np.inf]
            ivs = []
            for lo, hi in zip(edges[:-1], edges[1:]):
                if np.isinf(lo) and np.isinf(hi):
                    mid = 0.0
                elif np.isinf(lo):
                    mid = hi - 1.0
                elif np.isinf(hi):
                    mid = lo + 1.0
                else:
                    mid = 0.5 * (lo + hi)
                ivs.append((lo, hi, float(np.sign(self.speed(mid, len(out))))))
            out.append(tuple(ivs))
        return tuple(out)

    @cached_property
    def extrema_candidates(self) -> tuple[tuple[float, ...], ...]:
        """Per axis, the points where ``a`` changes sign (interior extrema of ``A``)."""
        return tuple(
            tuple(lo for lo, _, _ in ivs[1:])
            for ivs in self.sign_intervals)


def _polynomial_growth_constants(coeffs) -> tuple[float, float]:
    # |a'(s)| <= sum_j |c_j| j (j-1) |s|^(j-2) <= C (1 + |s|^(p-1)) with p-1 >= max(j-2, 1)
    Cs = []
    pmax = 2.0
    for axis in coeffs:
        C = 0.0
        for j, c in enumerate(axis):
            if j >= 2:
                C += abs(c) * j * (j - 1)
                pmax = max(pmax, float(j - 1))
        Cs.append(C)
    C = math.sqrt(sum(c * c for c in Cs))
    return (C if C > 0 else 1.0), pmax


def flux_eval(flux: FluxModel, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A(xi), a(xi))`` as length-``dim`` vectors."""
    if not np.isfinite(xi):
        raise DomainError(f"flux argument must be finite, got {xi}")
    A = np.array([float(flux.flux(xi, ax)) for ax in range(flux.dim)])
    a = np.array([float(flux.speed(xi, ax)) for ax in range(flux.dim)])
    return A, a


def flux_truncate(flux: FluxModel, R: float) -> FluxModel:
    """Flux equal to ``flux`` on ``[-R, R]`` and extended linearly with the boundary slope."""
    if not (R > 0) or not np.isfinite(R):
        raise DomainError(f"truncation radius must be finite and > 0, got {R}")
    return FluxModel(flux.kind, flux.coeffs, truncation_R=float(R),
                     growth_C=flux.growth_C, growth_p=flux.growth_p)

# }}}


# {{{ noise

@dataclass(frozen=True)
class NoiseModel:
    r"""Finite family :math:`g_k(x, u) = \sigma_k \phi_k(x) (b_0 + b_1 u)`.

    ``profiles`` holds ``(kind, wavevector)`` pairs with ``kind`` one of
    ``"const"``, ``"cos"``, ``"sin"``.  ``D0`` and ``D1`` are computed from
    the coefficients when not supplied.  The state-Lipschitz part of ``D1``
    grows with ``|u|`` when ``b1 != 0`` and a profile is non-constant, so it
    is certified only on the window ``|u| <= u_window``.
    """

    amplitudes: tuple[float, ...]
    profiles: tuple[tuple[str, tuple[int, ...]], ...]
    b0: float = 1.0
    b1: float = 0.0
    u_window: float = 10.0
    D0: float | None = None
    D1: float | None = None

    def __post_init__(self):
        amps = tuple(float(s) for s in self.amplitudes)
        profs = tuple((str(k), tuple(int(w) for w in wv)) for k, wv in self.profiles)
        if len(amps) != len(profs) or not amps:
            raise DomainError("need one profile per amplitude and at least one mode")
        dims = {len(wv) for _, wv in profs}
        if len(dims) != 1 or dims.pop() not in (1, 2):
            raise DomainError("all wavevectors must share dimension 1 or 2")
        for kind, _ in profs:
            if kind not in ("const", "cos", "sin"):
                raise DomainError(f"unknown profile kind {kind!r}")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "profiles", profs)
        if self.D0 is None:
            object.__setattr__(self, "D0", self._bound_D0())
        if self.D1 is None:
            object.__setattr__(self, "D1", self._bound_D1())

    @classmethod
    def trigonometric(cls, K: int, sigma: float, q: float = 1.0, b0: float = 1.0,
                      b1: float = 0.0, dim: int = 1, u_window: float = 10.0) -> NoiseModel:
        """Mode 1 constant, then cos/sin pairs of increasing frequency.

        Amplitudes decay as ``sigma * k**(-q)``.  In 2D successive pairs
        alternate between the two axes.
        """
        if K < 1:
            raise DomainError("K must be >= 1")
        if q < 1:
            raise DomainError("amplitude decay exponent q must be >= 1")
        profiles = []
        for k in range(1, K + 1):
            if k == 1:
                profiles.append(("const", (0,) * dim))
                continue
            j = k // 2
            wv = [0] * dim
            wv[(j - 1) % dim] = j
            profiles.append(("cos" if k % 2 == 0 else "sin", tuple(wv)))
        amps = tuple(sigma * k ** (-q) for k in range(1, K + 1))
        return cls(amps, tuple(profiles), b0=b0, b1=b1, u_window=u_window)

    @classmethod
    def additive(cls, sigma: float, dim: int = 1) -> NoiseModel:
        return cls((sigma,), (("const", (0,) * dim),), b0=1.0, b1=0.0)

    @property
    def K(self) -> int:
        return len(self.amplitudes)

    @property
    def dim(self) -> int:
        return len(self.profiles[0][1])

    def profile_values(self, x: np.ndarray) -> np.ndarray:
        """``phi_k(x)`` for points ``x`` of shape ``(..., dim)``; result ``(..., K)``."""
        x = np.asarray(x, dtype=float)
        cols = []
        for kind, wv in self.profiles:
            if kind == "const":
                cols.append(np.ones(x.shape[:-1]))
                continue
            phase = 2.0 * np.pi * (x @ np.asarray(wv, dtype=float))
            cols.append(np.cos(phase) if kind == "cos" else np.sin(phase))
        return np.stack(cols, axis=-1)

    def lipschitz_x(self) -> np.ndarray:
        """Per-mode Lipschitz constants of ``phi_k`` in the torus metric."""
        return np.array([0.0 if kind == "const" else 2.0 * np.pi * np.linalg.norm(wv)
                         for kind, wv in self.profiles])

    def on_grid(self, grid: TorusGrid) -> np.ndarray:
        """``sigma_k * phi_k`` at cell centres, shape ``(K,) + grid.shape``."""
        if grid.dim != self.dim:
            raise DomainError("noise and grid dimensions differ")
        phi = self.profile_values(grid.centers)
        return np.moveaxis(phi * np.asarray(self.amplitudes), -1, 0)

    def coupling(self, u):
        return self.b0 + self.b1 * np.asarray(u, dtype=float)

    def evaluate(self, x: np.ndarray, u) -> np.ndarray:
        """``g_k(x, u)`` broadcast over points; result ``(..., K)``."""
        phi = self.profile_values(x) * np.asarray(self.amplitudes)
        return phi * self.coupling(u)[..., None]

    def G2_on_grid(self, grid: TorusGrid, u) -> np.ndarray:
        """``sum_k g_k(x, u(x))**2`` at cell centres."""
        s2 = np.sum(self.on_grid(grid) ** 2, axis=0)
        return s2 * self.coupling(u) ** 2

    def _bound_D0(self) -> float:
        # (b0 + b1 u)^2 <= (b0^2 + b1^2)(1 + u^2); |phi_k| <= 1
        s2 = float(np.sum(np.square(self.amplitudes)))
        return s2 * (self.b0 ** 2 + self.b1 ** 2)

    def _bound_D1(self) -> float:
        amps = np.asarray(self.amplitudes)
        U = self.u_window
        x_part = float(np.sum((amps * self.lipschitz_x()) ** 2)) * (abs(self.b0) + abs(self.b1) * U) ** 2
        u_part = self.b1 ** 2 * float(np.sum(amps ** 2))
        return x_part + u_part


def noise_eval(noise: NoiseModel, x, u: float) -> np.ndarray:
    """``(g_1(x, u), ..., g_K(x, u))`` at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(x)) and np.isfinite(u)):
        raise DomainError("noise arguments must be finite")
    if x.shape != (noise.dim,):
        raise DomainError(f"point must have {noise.dim} coordinates")
    return noise.evaluate(x, np.float64(u))


@dataclass(frozen=True)
class BoundsReport:
    D0_hat: float
    D1_hat: float
    D0: float
    D1: float
    witness_D0: tuple
    witness_D1: tuple
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self):
        yield self.D0_hat
        yield self.D1_hat


def certify_bounds(noise: NoiseModel, sample_count: int = 1000, seed: int = 0) -> BoundsReport:
    """Empirical smallest growth/Lipschitz constants over a sample.

    ``D0_hat`` maximises ``G^2 / (1 + u^2)`` over a product of torus points
    and a state lattice that contains ``0`` and very large ``|u|``.
    ``D1_hat`` maximises the difference quotient over random pairs, biased
    towards small separations, with states inside ``noise.u_window``.
    """
    if sample_count < 100:
        raise DomainError("sample_count must be >= 100")
    rng = np.random.default_rng(seed)
    dim = noise.dim

    xs = np.concatenate([np.zeros((1, dim)), rng.random((sample_count - 1, dim))])
    big = np.logspace(-3, 8, 23)
    us = np.concatenate([[0.0], big, -big, rng.uniform(-10, 10, sample_count)])
    g = noise.evaluate(xs[:, None, :], us[None, :])           # (nx, nu, K)
    ratio0 = np.sum(g ** 2, axis=-1) / (1.0 + us[None, :] ** 2)
    i0 = np.unravel_index(np.argmax(ratio0), ratio0.shape)
    D0_hat = float(ratio0[i0])
    w0 = (tuple(xs[i0[0]]), float(us[i0[1]]))

    n = sample_count
    U = noise.u_window
    x = rng.random((n, dim))
    sep = 10.0 ** rng.uniform(-4, np.log10(0.5), n)
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    y = (x + sep[:, None] * direction * rng.random((n, 1))) % 1.0
    u = rng.uniform(-U, U, n)
    u[: n // 4] = np.sign(u[: n // 4]) * U
    dv = 10.0 ** rng.uniform(-4, 0, n) * rng.choice([-1.0, 1.0], n) * rng.random(n)
    v = np.clip(u + dv * U, -U, U)
    dx2 = np.sum(torus_displacement(x, y) ** 2, axis=1)
    du2 = (u - v) ** 2
    num = np.sum((noise.evaluate(x, u) - noise.evaluate(y, v)) ** 2, axis=1)
    den = dx2 + du2
    keep = den > 0
    ratio1 = np.where(keep, num / np.where(keep, den, 1.0), 0.0)
    i1 = int(np.argmax(ratio1))
    D1_hat = float(ratio1[i1])
    w1 = (tuple(x[i1]), tuple(y[i1]), float(u[i1]), float(v[i1]))

    violations = []
    tol = 1e-12
    if D0_hat > noise.D0 * (1 + tol) + tol:
        violations.append(f"D0 bound violated at x={w0[0]}, u={w0[1]}: {D0_hat} > {noise.D0}")
    if D1_hat > noise.D1 * (1 + tol) + tol:
        violations.append(
            f"D1 bound violated at x={w1[0]}, y={w1[1]}, u={w1[2]}, v={w1[3]}: "
            f"{D1_hat} > {noise.D1}")
    return BoundsReport(D0_hat, D1_hat, float(noise.D0), float(noise.D1), w0, w1,
                        tuple(violations))

# }}}


# {{{ control

@dataclass(frozen=True)
class Control:
    """Control coefficients ``h^k(t_j)`` on the uniform nodes ``t_j = j T / n``.

    The solvers hold ``h(t_j)`` constant on ``[t_j, t_{j+1})``; the last row
    only enters the trapezoid norm.
    """

    T: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 2:
            raise DomainError("control needs shape (n_steps + 1, K) with n_steps >= 1")
        if not (self.T > 0):
            raise DomainError("control horizon T must be > 0")
        if not np.all(np.isfinite(c)):
            raise DomainError("control coefficients must be finite")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "coeffs", _frozen_array(c))

    @classmethod
    def zeros(cls, K: int, T: float, n_steps: int) -> Control:
        return cls(T, np.zeros((n_steps + 1, K)))

    @classmethod
    def constant(cls, values: float | Sequence[float], T: float, n_steps: int) -> Control:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(T, np.tile(v, (n_steps + 1, 1)))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], K: int, T: float,
                      n_steps: int) -> Control:
        """``fn`` maps the node times to an array of shape ``(n + 1, K)`` or ``(n + 1,)``."""
        t = np.linspace(0.0, T, n_steps + 1)
        vals = np.asarray(fn(t), dtype=float).reshape(n_steps + 1, -1)
        if vals.shape[1] != K:
            raise DomainError(f"control function returned {vals.shape[1]} modes, expected {K}")
        return cls(T, vals)

    @property
    def K(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_steps(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def norm_sq(self) -> float:
        return control_norm_sq(self)

    def in_ball(self, M: float) -> bool:
        return self.norm_sq() <= M

    def scaled(self, c: float) -> Control:
        return Control(self.T, c * self.coeffs)

    def __add__(self, other: Control) -> Control:
        if other.coeffs.shape != self.coeffs.shape or other.T != self.T:
            raise DomainError("controls live on different time grids")
        return Control(self.T, self.coeffs + other.coeffs)

    def __sub__(self, other: Control) -> Control:
        return self + other.scaled(-1.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"h{k + 1}" for k in range(self.K)])
        for t, row in zip(self.times, self.coeffs):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text_or_path: str | Path) -> Control:
        if isinstance(text_or_path, Path) or (
                "\n" not in str(text_or_path) and Path(str(text_or_path)).exists()):
            text = Path(text_or_path).read_text(encoding="utf-8")
        else:
            text = str(text_or_path)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "t" or any(h != f"h{k + 1}" for k, h in enumerate(header[1:])):
            raise DomainError(f"control CSV header must be t,h1,...,hK, got {header}")
        data = np.array([[float(v) for v in r] for r in body])
        t = data[:, 0]
        if len(t) < 2 or abs(t[0]) > 1e-14:
            raise DomainError("control CSV must start at t=0 with at least two rows")
        T = float(t[-1])
        if not np.allclose(t, np.linspace(0.0, T, len(t)), rtol=0, atol=1e-12 * max(T, 1)):
            raise DomainError("control CSV time nodes must be uniform")
        return cls(T, data[:, 1:])


def control_norm_sq(h: Control) -> float:
    """Trapezoid value of the squared L2 norm of ``h`` over ``[0, T]``."""
    integrand = np.sum(h.coeffs ** 2, axis=1)
    return float(np.trapezoid(integrand, dx=h.dt))

# }}}
