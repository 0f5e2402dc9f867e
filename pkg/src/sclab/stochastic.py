"""Truncated cylindrical Wiener noise and the small-noise stochastic solver.

Increments come from a counter-based generator: the Philox key is built from
``(seed, mode)`` and the counter position from the step index, so any single
increment can be regenerated without replaying the stream.  Trajectory ``i``
of a Monte Carlo run uses the seed derived from ``(master_seed, i)`` alone.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .hyperbolic import (
    SolverConfig,
    Trajectory,
    _advance,
    _check_step,
    _trajectory,
    _as_control,
    _check_u0,
    integrate,
    substeps_for,
)
from .models import Control, Field, FluxModel, NoiseModel, flux_truncate

__all__ = [
    "NoisePath",
    "derive_seed",
    "sample_increments",
    "sample_batch",
    "increment_at",
    "step_controlled",
    "solve_stochastic",
    "simulate_batch",
    "thread_count",
]

_MASK64 = (1 << 64) - 1
_TWO53 = 2.0 ** -53


@dataclass(frozen=True)
class NoisePath:
    seed: int
    dt: float
    increments: np.ndarray

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def K(self) -> int:
        return self.increments.shape[1]

    def coarsen(self, factor: int) -> NoisePath:
        """Path on the grid ``factor * dt`` obtained by summing consecutive increments."""
        if self.steps % factor:
            raise DomainError("number of steps must be divisible by the coarsening factor")
        inc = self.increments.reshape(self.steps // factor, factor, self.K).sum(axis=1)
        inc.setflags(write=False)
        return NoisePath(self.seed, self.dt * factor, inc)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit stream seed for trajectory ``index`` of a run keyed by ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _key(seed: int, mode: int) -> int:
    return (int(mode) << 64) | (int(seed) & _MASK64)


def _box_muller(words: np.ndarray) -> np.ndarray:
    # words: (..., 2) uint64 -> standard normals (...)
    u1 = ((words[..., 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53
    u2 = (words[..., 1] >> np.uint64(11)).astype(np.float64) * _TWO53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _standard_normals(seed: int, steps: int, K: int) -> np.ndarray:
    out = np.empty((steps, K))
    for k in range(K):
        raw = np.random.Philox(key=_key(seed, k)).random_raw(2 * steps)
        out[:, k] = _box_muller(raw.reshape(steps, 2))
    return out


def sample_increments(seed: int, steps: int, K: int, dt: float) -> NoisePath:
    """``N(0, dt)`` increments of ``K`` independent Brownian motions."""
    if steps < 1 or K < 1 or not dt > 0:
        raise DomainError("need steps >= 1, K >= 1 and dt > 0")
    inc = math.sqrt(dt) * _standard_normals(seed, steps, K)
    inc.setflags(write=False)
    return NoisePath(int(seed), float(dt), inc)


def increment_at(seed: int, step: int, mode: int, dt: float) -> float:
    """The single increment ``(step, mode)`` of :func:`sample_increments`."""
    bg = np.random.Philox(key=_key(seed, mode))
    word = 2 * step
    bg.advance(word // 4)
    raw = bg.random_raw(4)[word % 4: word % 4 + 2]
    return float(math.sqrt(dt) * _box_muller(raw.reshape(1, 2))[0])


def sample_batch(seeds, steps: int, K: int, dt: float) -> np.ndarray:
    """Stack of increment arrays, shape ``(len(seeds), steps, K)``."""
    return math.sqrt(dt) * batch_normals(seeds, steps, K)


def thread_count() -> int:
    env = os.environ.get("SCLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def step_controlled(u: Field, flux: FluxModel, noise: NoiseModel, h_at_t, eps: float, dW,
                    dt: float, scheme: str = "engquist_osher") -> Field:
    """Flux step, then ``dt * sum g_k h^k + sqrt(eps) * sum g_k dW_k``."""
    if eps < 0:
        raise DomainError("eps must be >= 0")
    h = np.atleast_1d(np.asarray(h_at_t, dtype=float))
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if h.shape != (noise.K,) or dW.shape != (noise.K,):
        raise DomainError(f"control and noise increments must have length {noise.K}")
    _check_step(flux, u.values, u.grid, 0.0, dt)
    out = _advance(u.values, flux, noise, noise.on_grid(u.grid), u.grid, h, dt, scheme=scheme,
                   eps=eps, dW=dW)
    return Field(u.grid, out)


def _effective_flux(flux: FluxModel, cfg: SolverConfig) -> FluxModel:
    if cfg.truncation_R is not None:
        return flux_truncate(flux, cfg.truncation_R)
    return flux


def solve_stochastic(u0: Field, flux: FluxModel, noise: NoiseModel, h: Control | None,
                     eps: float, T: float | None = None, cfg: SolverConfig | None = None,
                     seed: int = 0, noise_path: NoisePath | None = None) -> Trajectory:
    """Euler-Maruyama trajectory of the shifted small-noise equation.

    With ``h`` this realises the solution map evaluated at
    ``W + eps^{-1/2} int h``; with ``h = None`` (zero control) it is the plain
    small-noise equation.  Viscosity and truncation are taken from ``cfg``.
    ``noise_path`` overrides the path generated from ``seed``.
    """
    cfg = cfg or SolverConfig()
    if eps < 0:
        raise DomainError("eps must be >= 0")
    _check_u0(u0)
    h = _as_control(h, noise, T)
    flux = _effective_flux(flux, cfg)
    eta = cfg.viscosity_eta
    m = substeps_for(u0.values, u0.grid, flux, h, cfg, eta)
    dt = h.dt / m
    if noise_path is None:
        noise_path = sample_increments(seed, h.n_steps * m, noise.K, dt)
    elif noise_path.steps != h.n_steps * m or abs(noise_path.dt - dt) > 1e-15 * max(1, dt):
        raise DomainError(
            f"noise path has {noise_path.steps} steps of {noise_path.dt}; "
            f"solver needs {h.n_steps * m} steps of {dt}")
    res = integrate(u0.values, u0.grid, flux, noise, h, cfg, eta=eta, eps=eps,
                    increments=noise_path.increments, substeps=m, keep=cfg.store,
                    energy=eta > 0)
    meta = {"solver": "stochastic", "cfg": cfg, "flux": flux, "noise": noise, "control": h,
            "eps": eps, "seed": seed, "noise_path": noise_path, "eta": eta, "dt": dt}
    diag = {}
    if eta > 0:
        diag = {"sup_l2_sq": res["sup_l2_sq"], "dissipation": res["dissipation"],
                "energy": res["sup_l2_sq"] + res["dissipation"]}
    return _trajectory(u0, res, cfg, meta, diag)


def simulate_batch(u0: Field, flux: FluxModel, noise: NoiseModel, h: Control, eps: float,
                   cfg: SolverConfig | None, seeds, reference: np.ndarray | None = None,
                   chunk: int = 4096, normals: np.ndarray | None = None) -> dict:
    """Many independent trajectories at once; only final states (and gaps) are kept.

    Row ``i`` of every output equals the single-trajectory result of
    :func:`solve_stochastic` with ``seed = seeds[i]``.  Chunks are processed
    on up to ``SCLAB_THREADS`` threads and reassembled in index order.
    ``normals`` may supply the pre-drawn standard normals
    ``(len(seeds), steps, K)`` so several ``eps`` can share one draw.
    """
    cfg = cfg or SolverConfig()
    seeds = [int(s) for s in seeds]
    flux = _effective_flux(flux, cfg)
    eta = cfg.viscosity_eta
    m = substeps_for(u0.values, u0.grid, flux, h, cfg, eta)
    steps = h.n_steps * m
    dt = h.dt / m
    sqdt = math.sqrt(dt)
    bounds = [(a, min(a + chunk, len(seeds))) for a in range(0, len(seeds), chunk)]

    def run(bounds_ab):
        a, b = bounds_ab
        if eps > 0:
            if normals is not None:
                inc = sqdt * normals[a:b]
            else:
                inc = sample_batch(seeds[a:b], steps, noise.K, dt)
        else:
            inc = None
        batch_u0 = np.broadcast_to(u0.values, (b - a,) + u0.values.shape)
        return integrate(batch_u0, u0.grid, flux, noise, h, cfg, eta=eta, eps=eps,
                         increments=inc, substeps=m, keep="final", reference=reference)

    workers = min(thread_count(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(bd) for bd in bounds]
    out = {"final": np.concatenate([p["final"] for p in parts]), "substeps": m, "dt": dt,
           "steps": steps}
    if reference is not None:
        out["l1l1_gap"] = np.concatenate([p["l1l1_gap"] for p in parts])
    return out


def batch_normals(seeds, steps: int, K: int) -> np.ndarray:
    """Standard normals behind :func:`sample_batch`, shape ``(len(seeds), steps, K)``."""
    seeds = list(seeds)
    out = np.empty((len(seeds), steps, K))
    for i, s in enumerate(seeds):
        out[i] = _standard_normals(s, steps, K)
    return out
