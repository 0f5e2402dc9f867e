"""Rate-function machinery: action, minimal-action search and Monte Carlo probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, InsufficientDataError
from .hyperbolic import SolverConfig, integrate, l1l1_distance, solve_skeleton, substeps_for
from .kinetic import XiGrid, default_delta, doubling_functional
from .models import Control, Field, FluxModel, NoiseModel, flux_truncate
from .stochastic import batch_normals, derive_seed, simulate_batch

__all__ = [
    "RareEvent",
    "ActionResult",
    "OptConfig",
    "MCTable",
    "LDPFit",
    "action",
    "minimize_action",
    "mc_rare_event",
    "ldp_fit",
    "doubling_schedule",
    "condition_b_gap",
    "weak_continuity_probe",
]


def action(h: Control) -> float:
    """``1/2 int_0^T |h(s)|^2 ds``."""
    return 0.5 * h.norm_sq()


# {{{ events

@dataclass(frozen=True)
class RareEvent:
    """Event on the terminal state.

    ``terminal_l1_ball_complement``: ``||u(T) - reference||_1 >= threshold``.
    ``terminal_mean_threshold``: ``mean(u(T)) - reference >= threshold``.
    """

    kind: str
    reference: Field | float
    threshold: float

    def __post_init__(self):
        if self.kind not in ("terminal_l1_ball_complement", "terminal_mean_threshold"):
            raise DomainError(f"unknown event kind {self.kind!r}")
        if self.threshold < 0:
            raise DomainError("event threshold must be >= 0")
        if self.kind == "terminal_l1_ball_complement" and not isinstance(self.reference, Field):
            raise DomainError("ball-complement events need a reference Field")
        if self.kind == "terminal_mean_threshold" and isinstance(self.reference, Field):
            object.__setattr__(self, "reference", self.reference.mean())

    def evaluate(self, finals: np.ndarray, dV: float, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """``(flags, l1_distance_to_reference)`` for a batch of terminal states."""
        axes = tuple(range(finals.ndim - dim, finals.ndim))
        if isinstance(self.reference, Field):
            ref = self.reference.values
        else:
            ref = float(self.reference)
        dist = np.sum(np.abs(finals - ref), axis=axes) * dV
        if self.kind == "terminal_l1_ball_complement":
            flags = dist >= self.threshold
        else:
            mean = np.sum(finals, axis=axes) * dV
            flags = mean - float(self.reference) >= self.threshold
        return flags, dist

# }}}


# {{{ minimal action

@dataclass(frozen=True)
class OptConfig:
    n_intervals: int = 4
    n_steps: int = 20
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    rounds: int = 6
    fd_step: float = 1e-6
    maxiter: int = 200
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.n_intervals < 1 or self.n_steps < self.n_intervals:
            raise DomainError("need 1 <= n_intervals <= n_steps")
        if self.rounds < 1:
            raise DomainError("rounds must be >= 1")


@dataclass(frozen=True)
class ActionResult:
    control: Control
    action: float
    terminal_gap: float
    converged: bool
    iterations: int
    penalty: float = 0.0


def _expand(theta: np.ndarray, K: int, T: float, cfg: OptConfig) -> Control:
    blocks = theta.reshape(cfg.n_intervals, K)
    nodes = np.arange(cfg.n_steps + 1)
    which = np.minimum(nodes * cfg.n_intervals // cfg.n_steps, cfg.n_intervals - 1)
    return Control(T, blocks[which])


def minimize_action(u0: Field, target: Field, delta_target: float, flux: FluxModel,
                    noise: NoiseModel, T: float, opt_cfg: OptConfig | None = None,
                    initial: Control | None = None,
                    witnesses: Sequence[Control] = ()) -> ActionResult:
    """Penalised search for the cheapest control steering ``u0`` near ``target`` at ``T``.

    Minimises ``action(h) + lam * ||u_h(T) - target||_1^2`` over controls that
    are piecewise constant on ``n_intervals`` blocks, with central
    finite-difference gradients and BFGS.  ``lam`` grows geometrically over
    the rounds until the terminal gap drops below ``delta_target``.  The
    cheapest feasible control seen (including any ``witnesses``) is returned;
    without one the result is flagged as not converged.
    """
    cfg = opt_cfg or OptConfig()
    K = noise.K
    dV = u0.grid.cell_volume
    zero = Control.zeros(K, T, cfg.n_steps)
    m = substeps_for(u0.values, u0.grid, flux, zero, cfg.solver, 0.0)
    tgt = target.values

    def terminal_gap(h: Control) -> float:
        res = integrate(u0.values, u0.grid, flux, noise, h, cfg.solver, keep="final",
                        substeps=m)
        return float(np.sum(np.abs(res["final"] - tgt)) * dV)

    best: dict = {"action": math.inf, "control": None, "gap": math.inf}

    def consider(h: Control, gap: float):
        a = action(h)
        if gap <= delta_target and a < best["action"]:
            best.update(action=a, control=h, gap=gap)

    for w in witnesses:
        consider(w, terminal_gap(w))

    if initial is not None:
        theta = _fit_blocks(initial, cfg)
    else:
        theta = np.zeros(cfg.n_intervals * K)

    lam = cfg.penalty0
    iterations = 0
    last = (theta, math.inf)
    for _ in range(cfg.rounds):
        def objective(th, lam=lam):
            h = _expand(th, K, T, cfg)
            gap = terminal_gap(h)
            return action(h) + lam * gap * gap, gap, h

        def fun(th):
            val, gap, h = objective(th)
            consider(h, gap)
            return val

        def jac(th):
            g = np.empty_like(th)
            for i in range(len(th)):
                step = cfg.fd_step * max(1.0, abs(th[i]))
                tp, tm = th.copy(), th.copy()
                tp[i] += step
                tm[i] -= step
                g[i] = (objective(tp)[0] - objective(tm)[0]) / (2 * step)
            return g

        res = minimize(fun, theta, jac=jac, method="BFGS",
                       options={"maxiter": cfg.maxiter, "gtol": 1e-10})
        iterations += int(res.nit)
        theta = res.x
        h = _expand(theta, K, T, cfg)
        gap = terminal_gap(h)
        consider(h, gap)
        last = (theta, gap)
        if gap <= delta_target:
            break
        lam *= cfg.penalty_growth

    if best["control"] is not None:
        return ActionResult(best["control"], best["action"], best["gap"], True, iterations, lam)
    h = _expand(last[0], K, T, cfg)
    return ActionResult(h, action(h), last[1], False, iterations, lam)


def _fit_blocks(h: Control, cfg: OptConfig) -> np.ndarray:
    which = np.minimum(np.arange(h.n_steps + 1) * cfg.n_intervals // h.n_steps,
                       cfg.n_intervals - 1)
    return np.concatenate([h.coeffs[which == b].mean(axis=0)
                           for b in range(cfg.n_intervals)])

# }}}


# {{{ Monte Carlo

@dataclass
class MCTable:
    """Per-eps summary rows plus per-trajectory records."""

    rows: list[dict]
    trajectories: dict[str, np.ndarray]

    ROW_FIELDS = ("eps", "n_traj", "hits", "p_hat", "ci_low", "ci_high", "rate", "defined")
    TRAJ_FIELDS = ("traj_id", "seed", "eps", "final_l1_dist", "event_flag")

    def rows_csv(self) -> list[list]:
        return [[r[k] for k in self.ROW_FIELDS] for r in self.rows]


def _wilson(hits: int, n: int, z: float) -> tuple[float, float]:
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _check_eps_list(eps_list: Sequence[float]):
    eps = [float(e) for e in eps_list]
    if not eps or any(e <= 0 for e in eps):
        raise DomainError("eps values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DomainError("eps values must be strictly decreasing")
    return eps


def mc_rare_event(u0: Field, flux: FluxModel, noise: NoiseModel, event: RareEvent,
                  eps_list: Sequence[float], n_traj: int, master_seed: int,
                  h: Control | None = None, T: float | None = None,
                  cfg: SolverConfig | None = None, n_steps: int = 20) -> MCTable:
    """Plain Monte Carlo estimate of the event probability for each ``eps``.

    Trajectory ``i`` uses the stream ``derive_seed(master_seed, i)`` for every
    ``eps`` (common random numbers).  Rows carry the 95% Wilson score interval
    and ``-eps log p_hat``; rows with ``p_hat = 0`` are flagged undefined.
    """
    if n_traj < 100:
        raise DomainError("n_traj must be >= 100")
    eps = _check_eps_list(eps_list)
    cfg = cfg or SolverConfig()
    if h is None:
        if T is None:
            raise DomainError("need a control or a horizon T")
        h = Control.zeros(noise.K, T, n_steps)
    seeds = [derive_seed(master_seed, i) for i in range(n_traj)]
    eff_flux = flux_truncate(flux, cfg.truncation_R) if cfg.truncation_R else flux
    m = substeps_for(u0.values, u0.grid, eff_flux, h, cfg, cfg.viscosity_eta)
    normals = batch_normals(seeds, h.n_steps * m, noise.K)
    z = NormalDist().inv_cdf(0.975)
    rows, tr = [], {k: [] for k in MCTable.TRAJ_FIELDS}
    for e in eps:
        res = simulate_batch(u0, flux, noise, h, e, cfg, seeds, normals=normals)
        flags, dist = event.evaluate(res["final"], u0.grid.cell_volume, u0.grid.dim)
        hits = int(np.sum(flags))
        p = hits / n_traj
        lo, hi = _wilson(hits, n_traj, z)
        defined = hits > 0
        rate = (-e * math.log(p) + 0.0) if defined else math.nan
        rows.append({"eps": e, "n_traj": n_traj, "hits": hits, "p_hat": p, "ci_low": lo,
                     "ci_high": hi, "rate": rate, "defined": defined})
        tr["traj_id"].append(np.arange(n_traj))
        tr["seed"].append(np.array(seeds, dtype=np.uint64))
        tr["eps"].append(np.full(n_traj, e))
        tr["final_l1_dist"].append(dist)
        tr["event_flag"].append(flags.astype(int))
    return MCTable(rows, {k: np.concatenate(v) for k, v in tr.items()})


@dataclass(frozen=True)
class LDPFit:
    eps: np.ndarray
    rates: np.ndarray
    monotone: bool
    limit: float
    action_star: float

    @property
    def ratio(self) -> float:
        return self.limit / self.action_star if self.action_star else math.nan


def ldp_fit(table: MCTable | Sequence[tuple[float, float]], action_star: float) -> LDPFit:
    """Extrapolate ``-eps log p(eps)`` to ``eps -> 0``.

    The limit is the constant term of the quadratic in ``eps`` through the
    three smallest usable ``eps``; ``monotone`` reports whether the usable
    sequence approaches it monotonically.
    """
    if isinstance(table, MCTable):
        pairs = [(r["eps"], r["p_hat"]) for r in table.rows]
    else:
        pairs = [(float(e), float(p)) for e, p in table]
    usable = sorted(((e, p) for e, p in pairs if e > 0 and 0 < p <= 1), reverse=True)
    if len(usable) < 3:
        raise InsufficientDataError(
            f"need at least 3 eps rows with p_hat > 0, got {len(usable)}")
    eps = np.array([e for e, _ in usable])
    rates = np.array([-e * math.log(p) + 0.0 for e, p in usable])
    d = np.diff(rates)
    monotone = bool(np.all(d <= 0) or np.all(d >= 0))
    e3, r3 = eps[-3:], rates[-3:]
    V = np.vander(e3, 3, increasing=True)
    limit = float(np.linalg.solve(V, r3)[0])
    return LDPFit(eps, rates, monotone, limit, float(action_star))


def doubling_schedule(eps: float, dim: int = 1) -> tuple[float, float]:
    """Mollifier scales ``gamma = eps^(1/(2(1+N)))`` and ``delta = gamma^(4/3)``."""
    gamma = eps ** (1.0 / (2.0 * (1 + dim)))
    return gamma, default_delta(gamma)


def _control_for(h_family, e: float) -> Control:
    if isinstance(h_family, Control):
        return h_family
    if callable(h_family):
        return h_family(e)
    return h_family[e]


def condition_b_gap(u0: Field, flux: FluxModel, noise: NoiseModel,
                    h_family: Control | Mapping[float, Control] | Callable[[float], Control],
                    eps_list: Sequence[float], n_traj: int, master_seed: int,
                    M: float, delta: float = 0.05, cfg: SolverConfig | None = None,
                    doubling: bool = False) -> list[dict]:
    """Distance between shifted stochastic and skeleton solutions, per ``eps``.

    For each ``eps`` the gap is ``||Y - Z||`` in ``L1([0,T]; L1)`` between
    ``Y = solve_stochastic(h_eps, eps, seed_i)`` and ``Z = solve_skeleton(h_eps)``,
    averaged over ``n_traj`` common-random-number paths.  ``exceed_frac`` is
    the fraction of paths with gap above ``delta``.  With ``doubling=True`` the
    mean doubling functional between the terminal states at the scales of
    :func:`doubling_schedule` is reported as well.
    """
    cfg = cfg or SolverConfig()
    eps = [float(e) for e in eps_list]
    if any(e < 0 for e in eps):
        raise DomainError("eps values must be >= 0")
    controls = {}
    for e in eps:
        he = _control_for(h_family, e)
        if not he.in_ball(M):
            raise DomainError(
                f"control for eps={e} has squared norm {he.norm_sq():.6g} > M = {M}")
        controls[e] = he
    seeds = [derive_seed(master_seed, i) for i in range(n_traj)]
    eff_flux = flux_truncate(flux, cfg.truncation_R) if cfg.truncation_R else flux
    rows = []
    for e in eps:
        he = controls[e]
        Z = integrate(u0.values, u0.grid, eff_flux, noise, he, cfg, eta=cfg.viscosity_eta,
                      keep="nodes")
        res = simulate_batch(u0, flux, noise, he, e, cfg, seeds, reference=Z["values"])
        gaps = res["l1l1_gap"]
        row = {"eps": e, "mean_gap": float(np.mean(gaps)),
               "std_err": float(np.std(gaps, ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0,
               "exceed_frac": float(np.mean(gaps > delta)), "delta": delta}
        if doubling and e > 0:
            gamma, dlt = doubling_schedule(e, u0.grid.dim)
            zf = Field(u0.grid, Z["final"])
            vals = []
            for yf in res["final"]:
                yfield = Field(u0.grid, yf)
                xi = XiGrid.bracketing(yfield, zf, points=64)
                vals.append(doubling_functional(yfield, zf, gamma, dlt, xi))
            row["doubling_gap"] = float(np.mean(vals))
        rows.append(row)
    return rows


def weak_continuity_probe(u0: Field, flux: FluxModel, noise: NoiseModel, h: Control,
                          amplitude: float, mode: int, eps_list: Sequence[float],
                          M: float | None = None, cfg: SolverConfig | None = None) -> list[dict]:
    """Skeleton response to the oscillating controls ``h + c sin(2 pi t / eps) e_mode``.

    ``mode`` is 1-based.  Each row reports the solution gap in
    ``L1([0,T]; L1)`` and the squared control distance ``int |h_eps - h|^2``,
    which stays near ``c^2 T / 2`` while the gap decays.
    """
    if not 1 <= mode <= noise.K:
        raise DomainError(f"mode must lie in 1..{noise.K}")
    cfg = cfg or SolverConfig()
    cfg = SolverConfig(cfg.cfl, cfg.scheme, cfg.viscosity_eta, cfg.truncation_R,
                       cfg.substeps, cfg.blowup, "nodes")
    base = solve_skeleton(u0, flux, noise, h, h.T, cfg)
    t = h.times
    rows = []
    for e in eps_list:
        e = float(e)
        osc = np.zeros_like(h.coeffs)
        osc[:, mode - 1] = amplitude * np.sin(2 * np.pi * t / e)
        he = Control(h.T, h.coeffs + osc)
        if M is not None and not he.in_ball(M):
            raise DomainError(
                f"perturbed control for eps={e} has squared norm {he.norm_sq():.6g} > M = {M}")
        tr = solve_skeleton(u0, flux, noise, he, h.T, cfg)
        rows.append({"eps": e, "solution_gap": l1l1_distance(tr, base),
                     "control_gap_sq": (he - h).norm_sq()})
    return rows

# }}}
