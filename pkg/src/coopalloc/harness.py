"""Monte-Carlo scenario generation, baselines and result tables.

BSs sit on a circle of radius ``cell_radius_m``; UEs are dropped uniformly
in the central disk of radius ``cell_radius_m - inner_radius_m`` where the
cells overlap.  Each snapshot draws UE positions and Rayleigh fading once;
every demand scale and every algorithm reuses the same draw.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from . import jspa
from .model import (TOL_EQ, Allocation, Instance, PhysicalProblem, check_feasible, normalize,
                    received_power)

log = logging.getLogger(__name__)

ALGOS = ("jspa", "jmpc", "esp")
CSV_COLUMNS = ("epsilon", "algo", "mean_z", "ci95", "loss_rate", "n_snapshots", "n_feasible")


@dataclass(frozen=True)
class Scenario:
    num_bs: int
    num_ue: int = 20
    cell_radius_m: float = 1000.0
    inner_radius_m: float = 600.0
    pathloss_a_db: float = 128.1
    pathloss_b: float = 37.6
    noise_dbm_hz: float = -174.0
    p0_watts: float = 1.0
    b0_hz: float = 1e7
    epsilon: float = 1.0
    snapshots: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.num_bs < 1 or self.num_ue < 1:
            raise ValueError("need at least one BS and one UE")
        if not 0 < self.inner_radius_m < self.cell_radius_m:
            raise ValueError("need 0 < inner_radius_m < cell_radius_m")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if min(self.p0_watts, self.b0_hz) <= 0:
            raise ValueError("p0_watts and b0_hz must be positive")

    @property
    def n0_w_hz(self) -> float:
        return 10.0 ** ((self.noise_dbm_hz - 30.0) / 10.0)

    def bs_positions(self) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(self.num_bs) / self.num_bs
        return self.cell_radius_m * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def pathloss_db(self, d_m: np.ndarray) -> np.ndarray:
        return self.pathloss_a_db + self.pathloss_b * np.log10(np.asarray(d_m) / 1000.0)


@dataclass(frozen=True)
class Snapshot:
    positions: np.ndarray
    gains: np.ndarray
    instance: Instance
    demand_base: np.ndarray


def snapshot_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based substream for snapshot ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def generate_snapshot(sc: Scenario, rng: np.random.Generator) -> Snapshot:
    """Drop UEs, draw fading and build the normalized instance at demand ``epsilon * R0``."""
    radius = sc.cell_radius_m - sc.inner_radius_m
    r = radius * np.sqrt(rng.random(sc.num_ue))
    phi = 2.0 * np.pi * rng.random(sc.num_ue)
    pos = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    d = np.linalg.norm(sc.bs_positions()[:, None, :] - pos[None, :, :], axis=2)
    fading = rng.exponential(1.0, size=d.shape)
    gains = 10.0 ** (-sc.pathloss_db(d) / 10.0) * fading
    base = normalize(PhysicalProblem(sc.p0_watts, sc.b0_hz, sc.n0_w_hz, gains,
                                     np.ones(sc.num_ue)))
    r0 = esp_rate(base.gamma)
    inst = Instance(base.gamma, sc.epsilon * r0)
    return Snapshot(pos, gains, inst, r0)


def esp_rate(gamma: np.ndarray) -> np.ndarray:
    """Spectral demand met by equal spectrum and equal power: ``log2(1 + sum_i gamma_ij) / N``."""
    return np.log2(1.0 + gamma.sum(axis=0)) / gamma.shape[1]


def esp_reference(snap: Snapshot) -> np.ndarray:
    return esp_rate(snap.instance.gamma)


def esp_allocation(inst: Instance) -> Allocation:
    """Equal spectrum; every BS spends the same power on a UE, sized to meet its demand.

    At the base demand this is exactly ``x_ij = 1/N``.
    """
    m, n = inst.gamma.shape
    y = np.full(n, 1.0 / n)
    q = received_power(inst.rate, y)
    x = np.tile(q / inst.gamma.sum(axis=0), (m, 1))
    feasible = bool(np.all(np.isfinite(x)) and np.all(x.sum(axis=1) <= 1.0 + TOL_EQ))
    return Allocation(x, y, feasible)


def jmpc_baseline(inst: Instance) -> Allocation:
    """Equal spectrum, minimum power: a linear program in ``x``.

    A vertex optimum (dual simplex) has at most ``M - 1`` jointly powered UEs,
    so it also respects the association structure.
    """
    m, n = inst.gamma.shape
    y = np.full(n, 1.0 / n)
    q = received_power(inst.rate, y)
    if not np.all(np.isfinite(q)):
        return Allocation.infeasible(m, n, reason="demand overflows at equal spectrum")
    # variables x[i, j] flattened row-major
    a_eq = np.zeros((n, m * n))
    for j in range(n):
        a_eq[j, j::n] = inst.gamma[:, j]
    a_ub = np.kron(np.eye(m), np.ones(n))
    res = linprog(np.ones(m * n), A_ub=a_ub, b_ub=np.ones(m), A_eq=a_eq, b_eq=q,
                  bounds=(0, None), method="highs-ds")
    if res.status != 0:
        return Allocation.infeasible(m, n, reason=res.message)
    x = np.maximum(res.x.reshape(m, n), 0.0)
    return Allocation(x, y, True, info={"lp_status": res.status})


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McSummary:
    """Per-(epsilon, algorithm) aggregates plus the raw per-snapshot objectives.

    ``z[e, a, s]`` is the objective of algorithm ``a`` on snapshot ``s`` at
    demand scale ``e``; ``nan`` marks an infeasible snapshot.
    """

    epsilons: Tuple[float, ...]
    algos: Tuple[str, ...]
    z: np.ndarray

    @property
    def n_snapshots(self) -> int:
        return self.z.shape[2]

    def n_feasible(self, e: int, a: int) -> int:
        return int(np.sum(np.isfinite(self.z[e, a])))

    def loss_rate(self, e: int, a: int) -> float:
        return 1.0 - self.n_feasible(e, a) / self.n_snapshots

    def mean_z(self, e: int, a: int) -> float:
        v = self.z[e, a][np.isfinite(self.z[e, a])]
        return float(v.mean()) if v.size else float("nan")

    def ci95(self, e: int, a: int) -> float:
        v = self.z[e, a][np.isfinite(self.z[e, a])]
        if v.size < 2:
            return 0.0
        return float(1.96 * v.std(ddof=1) / math.sqrt(v.size))

    def rows(self) -> List[dict]:
        out = []
        for e, eps in enumerate(self.epsilons):
            for a, algo in enumerate(self.algos):
                out.append({"epsilon": eps, "algo": algo, "mean_z": self.mean_z(e, a),
                            "ci95": self.ci95(e, a), "loss_rate": self.loss_rate(e, a),
                            "n_snapshots": self.n_snapshots,
                            "n_feasible": self.n_feasible(e, a)})
        return out

    def column(self, algo: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows() if r["algo"] == algo], dtype=float)


def _run_algo(algo: str, inst: Instance) -> float:
    try:
        if algo == "jspa":
            alloc = jspa.optimize(inst)
        elif algo == "jmpc":
            alloc = jmpc_baseline(inst)
        else:
            alloc = esp_allocation(inst)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        log.warning("%s failed: %s", algo, exc)
        return float("nan")
    if not alloc.feasible:
        return float("nan")
    if not check_feasible(inst, alloc, tol_eq=1e-7, tol_rate=1e-6):
        log.warning("%s returned an allocation violating constraints; counted as loss", algo)
        return float("nan")
    return alloc.z


def _snapshot_job(args) -> np.ndarray:
    sc, index, epsilons, algos = args
    snap = generate_snapshot(sc, snapshot_rng(sc.seed, index))
    out = np.full((len(epsilons), len(algos)), np.nan)
    for e, eps in enumerate(epsilons):
        inst = Instance(snap.instance.gamma, eps * snap.demand_base)
        for a, algo in enumerate(algos):
            out[e, a] = _run_algo(algo, inst)
    return out


def run_monte_carlo(sc: Scenario, eps_list: Sequence[float], workers: int = 1,
                    algos: Sequence[str] = ALGOS) -> McSummary:
    """Evaluate every algorithm on ``sc.snapshots`` shared channel draws per epsilon."""
    eps = tuple(float(e) for e in eps_list)
    if not eps:
        raise ValueError("eps_list must not be empty")
    if any(e <= 0 for e in eps):
        raise ValueError("epsilon values must be positive")
    unknown = set(algos) - set(ALGOS)
    if unknown:
        raise ValueError(f"unknown algorithm(s) {sorted(unknown)}")
    jobs = [(sc, k, eps, tuple(algos)) for k in range(sc.snapshots)]
    if workers <= 1:
        results = [_snapshot_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_snapshot_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    z = np.stack(results, axis=2)
    return McSummary(eps, tuple(algos), z)


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def _json_num(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(_fmt(v)) if math.isfinite(v) else None


def emit(results: McSummary, path: str, fmt: str = "csv") -> None:
    """Write the summary table as CSV or JSON (floats with 9 significant digits)."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    rows = results.rows()
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for r in rows:
                    w.writerow([_fmt(r[c]) if c != "algo" else r[c] for c in CSV_COLUMNS])
            else:
                data = [{c: r[c] if c == "algo" else _json_num(r[c]) for c in CSV_COLUMNS}
                        for r in rows]
                json.dump({"columns": list(CSV_COLUMNS), "rows": data}, fh, indent=1)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def load_rows(path: str) -> List[dict]:
    """Read rows written by :func:`emit` (either format)."""
    with open(path) as fh:
        if path.endswith(".json"):
            return json.load(fh)["rows"]
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in CSV_COLUMNS:
            if c != "algo":
                r[c] = float(r[c]) if c not in ("n_snapshots", "n_feasible") else int(r[c])
    return rows
