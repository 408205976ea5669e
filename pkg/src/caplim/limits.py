"""Long-run experiments for sums under a family of plausible laws.

Each runner draws trajectories with counter-based streams keyed by
``(seed, context, column)`` where the column is the global trajectory
index. Work is split across trajectories, so results are bit-identical
for any worker count: a trajectory's draws never depend on which worker
produced them or on how trajectories were batched.

The runners cover the law of large numbers in both weak and strong
form, the cluster behaviour of running means under measure switching,
the law of the iterated logarithm, a divergence check for heavy tails
where the first-moment integral blows up, and a sweep comparing
empirical tail frequencies of centered sums against every closed-form
tail bound.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .bounds import (
    BoundInputs,
    DerivedConstants,
    chebyshev_bound,
    choquet_moment_bound,
    conjugate_chebyshev_bound,
    conjugate_exponential_bound,
    conjugate_split_bound,
    kolmogorov_exponential_bound,
    power_tail_bound,
    split_moment_bound,
)
from .dependence import DependenceSpec, correlate_pairs
from .measures import Marginal, MeasureFamily, ProductMeasure, philox_stream
from .sublinear import SublinearEngine, TestFunction

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "borel_cantelli_diag",
    "run_bound_check",
    "run_cluster",
    "run_experiment",
    "run_lil",
    "run_necessity",
    "run_slln",
    "run_wlln",
]

_MODES = ("wlln", "slln", "cluster", "lil", "necessity", "bound_check")

# Context offsets keep the streams of different runners disjoint even
# when they share a seed.
_CTX_WLLN = 4_000
_CTX_SLLN = 1_000
_CTX_CLUSTER = 3_000
_CTX_LIL = 2_000
_CTX_NECESSITY = 5_000
_CTX_BOUNDS = 6_000

_ROW_CHUNK = 1 << 17


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs for one experiment run.

    ``horizon`` is the trajectory length (for ``bound_check`` it is the
    number of summands per trajectory). ``workers`` only controls how
    trajectory batches are scheduled and is excluded from the config
    hash; every other field participates.
    """

    mode: str
    family: MeasureFamily
    dependence: DependenceSpec = field(default_factory=DependenceSpec.independent)
    horizon: int = 100_000
    trajectories: int = 100
    seed: int = 2026
    workers: int = 1
    # Law-of-large-numbers controls.
    burn_in: int = 1_000
    epsilon: float = 0.05
    schedule: tuple[int, ...] | None = None
    wlln_target: float = 0.99
    # Iterated-logarithm controls.
    checkpoint_growth: float = 1.05
    lil_epsilon: float = 0.15
    lil_quantile: float = 0.95
    # Cluster-sampler controls.
    block_start: int = 8_000
    block_growth: float = 1.45
    cluster_grid_step: float = 0.1
    cluster_tolerance: float = 0.1
    cluster_advance_tolerance: float = 0.04
    cluster_coverage_target: float = 0.95
    # Divergence-check controls.
    divergence_threshold: float = 10.0
    divergence_quantile: float = 0.9
    # Tail-bound sweep controls.
    bound_order: int = 3
    bound_delta: float = 0.5
    x_grid_points: int = 20
    x_grid_range: tuple[float, float] = (0.1, 6.0)

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {_MODES}")
        if not isinstance(self.family, MeasureFamily):
            raise TypeError("family must be a MeasureFamily")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.burn_in < 1:
            raise ValueError("burn_in must be at least 1")
        if self.mode in ("slln", "lil") and self.burn_in > self.horizon:
            raise ValueError("burn_in must not exceed the horizon")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.checkpoint_growth <= 1.0 or self.block_growth <= 1.0:
            raise ValueError("growth factors must exceed 1")
        if not 0.0 < self.lil_quantile <= 1.0:
            raise ValueError("lil_quantile must lie in (0, 1]")
        if not 0.0 < self.cluster_coverage_target <= 1.0:
            raise ValueError("cluster_coverage_target must lie in (0, 1]")
        if self.cluster_grid_step <= 0.0 or self.cluster_tolerance <= 0.0:
            raise ValueError("cluster grid step and tolerance must be positive")
        if self.block_start < 2:
            raise ValueError("block_start must be at least 2")
        if self.divergence_threshold <= 0.0:
            raise ValueError("divergence_threshold must be positive")
        if not 0.0 < self.divergence_quantile <= 1.0:
            raise ValueError("divergence_quantile must lie in (0, 1]")
        if self.bound_order < 2:
            raise ValueError("bound_order must be at least 2")
        if not 0.0 < self.bound_delta <= 1.0:
            raise ValueError("bound_delta must lie in (0, 1]")
        if self.x_grid_points < 2:
            raise ValueError("x_grid_points must be at least 2")
        lo, hi = self.x_grid_range
        if not 0.0 < lo < hi:
            raise ValueError("x_grid_range must satisfy 0 < lo < hi")
        if self.schedule is not None:
            sched = tuple(int(n) for n in self.schedule)
            if not sched or any(n < 1 for n in sched):
                raise ValueError("schedule entries must be positive integers")
            if list(sched) != sorted(sched):
                raise ValueError("schedule must be non-decreasing")
            object.__setattr__(self, "schedule", sched)

    def descriptor(self) -> dict:
        """Canonical JSON-ready description; excludes ``workers``."""
        fields = {
            "mode": self.mode,
            "horizon": self.horizon,
            "trajectories": self.trajectories,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "epsilon": self.epsilon,
            "schedule": list(self.schedule) if self.schedule else None,
            "wlln_target": self.wlln_target,
            "checkpoint_growth": self.checkpoint_growth,
            "lil_epsilon": self.lil_epsilon,
            "lil_quantile": self.lil_quantile,
            "block_start": self.block_start,
            "block_growth": self.block_growth,
            "cluster_grid_step": self.cluster_grid_step,
            "cluster_tolerance": self.cluster_tolerance,
            "cluster_advance_tolerance": self.cluster_advance_tolerance,
            "cluster_coverage_target": self.cluster_coverage_target,
            "divergence_threshold": self.divergence_threshold,
            "divergence_quantile": self.divergence_quantile,
            "bound_order": self.bound_order,
            "bound_delta": self.bound_delta,
            "x_grid_points": self.x_grid_points,
            "x_grid_range": list(self.x_grid_range),
        }
        fields["family"] = _family_descriptor(self.family)
        fields["dependence"] = _dependence_descriptor(self.dependence)
        return fields

    def config_hash(self) -> str:
        payload = json.dumps(self.descriptor(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ExperimentResult:
    """Outcome of one runner.

    ``summary`` holds scalar findings, ``tables`` maps a table name to a
    ``(header, rows)`` pair ready for CSV emission, and ``assumptions``
    lists the hypotheses the run relies on but does not certify.
    """

    mode: str
    config_hash: str
    seed: int
    passed: bool
    summary: dict
    tables: dict[str, tuple[tuple[str, ...], tuple[tuple, ...]]]
    assumptions: tuple[str, ...] = ()


def _family_descriptor(family: MeasureFamily) -> dict:
    grid = []
    for theta in family.grid_parameters():
        measure = family.measure_at(theta)
        row = []
        for i in range(len(measure.marginals)):
            m = measure.marginal(i)
            row.append({"kind": m.kind, "params": _jsonable(m.params)})
        grid.append(row)
    return {
        "name": family.name,
        "domain": [list(axis) for axis in family.parameter_domain],
        "resolution": family.grid_resolution,
        "K": family.K,
        "grid": grid,
    }


def _dependence_descriptor(spec: DependenceSpec) -> dict:
    out = {"mode": spec.mode, "K": spec.K}
    if spec.correlation is not None:
        out["correlation"] = spec.correlation
    if spec.correlation_matrix is not None:
        out["correlation_matrix"] = [list(row) for row in spec.correlation_matrix]
    if spec.joint_atoms is not None:
        out["joint_atoms"] = [
            {"point": list(point), "prob": prob} for point, prob in spec.joint_atoms
        ]
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _indexed_map(fn, items, workers: int) -> list:
    """Apply ``fn`` over ``items`` preserving order.

    Each item must carry its own stream keys, so the mapping is
    deterministic for any worker count.
    """
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _column_streams(seed: int, context: int, columns) -> list:
    return [philox_stream(seed, context, int(j)) for j in columns]


def _draw_uniform(streams, rows: int) -> np.ndarray:
    out = np.empty((rows, len(streams)))
    for j, stream in enumerate(streams):
        out[:, j] = stream.random(rows)
    return out


def _transform_chunk(
    u: np.ndarray, marginal: Marginal, dependence: DependenceSpec
) -> np.ndarray:
    """Map a uniform chunk to draws of the sequence, column by column.

    Rows are time. Under the pairwise copula the correlation couples
    consecutive rows, so callers must keep chunk lengths even to
    preserve the pairing across chunk boundaries.
    """
    if dependence.mode == "per_measure_independent":
        return marginal.ppf(u)
    if dependence.mode == "gaussian_copula":
        z = ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
        z = correlate_pairs(z, dependence.correlation)
        if marginal.kind == "normal":
            mean, var = marginal.params
            return mean + math.sqrt(var) * z
        return marginal.ppf(ndtr(z))
    raise ValueError(
        "joint-table dependence describes a fixed short block and cannot "
        "drive a long trajectory; use an independent or copula spec"
    )


def _require_sequence_dependence(config: ExperimentConfig) -> None:
    if config.dependence.mode == "discrete_joint":
        raise ValueError(
            "joint-table dependence is only meaningful for bound_check "
            "with horizon equal to the table arity"
        )
    if config.dependence.mode == "gaussian_copula" and not config.family.is_singleton:
        raise ValueError("the pairwise copula requires a single-measure family")


def _dense_parameters(family: MeasureFamily, points: int | None = None):
    """Parameter list refined well beyond the coarse evaluation grid."""
    domain = family.parameter_domain
    if points is None:
        points = 513 if len(domain) == 1 else 65
    axes = []
    for lo, hi in domain:
        axes.append(np.linspace(lo, hi, points) if hi > lo else np.array([lo]))
    if len(axes) == 1:
        return [float(t) for t in axes[0]]
    return [(float(a), float(b)) for a in axes[0] for b in axes[1]]


def _dense_extreme(family: MeasureFamily, of_marginal, sense: str):
    """Extremize a closed-form functional of the first coordinate."""
    best_theta = None
    best = -math.inf if sense == "max" else math.inf
    for theta in _dense_parameters(family):
        value = of_marginal(family.measure_at(theta).marginal(0))
        if (sense == "max" and value > best) or (sense == "min" and value < best):
            best = value
            best_theta = theta
    return best, best_theta


def _mean_extremes(family: MeasureFamily):
    mu_up, theta_up = _dense_extreme(family, lambda m: m.mean(), "max")
    mu_low, theta_low = _dense_extreme(family, lambda m: m.mean(), "min")
    return (mu_low, theta_low), (mu_up, theta_up)


def _sup_centered_second_moment(family: MeasureFamily, center: float) -> float:
    value, _ = _dense_extreme(
        family, lambda m: m.variance() + (m.mean() - center) ** 2, "max"
    )
    return value


def _shift_marginal(marginal: Marginal, c: float) -> Marginal:
    if c == 0.0:
        return marginal
    kind, params = marginal.kind, marginal.params
    if kind == "normal":
        return Marginal.normal(params[0] + c, params[1])
    if kind == "uniform":
        return Marginal.uniform(params[0] + c, params[1] + c)
    if kind in ("bernoulli", "discrete"):
        atoms = tuple((v + c, p) for v, p in marginal.atoms())
        return Marginal.discrete(atoms)
    raise ValueError(f"cannot shift a {kind!r} marginal; its support is anchored")


def _shifted_family(family: MeasureFamily, c: float) -> MeasureFamily:
    """Family with every listed marginal translated by ``c``."""
    if c == 0.0:
        return family

    def build(*theta):
        t = theta[0] if len(theta) == 1 else tuple(theta)
        base = family.measure_at(t)
        shifted = tuple(_shift_marginal(m, c) for m in base.marginals)
        return ProductMeasure(shifted, stationary=base.stationary)

    return MeasureFamily(
        parameter_domain=family.parameter_domain,
        builder=build,
        grid_resolution=family.grid_resolution,
        K=family.K,
        name=f"{family.name}-centered",
    )


def _chunk_ranges(total: int, chunk: int):
    start = 0
    while start < total:
        stop = min(total, start + chunk)
        yield start, stop
        start = stop


def _traj_batches(trajectories: int, batch: int = 32):
    for start, stop in _chunk_ranges(trajectories, batch):
        yield list(range(start, stop))


def _even_chunk(rows: int) -> int:
    return rows if rows % 2 == 0 else rows + 1


def _rows_per_chunk(columns: int) -> int:
    """Even row count keeping a chunk near 8M entries."""
    rows = max(2, min(_ROW_CHUNK, (1 << 23) // max(columns, 1)))
    return rows - (rows % 2)


# ---------------------------------------------------------------------------
# Weak law: capacity of the running-mean band along a schedule.


def _band_prob_exact(
    marginal: Marginal, n: int, lo: float, hi: float
) -> float | None:
    """P(lo <= S_n/n <= hi) when the i.i.d. sum has a closed form."""
    if marginal.kind == "normal":
        mu, var = marginal.params
        scale = math.sqrt(var / n)
        return float(ndtr((hi - mu) / scale) - ndtr((lo - mu) / scale))
    atoms = marginal.atoms() if marginal.is_discrete else None
    if atoms is not None and len(atoms) == 1:
        value = atoms[0][0]
        return 1.0 if lo <= value <= hi else 0.0
    return None


def _default_schedule(horizon: int) -> tuple[int, ...]:
    sched = []
    n = 100
    while n < horizon:
        sched.append(n)
        n *= 10
    sched.append(horizon)
    return tuple(dict.fromkeys(sched))


def run_wlln(config: ExperimentConfig) -> ExperimentResult:
    """Capacity of the running mean staying near the mean interval.

    For each schedule point ``n`` this reports the lower capacity of
    ``{mu_low - eps <= S_n/n <= mu_up + eps}`` (which should rise toward
    one) together with the upper capacities of the mean landing next to
    either endpoint of the mean interval. Exact single-measure band
    probabilities are used whenever the i.i.d. sum has a closed form;
    otherwise all measures are estimated from common random numbers.
    """
    _require_sequence_dependence(config)
    family = config.family
    eps = config.epsilon
    (mu_low, _), (mu_up, _) = _mean_extremes(family)
    schedule = config.schedule or _default_schedule(config.horizon)
    thetas = family.grid_parameters()
    marginals = [family.measure_at(t).marginal(0) for t in thetas]

    band = (mu_low - eps, mu_up + eps)
    near_up = (mu_up - eps, mu_up + eps)
    near_low = (mu_low - eps, mu_low + eps)

    exact_ok = config.dependence.mode == "per_measure_independent" and all(
        _band_prob_exact(m, 2, 0.0, 1.0) is not None for m in marginals
    )

    def stats_for(item):
        idx, n = item
        if exact_ok:
            probs = {
                key: np.array(
                    [_band_prob_exact(m, n, lo, hi) for m in marginals]
                )
                for key, (lo, hi) in (
                    ("band", band),
                    ("near_up", near_up),
                    ("near_low", near_low),
                )
            }
            ses = {key: np.zeros(len(marginals)) for key in probs}
            return n, probs, ses
        m_traj = config.trajectories
        streams = _column_streams(config.seed, _CTX_WLLN + idx, range(m_traj))
        sums = np.zeros((len(marginals), m_traj))
        for start, stop in _chunk_ranges(n, _rows_per_chunk(m_traj)):
            rows = stop - start
            u = _draw_uniform(streams, rows)
            for k, marg in enumerate(marginals):
                x = _transform_chunk(u, marg, config.dependence)
                sums[k] += x.sum(axis=0)
        means = sums / n
        probs, ses = {}, {}
        for key, (lo, hi) in (
            ("band", band),
            ("near_up", near_up),
            ("near_low", near_low),
        ):
            hit = (means >= lo) & (means <= hi)
            f = hit.mean(axis=1)
            probs[key] = f
            ses[key] = np.sqrt(f * (1.0 - f) / m_traj)
        return n, probs, ses

    results = _indexed_map(stats_for, enumerate(schedule), config.workers)

    rows = []
    band_lower = []
    for n, probs, ses in results:
        i_min = int(np.argmin(probs["band"]))
        lower_cap = float(probs["band"][i_min])
        band_lower.append((lower_cap, float(ses["band"][i_min])))
        rows.append(
            (
                n,
                lower_cap,
                float(ses["band"][i_min]),
                float(probs["near_up"].max()),
                float(probs["near_low"].max()),
            )
        )

    last_cap, last_se = band_lower[-1]
    monotone_trend = all(
        later[0] >= earlier[0] - 3.0 * (earlier[1] + later[1]) - 1e-12
        for earlier, later in zip(band_lower, band_lower[1:])
    )
    passed = last_cap >= config.wlln_target and monotone_trend
    summary = {
        "mean_interval": [mu_low, mu_up],
        "epsilon": eps,
        "schedule": list(schedule),
        "final_band_lower_capacity": last_cap,
        "final_band_se": last_se,
        "target": config.wlln_target,
        "monotone_trend": monotone_trend,
        "estimator": "exact" if exact_ok else "mc",
    }
    tables = {
        "wlln": (
            (
                "n",
                "band_lower_capacity",
                "band_se",
                "near_upper_mean_capacity",
                "near_lower_mean_capacity",
            ),
            tuple(rows),
        )
    }
    return ExperimentResult(
        mode="wlln",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=passed,
        summary=summary,
        tables=tables,
        assumptions=(
            "convergence of the lower band capacity is checked on a finite "
            "schedule, not in the limit",
        ),
    )


# ---------------------------------------------------------------------------
# Strong law: running means of trajectories drawn under extreme measures.


def run_slln(config: ExperimentConfig) -> ExperimentResult:
    """Running-mean envelope under the mean-extreme measures.

    Every trajectory, regardless of which extreme measure generated it,
    must keep ``S_k/k`` inside ``[mu_low - eps, mu_up + eps]`` for all
    ``k`` past the burn-in. Violations are counted per trajectory.
    """
    _require_sequence_dependence(config)
    family = config.family
    (mu_low, theta_low), (mu_up, theta_up) = _mean_extremes(family)
    measures = [("mean_low", theta_low)]
    if theta_up != theta_low:
        measures.append(("mean_up", theta_up))
    n0, horizon = config.burn_in, config.horizon
    lo_bar, hi_bar = mu_low - config.epsilon, mu_up + config.epsilon

    def run_batch(item):
        m_idx, (label, theta), cols = item
        marginal = family.measure_at(theta).marginal(0)
        streams = _column_streams(config.seed, _CTX_SLLN + m_idx, cols)
        carry = np.zeros(len(cols))
        max_ratio = np.full(len(cols), -np.inf)
        min_ratio = np.full(len(cols), np.inf)
        for start, stop in _chunk_ranges(horizon, _rows_per_chunk(len(cols))):
            rows = stop - start
            u = _draw_uniform(streams, rows)
            x = _transform_chunk(u, marginal, config.dependence)
            s = carry + np.cumsum(x, axis=0)
            carry = s[-1].copy()
            k = np.arange(start + 1, stop + 1, dtype=float)[:, None]
            if stop > n0:
                cut = max(n0 - start - 1, 0)
                ratios = s[cut:] / k[cut:]
                max_ratio = np.maximum(max_ratio, ratios.max(axis=0))
                min_ratio = np.minimum(min_ratio, ratios.min(axis=0))
        return [
            (label, col, float(mx), float(mn))
            for col, mx, mn in zip(cols, max_ratio, min_ratio)
        ]

    tasks = [
        (m_idx, measure, cols)
        for m_idx, measure in enumerate(measures)
        for cols in _traj_batches(config.trajectories)
    ]
    batches = _indexed_map(run_batch, tasks, config.workers)

    rows = []
    violations = 0
    for batch in batches:
        for label, col, mx, mn in batch:
            bad = mx > hi_bar + 1e-12 or mn < lo_bar - 1e-12
            violations += bad
            rows.append((label, col, mx, mn, int(bad)))

    summary = {
        "mean_interval": [mu_low, mu_up],
        "epsilon": config.epsilon,
        "burn_in": n0,
        "horizon": horizon,
        "trajectories_per_measure": config.trajectories,
        "violations": violations,
        "worst_max_ratio": max(r[2] for r in rows),
        "worst_min_ratio": min(r[3] for r in rows),
    }
    tables = {
        "slln": (
            ("measure", "trajectory", "max_ratio", "min_ratio", "violated"),
            tuple(rows),
        )
    }
    return ExperimentResult(
        mode="slln",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=violations == 0,
        summary=summary,
        tables=tables,
        assumptions=(
            "the running-mean envelope is checked from the burn-in to a "
            "finite horizon under the two mean-extreme measures",
        ),
    )


# ---------------------------------------------------------------------------
# Cluster sampler: measure switching steers the running mean to any target.


def run_cluster(config: ExperimentConfig) -> ExperimentResult:
    """Steer one long trajectory's running mean across the mean interval.

    Blocks grow geometrically; each block is drawn under the family
    measure whose first-coordinate mean best moves the running mean
    toward the current grid target. A target counts as visited once
    some post-block running mean lands within ``cluster_tolerance``.
    """
    _require_sequence_dependence(config)
    if config.dependence.mode != "per_measure_independent":
        raise ValueError("the cluster sampler switches measures between "
                         "blocks and requires independent draws")
    family = config.family
    (mu_low, _), (mu_up, _) = _mean_extremes(config.family)
    if mu_up - mu_low < config.cluster_grid_step:
        raise ValueError("mean interval is narrower than the target grid step")

    n_targets = int(round((mu_up - mu_low) / config.cluster_grid_step)) + 1
    targets = np.linspace(mu_low, mu_up, n_targets)
    params = _dense_parameters(family)
    means = np.array(
        [family.measure_at(t).marginal(0).mean() for t in params]
    )

    def nearest_theta(desired: float):
        return params[int(np.argmin(np.abs(means - desired)))]

    stream = philox_stream(config.seed, _CTX_CLUSTER, 0)
    consumed = 0
    total = 0.0
    v = 0.0
    active = 0
    best = np.full(n_targets, np.inf)
    rows = []
    max_blocks = 30 * n_targets

    for block in range(max_blocks):
        if active >= n_targets or consumed >= config.horizon:
            break
        n_next = config.block_start if consumed == 0 else int(
            math.ceil(consumed * config.block_growth)
        )
        n_next = min(n_next, config.horizon)
        count = n_next - consumed
        if count <= 0:
            break
        goal = float(targets[active])
        if consumed == 0:
            desired = goal
        else:
            r = consumed / n_next
            desired = (goal - r * v) / (1.0 - r)
        desired = min(max(desired, mu_low), mu_up)
        theta = nearest_theta(desired)
        marginal = family.measure_at(theta).marginal(0)
        block_sum = 0.0
        for start, stop in _chunk_ranges(count, 1 << 22):
            u = stream.random(stop - start)
            block_sum += float(marginal.ppf(u).sum())
        total += block_sum
        consumed = n_next
        v = total / consumed
        best = np.minimum(best, np.abs(targets - v))
        dist = abs(v - goal)
        rows.append((block, consumed, marginal.mean(), goal, v, dist))
        if dist <= config.cluster_advance_tolerance:
            active += 1

    visited = best <= config.cluster_tolerance
    coverage = float(visited.mean())
    passed = coverage >= config.cluster_coverage_target
    summary = {
        "mean_interval": [mu_low, mu_up],
        "targets": [float(t) for t in targets],
        "coverage": coverage,
        "coverage_target": config.cluster_coverage_target,
        "blocks": len(rows),
        "draws": consumed,
        "unvisited": [float(t) for t, ok in zip(targets, visited) if not ok],
    }
    tables = {
        "cluster": (
            ("block", "n", "block_mean", "target", "running_mean", "distance"),
            tuple(rows),
        )
    }
    return ExperimentResult(
        mode="cluster",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=passed,
        summary=summary,
        tables=tables,
        assumptions=(
            "visiting every grid target on a finite trajectory is a "
            "consistency check for the cluster of running-mean limit "
            "points, not a proof of it",
        ),
    )


# ---------------------------------------------------------------------------
# Iterated logarithm: normalized fluctuations at geometric checkpoints.


def _iterated_log(n: np.ndarray) -> np.ndarray:
    inner = np.log(np.maximum(n, math.e))
    return np.log(np.maximum(inner, math.e))


def _lil_norming(n: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0 * n * _iterated_log(n))


def _geometric_checkpoints(start: int, stop: int, growth: float) -> np.ndarray:
    points = [start]
    n = start
    while n < stop:
        n = max(n + 1, int(math.floor(n * growth)))
        points.append(min(n, stop))
    return np.array(sorted(set(points)), dtype=np.int64)


def run_lil(config: ExperimentConfig) -> ExperimentResult:
    """Normalized fluctuation extremes at geometric checkpoints.

    For each trajectory, ``r_upper`` is the largest value over the
    checkpoints of ``(S_n - n*mu_up) / sqrt(2 n loglog n)`` and
    ``r_lower`` the smallest value of the mirrored statistic centered
    at ``mu_low``. The run passes when the fraction of trajectories
    with ``r_upper`` at most ``sigma_up * (1 + lil_epsilon)`` reaches
    the configured quantile; the mirrored side is reported alongside.
    """
    _require_sequence_dependence(config)
    family = config.family
    (mu_low, theta_low), (mu_up, theta_up) = _mean_extremes(family)
    sigma_up = math.sqrt(_sup_centered_second_moment(family, mu_up))
    sigma_low = math.sqrt(_sup_centered_second_moment(family, mu_low))
    measures = [("mean_low", theta_low)]
    if theta_up != theta_low:
        measures.append(("mean_up", theta_up))
    checkpoints = _geometric_checkpoints(
        config.burn_in, config.horizon, config.checkpoint_growth
    )
    norming = _lil_norming(checkpoints.astype(float))

    def run_batch(item):
        m_idx, (label, theta), cols = item
        marginal = family.measure_at(theta).marginal(0)
        streams = _column_streams(config.seed, _CTX_LIL + m_idx, cols)
        carry = np.zeros(len(cols))
        r_up = np.full(len(cols), -np.inf)
        r_low = np.full(len(cols), np.inf)
        for start, stop in _chunk_ranges(config.horizon, _rows_per_chunk(len(cols))):
            u = _draw_uniform(streams, stop - start)
            x = _transform_chunk(u, marginal, config.dependence)
            s = carry + np.cumsum(x, axis=0)
            carry = s[-1].copy()
            mask = (checkpoints > start) & (checkpoints <= stop)
            if mask.any():
                cps = checkpoints[mask]
                s_cp = s[cps - start - 1]
                a_cp = norming[mask][:, None]
                up = (s_cp - cps[:, None] * mu_up) / a_cp
                low = (s_cp - cps[:, None] * mu_low) / a_cp
                r_up = np.maximum(r_up, up.max(axis=0))
                r_low = np.minimum(r_low, low.min(axis=0))
        return [
            (label, col, float(a), float(b))
            for col, a, b in zip(cols, r_up, r_low)
        ]

    tasks = [
        (m_idx, measure, cols)
        for m_idx, measure in enumerate(measures)
        for cols in _traj_batches(config.trajectories)
    ]
    batches = _indexed_map(run_batch, tasks, config.workers)

    up_cap = sigma_up * (1.0 + config.lil_epsilon)
    low_cap = -sigma_low * (1.0 + config.lil_epsilon)
    rows = []
    ok_up = ok_low = total = 0
    for batch in batches:
        for label, col, a, b in batch:
            good_up = a <= up_cap + 1e-12
            good_low = b >= low_cap - 1e-12
            ok_up += good_up
            ok_low += good_low
            total += 1
            rows.append((label, col, a, b, int(good_up), int(good_low)))
    frac_up = ok_up / total
    frac_low = ok_low / total
    passed = frac_up >= config.lil_quantile

    summary = {
        "sigma_upper": sigma_up,
        "sigma_lower": sigma_low,
        "upper_cap": up_cap,
        "lower_cap": low_cap,
        "fraction_upper_ok": frac_up,
        "fraction_lower_ok": frac_low,
        "quantile": config.lil_quantile,
        "checkpoints": int(checkpoints.size),
        "horizon": config.horizon,
    }
    tables = {
        "lil": (
            ("measure", "trajectory", "r_upper", "r_lower", "ok_upper", "ok_lower"),
            tuple(rows),
        )
    }
    return ExperimentResult(
        mode="lil",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=passed,
        summary=summary,
        tables=tables,
        assumptions=(
            "fluctuations are sampled at geometric checkpoints, so the "
            "statistic slightly undershoots the running supremum",
        ),
    )


# ---------------------------------------------------------------------------
# Necessity of the first-moment integral: divergence of running means.


def run_necessity(config: ExperimentConfig) -> ExperimentResult:
    """Diagnose divergence of |S_k|/k against the tail-integral test.

    When the upper tail integral of ``|X_1|`` diverges the running mean
    must exceed any fixed threshold along almost every trajectory;
    when it is finite the running means stay bounded. The run reports
    the fraction of trajectories whose running max of ``|S_k|/k``
    exceeds ``divergence_threshold`` and matches it against the
    integral's divergence flag.
    """
    _require_sequence_dependence(config)
    family = config.family
    if not family.is_singleton:
        raise ValueError(
            "the divergence check draws from a single law; use a singleton family"
        )
    marginal = family.measure_at(family.grid_parameters()[0]).marginal(0)
    engine = SublinearEngine(family, seed=config.seed)
    tail = engine.choquet(TestFunction.abs_power(1.0), capacity="upper")

    def run_batch(cols):
        streams = _column_streams(config.seed, _CTX_NECESSITY, cols)
        carry = np.zeros(len(cols))
        peak = np.zeros(len(cols))
        for start, stop in _chunk_ranges(config.horizon, _rows_per_chunk(len(cols))):
            u = _draw_uniform(streams, stop - start)
            x = _transform_chunk(u, marginal, config.dependence)
            s = carry + np.cumsum(x, axis=0)
            carry = s[-1].copy()
            k = np.arange(start + 1, stop + 1, dtype=float)[:, None]
            peak = np.maximum(peak, np.abs(s / k).max(axis=0))
        return [(col, float(p)) for col, p in zip(cols, peak)]

    batches = _indexed_map(
        run_batch, _traj_batches(config.trajectories), config.workers
    )
    rows = []
    exceed = 0
    for batch in batches:
        for col, peak in batch:
            hit = peak > config.divergence_threshold
            exceed += hit
            rows.append((col, peak, int(hit)))
    exceed_fraction = exceed / config.trajectories

    if tail.divergent:
        passed = exceed_fraction >= config.divergence_quantile
        verdict = "divergent tail integral with exceedances" if passed else (
            "divergent tail integral but too few exceedances"
        )
    else:
        passed = exceed == 0
        verdict = "finite tail integral with bounded running means" if passed else (
            "finite tail integral yet running means exceeded the threshold"
        )

    summary = {
        "tail_integral": tail.value,
        "tail_integral_divergent": tail.divergent,
        "tail_exponent": tail.tail_exponent,
        "threshold": config.divergence_threshold,
        "exceed_fraction": exceed_fraction,
        "required_fraction": config.divergence_quantile,
        "verdict": verdict,
    }
    tables = {
        "necessity": (("trajectory", "max_abs_ratio", "exceeded"), tuple(rows))
    }
    return ExperimentResult(
        mode="necessity",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=passed,
        summary=summary,
        tables=tables,
        assumptions=(
            "a finite-horizon exceedance frequency is a qualitative proxy "
            "for almost-sure divergence",
            "the converse direction assumes capacity continuity, which "
            "this run does not certify",
        ),
    )


def borel_cantelli_diag(
    capacities, late_event_frequency: float | None = None
) -> dict:
    """First Borel-Cantelli consistency check on a capacity series.

    Heuristically classifies the series of event capacities as summable
    or not from its partial sums, and, when a late-event frequency is
    supplied, flags the combination "summable series but events keep
    happening" as inconsistent.
    """
    caps = np.asarray(list(capacities), dtype=float)
    if caps.size == 0 or np.any(caps < -1e-12) or np.any(caps > 1.0 + 1e-12):
        raise ValueError("capacities must be a non-empty sequence in [0, 1]")
    partial = np.cumsum(caps)
    total = float(partial[-1])
    tail_start = max(1, int(0.75 * caps.size))
    tail_mass = float(caps[tail_start:].sum())
    looks_summable = bool(
        caps.size >= 8
        and tail_mass <= 0.05 * (1.0 + total)
        and caps[-1] <= 1e-3
    )
    consistent = None
    if late_event_frequency is not None:
        if looks_summable:
            consistent = late_event_frequency <= 0.01
        else:
            consistent = True
    return {
        "partial_sums": tuple(float(s) for s in partial),
        "total": total,
        "looks_summable": looks_summable,
        "late_event_frequency": late_event_frequency,
        "consistent": consistent,
    }


# ---------------------------------------------------------------------------
# Tail-bound sweep: empirical capacities of centered sums vs every bound.


def _max_term_capacity(
    marginals, n: int, y: float, dependence: DependenceSpec
) -> float:
    """Upper capacity that some one of the first n terms reaches y.

    Exact per measure for independent draws; a union bound otherwise.
    """
    survivals = np.array([m.sf(y) for m in marginals])
    if dependence.mode == "per_measure_independent":
        return float(np.max(1.0 - (1.0 - survivals) ** n))
    return float(min(1.0, n * np.max(survivals)))


def run_bound_check(config: ExperimentConfig) -> ExperimentResult:
    """Empirical tail capacities of centered sums against all bounds.

    Coordinates are recentered by the largest worst-case mean so that
    every centered mean is non-positive. For a log-spaced grid of
    thresholds the empirical upper and lower capacities of
    ``{S_n >= x}`` are compared against the exponential, split-moment,
    power, second-moment and positive-part-moment bounds, and the
    lower capacity against the conjugate forms. A flag is raised when
    an empirical frequency exceeds its bound by more than three
    standard errors. Joint-table dependence is enumerated exactly;
    everything else is sampled per measure.
    """
    family = config.family
    joint = config.dependence.mode == "discrete_joint"
    if config.dependence.mode == "gaussian_copula" and not family.is_singleton:
        raise ValueError("the pairwise copula requires a single-measure family")
    p = config.bound_order
    K = max(family.K, config.dependence.K)
    constants = DerivedConstants.for_order(p)

    if joint:
        points, probs = config.dependence.joint_arrays()
        n = points.shape[0]
        if config.horizon != n:
            raise ValueError(
                f"joint table has {n} coordinates; set horizon to match, "
                f"got {config.horizon}"
            )
        center = float((points @ probs).max())
        pc = points - center
        variance_sum = float((pc**2 @ probs).sum())
        pos_moment_sum = float((np.clip(pc, 0.0, None) ** p @ probs).sum())
        abs_moment_sum = float((np.abs(pc) ** p @ probs).sum())
        per_term_choquet = [
            float(np.clip(pc[k], 0.0, None) ** p @ probs) for k in range(n)
        ]
        joint_sums = pc.sum(axis=0)
        joint_peaks = pc.max(axis=0)

        def max_term(y: float) -> float:
            return float(probs[joint_peaks >= y - 1e-12].sum())

    else:
        n = config.horizon
        (_, _), (mu_up, _) = _mean_extremes(family)
        center = mu_up
        centered = _shifted_family(family, -center)
        thetas = centered.grid_parameters()
        marginals = [centered.measure_at(t).marginal(0) for t in thetas]
        variance_sum = n * _sup_centered_second_moment(family, center)
        pos_moment, _ = _dense_extreme(
            centered, lambda m: m.pos_part_moment(p), "max"
        )
        abs_moment, _ = _dense_extreme(centered, lambda m: m.abs_moment(p), "max")
        pos_moment_sum = n * pos_moment
        abs_moment_sum = n * abs_moment
        engine = SublinearEngine(centered, seed=config.seed)
        choquet_pos = engine.choquet(
            TestFunction.pos_power(float(p)), capacity="upper"
        )
        per_term_choquet = [choquet_pos.value] * n

        def max_term(y: float) -> float:
            return _max_term_capacity(marginals, n, y, config.dependence)

    sigma = math.sqrt(variance_sum)
    lo_mult, hi_mult = config.x_grid_range
    x_grid = np.geomspace(lo_mult * sigma, hi_mult * sigma, config.x_grid_points)

    # Empirical tail capacities on the threshold grid.
    if joint:
        freq = np.array(
            [float(probs[joint_sums >= x - 1e-12].sum()) for x in x_grid]
        )
        emp_upper = emp_lower = freq
        emp_upper_se = emp_lower_se = np.zeros_like(freq)
    else:

        def tail_stats(item):
            k, marginal = item
            m_traj = config.trajectories
            streams = _column_streams(config.seed, _CTX_BOUNDS + k, range(m_traj))
            sums = np.zeros(m_traj)
            for start, stop in _chunk_ranges(n, _rows_per_chunk(m_traj)):
                u = _draw_uniform(streams, stop - start)
                x = _transform_chunk(u, marginal, config.dependence)
                sums += x.sum(axis=0)
            f = np.array([(sums >= x).mean() for x in x_grid])
            return f, np.sqrt(f * (1.0 - f) / m_traj)

        stats = _indexed_map(tail_stats, enumerate(marginals), config.workers)
        freqs = np.stack([f for f, _ in stats])
        ses = np.stack([s for _, s in stats])
        cols = np.arange(x_grid.size)
        i_up = np.argmax(freqs, axis=0)
        i_low = np.argmin(freqs, axis=0)
        emp_upper, emp_upper_se = freqs[i_up, cols], ses[i_up, cols]
        emp_lower, emp_lower_se = freqs[i_low, cols], ses[i_low, cols]

    y_grid = np.geomspace(0.01 * sigma, 10.0 * sigma, 25)
    r_grid = (0.5, 1.0, 2.0, 4.0, 8.0)
    base_inputs = BoundInputs(n=n, variance_sum=variance_sum, K=K)

    def best_truncated(x: float, calculator) -> float:
        best = math.inf
        for y in y_grid:
            inputs = BoundInputs(
                n=n, variance_sum=variance_sum, K=K, truncation=float(y)
            )
            best = min(best, float(calculator(inputs, x)) + max_term(float(y)))
        return best

    def upper_bounds(x: float) -> dict[str, float]:
        out = {"exponential": best_truncated(x, kolmogorov_exponential_bound)}
        split_inputs = BoundInputs(
            n=n,
            variance_sum=variance_sum,
            K=K,
            order=p,
            pos_moment_sum=pos_moment_sum,
            split=config.bound_delta,
        )
        out["split"] = float(split_moment_bound(split_inputs, x, constants))
        best = math.inf
        for r in r_grid:
            inputs_r = BoundInputs(n=n, variance_sum=variance_sum, K=K, tail_power=r)
            best = min(best, float(power_tail_bound(inputs_r, x)) + max_term(x / r))
        out["power"] = best
        out["chebyshev"] = float(chebyshev_bound(base_inputs, x))
        moment = choquet_moment_bound(
            BoundInputs(n=n, variance_sum=variance_sum, K=K, order=p),
            per_term_choquet,
            constants,
        )
        out["positive_moment"] = moment / x**p
        return out

    def lower_bounds(x: float) -> dict[str, float]:
        out = {"conj_exponential": best_truncated(x, conjugate_exponential_bound)}
        split_inputs = BoundInputs(
            n=n,
            variance_sum=variance_sum,
            K=K,
            order=p,
            abs_moment_sum=abs_moment_sum,
            split=config.bound_delta,
        )
        out["conj_split"] = float(conjugate_split_bound(split_inputs, x, constants))
        out["conj_chebyshev"] = float(conjugate_chebyshev_bound(base_inputs, x))
        return out

    upper_names = ("exponential", "split", "power", "chebyshev", "positive_moment")
    lower_names = ("conj_exponential", "conj_split", "conj_chebyshev")
    rows = []
    flags = []
    for i, x in enumerate(x_grid):
        ub = upper_bounds(float(x))
        lb = lower_bounds(float(x))
        for name in upper_names:
            if emp_upper[i] > ub[name] + 3.0 * emp_upper_se[i] + 1e-12:
                flags.append((float(x), name, float(emp_upper[i]), ub[name]))
        for name in lower_names:
            if emp_lower[i] > lb[name] + 3.0 * emp_lower_se[i] + 1e-12:
                flags.append((float(x), name, float(emp_lower[i]), lb[name]))
        rows.append(
            (
                float(x),
                float(emp_upper[i]),
                float(emp_upper_se[i]),
                *(ub[name] for name in upper_names),
                float(emp_lower[i]),
                float(emp_lower_se[i]),
                *(lb[name] for name in lower_names),
            )
        )

    summary = {
        "n": n,
        "order": p,
        "K": K,
        "center": center,
        "variance_sum": variance_sum,
        "pos_moment_sum": pos_moment_sum,
        "abs_moment_sum": abs_moment_sum,
        "per_term_choquet_pos": per_term_choquet[0] if per_term_choquet else 0.0,
        "x_grid": [float(x) for x in x_grid],
        "flags": flags,
        "estimator": "exact" if joint else "mc",
        "trajectories_per_measure": 0 if joint else config.trajectories,
    }
    header = (
        "x",
        "emp_upper",
        "emp_upper_se",
        *("bound_" + name for name in upper_names),
        "emp_lower",
        "emp_lower_se",
        *("bound_" + name for name in lower_names),
    )
    tables = {"bound_check": (header, tuple(rows))}
    return ExperimentResult(
        mode="bound_check",
        config_hash=config.config_hash(),
        seed=config.seed,
        passed=not flags,
        summary=summary,
        tables=tables,
        assumptions=(
            "empirical capacities get three standard errors of headroom",
            "the max-term capacity uses the exact i.i.d. form for "
            "independent draws and a union bound otherwise",
        ),
    )


_RUNNERS = {
    "wlln": run_wlln,
    "slln": run_slln,
    "cluster": run_cluster,
    "lil": run_lil,
    "necessity": run_necessity,
    "bound_check": run_bound_check,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Dispatch to the runner named by ``config.mode``."""
    return _RUNNERS[config.mode](config)
