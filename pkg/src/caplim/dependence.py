"""Dependence structures for sequences, and verifiers for their defining
inequalities.

Three constructions are supported. ``per_measure_independent`` draws the
coordinates independently under each measure of the family; the envelope over
the family is then negatively dependent with constant K = 1 even though it is
generally not (extended) independent. ``gaussian_copula`` couples the
coordinates of a single-measure family through nonpositively correlated
Gaussians, with the dominating constant declared, never inferred.
``discrete_joint`` takes an explicit joint probability table over a few
coordinates.

The verifiers compute both sides of the defining inequality

    envelope_E[ prod_i g_i(X_i) ] <= K * prod_i envelope_E[ g_i(X_i) ]

for nonnegative bounded test functions that are all nondecreasing (upper
direction) or all nonincreasing (lower direction), on exact paths where the
structure allows and by common-random-number Monte Carlo otherwise. The
extended-independence verifier tests the equality variant with no
monotonicity requirement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .measures import MeasureFamily, ProductMeasure, philox_stream, uniform_block
from .sublinear import TestFunction, marginal_expectation, smooth_indicator

__all__ = [
    "DependenceSpec",
    "EndReport",
    "SequenceSampler",
    "correlate_pairs",
    "verify_end",
    "verify_extended_independence",
]

_MODES = ("per_measure_independent", "gaussian_copula", "discrete_joint")


@dataclass(frozen=True)
class DependenceSpec:
    """Declares how a sequence of coordinates is coupled.

    ``correlation`` is the common within-pair correlation of the Gaussian
    copula (consecutive coordinates are paired; it must be nonpositive).
    ``correlation_matrix`` may be given instead for a full joint Gaussian
    coupling. ``joint_atoms`` lists ((x_1, ..., x_d), probability) entries of
    an explicit joint table. ``K`` is the declared dominating constant.
    """

    mode: str
    K: float = 1.0
    correlation: float | None = None
    correlation_matrix: tuple | None = None
    joint_atoms: tuple | None = None

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not self.K >= 1.0:
            raise ValueError(f"dominating constant K must be >= 1, got {self.K}")
        if self.mode == "gaussian_copula":
            if self.correlation is None and self.correlation_matrix is None:
                raise ValueError("gaussian_copula needs correlation or correlation_matrix")
            if self.correlation is not None and not -1.0 < self.correlation <= 0.0:
                raise ValueError(f"pair correlation must lie in (-1, 0], got {self.correlation}")
            if self.correlation_matrix is not None:
                mat = np.asarray(self.correlation_matrix, dtype=float)
                if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                    raise ValueError("correlation_matrix must be square")
                if not np.allclose(np.diag(mat), 1.0):
                    raise ValueError("correlation_matrix must have unit diagonal")
                off = mat - np.diag(np.diag(mat))
                if np.any(off > 1e-12):
                    raise ValueError("correlation_matrix off-diagonals must be nonpositive")
                eigs = np.linalg.eigvalsh(mat)
                if eigs.min() < -1e-10:
                    raise ValueError("correlation_matrix must be positive semidefinite")
        if self.mode == "discrete_joint":
            if not self.joint_atoms:
                raise ValueError("discrete_joint needs joint_atoms")
            dims = {len(coords) for coords, _ in self.joint_atoms}
            if len(dims) != 1:
                raise ValueError("joint atoms must share one coordinate count")
            d = dims.pop()
            if d > 6:
                raise ValueError(f"joint tables support at most 6 coordinates, got {d}")
            for i in range(d):
                values = {coords[i] for coords, _ in self.joint_atoms}
                if len(values) > 5:
                    raise ValueError(f"coordinate {i} has {len(values)} distinct values, max is 5")
            probs = np.array([p for _, p in self.joint_atoms], dtype=float)
            if np.any(probs < -1e-15):
                raise ValueError("joint probabilities must be nonnegative")
            if abs(float(probs.sum()) - 1.0) > 1e-12:
                raise ValueError(f"joint probabilities sum to {probs.sum()}, not 1")

    @property
    def joint_arity(self) -> int:
        if self.joint_atoms is None:
            raise ValueError("no joint table in this spec")
        return len(self.joint_atoms[0][0])

    def joint_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint table as ((d, M) coordinates, (M,) probabilities)."""
        coords = np.array([c for c, _ in self.joint_atoms], dtype=float).T
        probs = np.array([p for _, p in self.joint_atoms], dtype=float)
        return coords, probs

    @staticmethod
    def independent() -> "DependenceSpec":
        return DependenceSpec(mode="per_measure_independent", K=1.0)


def correlate_pairs(z: np.ndarray, rho: float) -> np.ndarray:
    """Couple consecutive rows of independent standard normals pairwise.

    Rows (0,1), (2,3), ... become correlated with coefficient rho; an odd
    trailing row is left untouched. Marginals stay standard normal.
    """
    out = np.array(z, dtype=float, copy=True)
    n = out.shape[0]
    pairs = n // 2
    if pairs and rho != 0.0:
        lead = out[0 : 2 * pairs : 2]
        out[1 : 2 * pairs : 2] = rho * lead + math.sqrt(1.0 - rho**2) * out[1 : 2 * pairs : 2]
    return out


_U_FLOOR = 1e-300


@dataclass
class SequenceSampler:
    """Seeded sampler of coordinate blocks under a dependence spec.

    ``draw`` returns an (n, m) block: n sequence coordinates by m independent
    replications, with replication j fed from the counter-based stream
    (seed, context, j), so blocks are reproducible regardless of how callers
    chunk or parallelize replications.
    """

    spec: DependenceSpec
    family: MeasureFamily
    seed: int = 2026
    context: int = 0
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.spec.mode == "gaussian_copula":
            if not self.family.is_singleton:
                raise ValueError(
                    "the Gaussian copula coupling is defined for a single measure; "
                    "combine it with a singleton family"
                )
            if self.spec.correlation_matrix is not None:
                mat = np.asarray(self.spec.correlation_matrix, dtype=float)
                # tiny jitter keeps Cholesky happy at semidefinite boundaries
                self._chol = np.linalg.cholesky(mat + 1e-12 * np.eye(len(mat)))

    def draw(self, n: int, m: int, measure: ProductMeasure | None = None,
             context: int | None = None) -> np.ndarray:
        ctx = self.context if context is None else context
        mode = self.spec.mode

        if mode == "discrete_joint":
            if n != self.spec.joint_arity:
                raise ValueError(f"joint table has {self.spec.joint_arity} coordinates, asked for {n}")
            coords, probs = self.spec.joint_arrays()
            cum = np.cumsum(probs)
            u = uniform_block(self.seed, 1, m, context=ctx)[0]
            idx = np.minimum(np.searchsorted(cum, u, side="left"), len(probs) - 1)
            return coords[:, idx]

        if measure is None:
            if mode == "per_measure_independent" and not self.family.is_singleton:
                raise ValueError("pass the measure to draw under for a non-singleton family")
            measure = self.family.measures()[0][1]

        if mode == "per_measure_independent":
            u = uniform_block(self.seed, n, m, context=ctx)
            out = np.empty_like(u)
            for i in range(n):
                out[i] = measure.marginal(i).ppf(u[i])
            return out

        # gaussian_copula
        u = uniform_block(self.seed, n, m, context=ctx)
        z = special.ndtri(np.clip(u, _U_FLOOR, 1.0 - 1e-16))
        if self._chol is not None:
            if n != self._chol.shape[0]:
                raise ValueError("sequence length must match the correlation matrix size")
            z = self._chol @ z
        else:
            z = correlate_pairs(z, float(self.spec.correlation))
        out = np.empty_like(z)
        for i in range(n):
            marg = measure.marginal(i)
            if marg.kind == "normal":
                mean, var = marg.params
                out[i] = mean + math.sqrt(var) * z[i]
            else:
                out[i] = marg.ppf(special.ndtr(z[i]))
        return out


@dataclass(frozen=True)
class EndReport:
    """Outcome of a dependence verification sweep."""

    kind: str
    direction: str | None
    K: float
    passed: bool
    worst_margin: float
    worst_case: str
    n_cases: int
    cases: tuple = ()

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "direction": self.direction,
            "K": self.K,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_case": self.worst_case,
            "n_cases": self.n_cases,
        }


def _audit_box(family: MeasureFamily, spec: DependenceSpec, n: int) -> list[tuple[float, float]]:
    if spec.mode == "discrete_joint":
        coords, _ = spec.joint_arrays()
        return [(float(coords[i].min()) - 1.0, float(coords[i].max()) + 1.0)
                for i in range(coords.shape[0])]
    box = []
    for i in range(n):
        lo, hi = math.inf, -math.inf
        for _, mu in family.measures():
            marg = mu.marginal(i)
            lo = min(lo, float(marg.ppf(1e-9)))
            hi = max(hi, float(marg.ppf(1.0 - 1e-9)))
        box.append((max(lo, -1e8), min(hi, 1e8)))
    return box


def _audit_monotone(g: TestFunction, direction: str | None, lo: float, hi: float,
                    points: int = 256) -> None:
    """Reject functions that fail the nonnegativity / monotonicity audit."""
    grid = np.linspace(lo, hi, points)
    vals = g(grid)
    scale = 1.0 + float(np.max(np.abs(vals)))
    if np.any(vals < -1e-12 * scale):
        raise ValueError(f"test function {g.name} takes negative values on the audit grid")
    if direction is None:
        return
    diffs = np.diff(vals)
    if direction == "upper" and np.any(diffs < -1e-9 * scale):
        raise ValueError(f"test function {g.name} is not nondecreasing on the audit grid")
    if direction == "lower" and np.any(diffs > 1e-9 * scale):
        raise ValueError(f"test function {g.name} is not nonincreasing on the audit grid")


def _reversed_smooth(threshold: float, width: float) -> TestFunction:
    base = smooth_indicator(threshold, width, "outer")
    return TestFunction(
        fn=lambda x, g=base.fn: 1.0 - g(x),
        arity=1,
        name=f"1-{base.name}",
        monotone="nonincreasing",
        nonnegative=True,
        sup_bound=1.0,
        breakpoints=base.breakpoints,
    )


def _abs_window(center: float, halfwidth: float) -> TestFunction:
    c, a = float(center), float(halfwidth)
    return TestFunction(
        fn=lambda x: np.abs(np.clip(x[0] - c, -a, a)),
        arity=1,
        name=f"|clip(x-{c:g})|",
        nonnegative=True,
        sup_bound=a,
        breakpoints=(c - a, c, c + a),
    )


def _corpus_function(rng: np.random.Generator, direction: str | None,
                     lo: float, hi: float) -> TestFunction:
    span = max(hi - lo, 1e-6)
    c = float(rng.uniform(lo + 0.1 * span, hi - 0.1 * span))
    w = float(rng.uniform(0.05, 0.4)) * span
    if direction == "upper":
        if rng.random() < 0.5:
            return smooth_indicator(c, w, "outer" if rng.random() < 0.5 else "inner")
        a = float(rng.uniform(0.2, 2.0))
        b = float(rng.uniform(0.0, 1.0))
        top = float(rng.uniform(0.5, 3.0))
        return TestFunction.clamp_affine(a, b, 0.0, top)
    if direction == "lower":
        if rng.random() < 0.5:
            return _reversed_smooth(c, w)
        a = -float(rng.uniform(0.2, 2.0))
        b = float(rng.uniform(0.0, 1.0))
        top = float(rng.uniform(0.5, 3.0))
        return TestFunction.clamp_affine(a, b, 0.0, top)
    pick = rng.random()
    if pick < 1.0 / 3.0:
        return smooth_indicator(c, w, "outer")
    if pick < 2.0 / 3.0:
        return _abs_window(c, w)
    a = float(rng.uniform(-2.0, 2.0))
    b = float(rng.uniform(0.0, 1.0))
    return TestFunction.clamp_affine(a, b, 0.0, float(rng.uniform(0.5, 3.0)))


# -- evaluation paths -------------------------------------------------------------


def _exact_envelope_sides(family: MeasureFamily, case: Sequence[TestFunction]):
    """(envelope of the product, product of envelopes) when exact paths exist."""
    per_theta = []
    per_coord_env = [-math.inf] * len(case)
    for _, mu in family.measures():
        prod = 1.0
        for i, g in enumerate(case):
            v = marginal_expectation(mu.marginal(i), g)
            if v is None:
                return None
            prod *= v
            per_coord_env[i] = max(per_coord_env[i], v)
        per_theta.append(prod)
    return max(per_theta), math.prod(per_coord_env)


def _joint_table_sides(spec: DependenceSpec, case: Sequence[TestFunction]):
    coords, probs = spec.joint_arrays()
    joint_vals = np.ones(coords.shape[1])
    prod_env = 1.0
    for i, g in enumerate(case):
        gi = g(coords[i])
        joint_vals *= gi
        prod_env *= float(np.dot(probs, gi))
    return float(np.dot(probs, joint_vals)), prod_env


def _mc_sides(sampler: SequenceSampler, case: Sequence[TestFunction], m: int,
              context: int):
    """Monte Carlo (joint mean, product of marginal means, pooled SE) per measure,
    enveloped across the family with shared uniforms."""
    best_joint = -math.inf
    env_means = None
    env_ses = None
    joint_se_at_best = 0.0
    for _, mu in sampler.family.measures():
        x = sampler.draw(len(case), m, measure=mu, context=context)
        gvals = np.stack([case[i](x[i]) for i in range(len(case))])
        joint_vals = np.prod(gvals, axis=0)
        joint = float(np.mean(joint_vals))
        if joint > best_joint:
            best_joint = joint
            joint_se_at_best = float(np.std(joint_vals, ddof=1) / math.sqrt(m))
        means = gvals.mean(axis=1)
        ses = gvals.std(axis=1, ddof=1) / math.sqrt(m)
        if env_means is None:
            env_means, env_ses = means, ses
        else:
            take = means > env_means
            env_means = np.where(take, means, env_means)
            env_ses = np.where(take, ses, env_ses)
    prod_env = float(np.prod(env_means))
    # delta-method spread of the product of envelope means
    prod_se = 0.0
    for i in range(len(case)):
        partial = np.prod(np.delete(env_means, i))
        prod_se += abs(float(partial)) * float(env_ses[i])
    pooled = math.sqrt(joint_se_at_best**2 + prod_se**2)
    return best_joint, prod_env, pooled


def _run_cases(kind: str, spec: DependenceSpec, family: MeasureFamily,
               all_cases: list[tuple[str, tuple[TestFunction, ...]]],
               direction: str | None, K: float, seed: int, mc_replications: int,
               mc_cross_check: bool) -> EndReport:
    sampler = SequenceSampler(spec, family, seed=seed)
    rows = []
    worst = math.inf
    worst_name = ""
    passed = True
    equality = kind == "extended_independence"

    for case_index, (name, case) in enumerate(all_cases):
        method = None
        se = 0.0
        if spec.mode == "discrete_joint":
            joint, prod_env = _joint_table_sides(spec, case)
            method = "enumeration"
        elif spec.mode == "per_measure_independent":
            sides = _exact_envelope_sides(family, case)
            if sides is not None:
                joint, prod_env = sides
                method = "exact"
        if method is None:
            joint, prod_env, se = _mc_sides(sampler, case, mc_replications,
                                            context=1000 + case_index)
            method = "mc"
        tolerance = 3.0 * se + 1e-9 * (1.0 + abs(joint) + abs(prod_env))
        if equality:
            gap = prod_env - joint
            margin = -abs(gap)
            ok = abs(gap) <= tolerance
        else:
            gap = None
            margin = K * prod_env - joint
            ok = margin >= -tolerance
        row = {
            "case": name,
            "joint": joint,
            "product_of_envelopes": prod_env,
            "margin": margin,
            "tolerance": tolerance,
            "method": method,
            "passed": ok,
        }
        if equality:
            row["gap"] = gap
        if mc_cross_check and method == "enumeration":
            mc_joint, mc_prod, mc_se = _mc_sides(sampler, case, mc_replications,
                                                 context=5000 + case_index)
            row["mc_joint"] = mc_joint
            row["mc_product"] = mc_prod
            row["mc_se"] = mc_se
            row["mc_agrees"] = (abs(mc_joint - joint) <= 4.0 * mc_se + 1e-9
                                and abs(mc_prod - prod_env) <= 4.0 * mc_se + 1e-9)
            ok = ok and row["mc_agrees"]
            row["passed"] = ok
        passed = passed and ok
        if margin < worst:
            worst = margin
            worst_name = name
        rows.append(row)

    return EndReport(
        kind=kind,
        direction=direction,
        K=K,
        passed=passed,
        worst_margin=worst,
        worst_case=worst_name,
        n_cases=len(rows),
        cases=tuple(rows),
    )


def verify_end(spec: DependenceSpec, family: MeasureFamily,
               g_case: Sequence[TestFunction] | None = None, *,
               direction: str = "upper", n: int | None = None,
               K: float | None = None, seed: int = 2026,
               mc_replications: int = 200_000, corpus_cases: int = 12,
               mc_cross_check: bool = False) -> EndReport:
    """Check the negative-dependence inequality over supplied and random cases.

    Every test function must be nonnegative, bounded, and monotone in the
    stated direction; each is audited on a 256-point grid per coordinate and
    rejected on violation. The report passes when the worst margin
    K*prod(envelopes) - envelope(product) stays above minus the statistical
    tolerance.
    """
    if direction not in ("upper", "lower"):
        raise ValueError(f"direction must be 'upper' or 'lower', got {direction!r}")
    K = spec.K if K is None else K
    if spec.mode == "discrete_joint":
        n = spec.joint_arity if n is None else n
        if n != spec.joint_arity:
            raise ValueError(f"joint table has {spec.joint_arity} coordinates, asked for {n}")
    elif n is None:
        n = len(g_case) if g_case is not None else 4

    box = _audit_box(family, spec, n)
    all_cases: list[tuple[str, tuple[TestFunction, ...]]] = []
    if g_case is not None:
        case = tuple(g_case)
        if len(case) != n:
            raise ValueError(f"expected {n} test functions, got {len(case)}")
        for i, g in enumerate(case):
            if g.sup_bound is None:
                raise ValueError(f"test function {g.name} declares no bound")
            _audit_monotone(g, direction, *box[i])
        all_cases.append(("supplied", case))
    for c in range(corpus_cases):
        rng = philox_stream(seed, context=77_000 + c, column=0)
        case = tuple(_corpus_function(rng, direction, *box[i]) for i in range(n))
        for i, g in enumerate(case):
            _audit_monotone(g, direction, *box[i])
        all_cases.append((f"corpus[{c}]", case))

    return _run_cases("end", spec, family, all_cases, direction, K, seed,
                      mc_replications, mc_cross_check)


def verify_extended_independence(spec: DependenceSpec, family: MeasureFamily,
                                 psi_case: Sequence[TestFunction] | None = None, *,
                                 n: int | None = None, seed: int = 2026,
                                 mc_replications: int = 200_000,
                                 corpus_cases: int = 12) -> EndReport:
    """Check the factorization equality for nonnegative test functions.

    No monotonicity is required and the supplied functions may be unbounded
    when an exact evaluation path exists (closed-form moments). The report
    passes only if every gap product_of_envelopes - envelope_of_product is
    zero within tolerance; genuinely non-linear envelopes are expected to fail
    here, and the gap quantifies by how much.
    """
    if spec.mode == "discrete_joint":
        n = spec.joint_arity if n is None else n
    elif n is None:
        n = len(psi_case) if psi_case is not None else 4

    box = _audit_box(family, spec, n)
    all_cases: list[tuple[str, tuple[TestFunction, ...]]] = []
    if psi_case is not None:
        case = tuple(psi_case)
        if len(case) != n:
            raise ValueError(f"expected {n} test functions, got {len(case)}")
        for i, g in enumerate(case):
            if not g.nonnegative:
                _audit_monotone(g, None, *box[i])
        all_cases.append(("supplied", case))
    for c in range(corpus_cases):
        rng = philox_stream(seed, context=88_000 + c, column=0)
        case = tuple(_corpus_function(rng, None, *box[i]) for i in range(n))
        all_cases.append((f"corpus[{c}]", case))

    return _run_cases("extended_independence", spec, family, all_cases, None,
                      spec.K, seed, mc_replications, False)
