"""Independent numerical verification of the matching objectives' algebra.

Everything here works on free mean vectors in embedding space with plain
numpy, deliberately bypassing the tensor engine, networks, and pixels:
descent on the closed-form objectives isolates the claimed fixed points
(ratio-weighted mean for the vanilla objective, arithmetic mean for the
group-uniform one) and the convexity bound between the two losses.

The arithmetic-mean claim is exact for mse.  For mae the minimizer set is
the coordinate-wise median box (the mean lies inside it only in special
configurations such as two groups), and for cosine the stationary
direction matches the claimed one only when all group means share a norm;
those cases are reported as deviations, never silently asserted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

DISTANCES = ("mse", "mae", "cosine")
VARIANTS = ("vanilla", "fairdd")


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class FixedPointInstance:
    means: np.ndarray   # [num_groups, dim]
    ratios: np.ndarray  # [num_groups], positive, sums to 1
    distance: str
    variant: str

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "ratios", np.asarray(self.ratios, dtype=np.float64))
        if self.means.ndim != 2 or self.means.shape[0] != self.ratios.shape[0]:
            raise OracleError("means %s vs ratios %s" % (self.means.shape, self.ratios.shape))
        if np.any(self.ratios <= 0) or abs(self.ratios.sum() - 1.0) > 1e-12:
            raise OracleError("ratios must be positive and sum to 1 within 1e-12")
        if self.distance not in DISTANCES:
            raise OracleError("distance %r not in %s" % (self.distance, DISTANCES))
        if self.variant not in VARIANTS:
            raise OracleError("variant %r not in %s" % (self.variant, VARIANTS))
        if self.distance == "cosine" and np.any(np.linalg.norm(self.means, axis=1) == 0):
            raise OracleError("cosine instance requires nonzero group means")

    @property
    def num_groups(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class Prediction:
    vector: np.ndarray
    is_direction: bool = False
    asserted: bool = True
    caveat: Optional[str] = None


def _pair_distance(kind: str, u: np.ndarray, v: np.ndarray) -> float:
    if kind == "mse":
        return float(np.sum((u - v) ** 2))
    if kind == "mae":
        return float(np.sum(np.abs(u - v)))
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise OracleError("cosine distance with zero-norm vector")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def _pair_gradient(kind: str, target: np.ndarray, m: np.ndarray) -> np.ndarray:
    if kind == "mse":
        return 2.0 * (m - target)
    if kind == "mae":
        return np.sign(m - target)  # subgradient, 0 on the kink
    nm, nt = np.linalg.norm(m), np.linalg.norm(target)
    if nm == 0.0:
        raise OracleError("cosine gradient at zero-norm point")
    cos = np.dot(m, target) / (nm * nt)
    return -(target / (nm * nt) - cos * m / (nm * nm))


def loss_value(inst: FixedPointInstance, m: np.ndarray) -> float:
    """The class-level matching loss with a free mean vector m."""
    if inst.variant == "vanilla":
        target = inst.ratios @ inst.means
        return _pair_distance(inst.distance, target, m)
    return sum(_pair_distance(inst.distance, mu, m) for mu in inst.means)


def loss_gradient(inst: FixedPointInstance, m: np.ndarray) -> np.ndarray:
    if inst.variant == "vanilla":
        target = inst.ratios @ inst.means
        return _pair_gradient(inst.distance, target, m)
    grad = np.zeros_like(m)
    for mu in inst.means:
        grad += _pair_gradient(inst.distance, mu, m)
    return grad


def predicted_optimum(inst: FixedPointInstance) -> Prediction:
    """Closed-form stationary point of the matching objective.

    Vanilla: the ratio-weighted mean of group means (direction only for
    cosine).  Group-uniform: the arithmetic mean; for mae and cosine this
    is the claimed form, returned unasserted with a caveat.
    """
    if inst.variant == "vanilla":
        target = inst.ratios @ inst.means
        if inst.distance == "cosine":
            norm = np.linalg.norm(target)
            if norm == 0.0:
                raise OracleError("vanilla cosine: weighted mean has zero norm")
            return Prediction(target / norm, is_direction=True)
        return Prediction(target)

    mean = inst.means.mean(axis=0)
    if inst.distance == "mse":
        return Prediction(mean)
    if inst.distance == "mae":
        return Prediction(
            mean, asserted=False,
            caveat="mae minimizers form the coordinate-wise median box; the "
                   "arithmetic mean attains the minimum only in special cases "
                   "(e.g. two groups)")
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise OracleError("fairdd cosine: arithmetic mean has zero norm")
    return Prediction(
        mean / norm, is_direction=True, asserted=False,
        caveat="cosine stationary direction is the normalized sum of unit "
               "group means; it matches the arithmetic-mean direction only "
               "when all group means share a norm")


def _auto_lr(inst: FixedPointInstance, m0: np.ndarray) -> float:
    weight = 1.0 if inst.variant == "vanilla" else float(inst.num_groups)
    if inst.distance == "mse":
        return 0.25 / weight
    if inst.distance == "mae":
        return 0.05 * max(1.0, float(np.abs(inst.means).max()))
    # cosine gradients scale as 1/|m|^2; this keeps the rotation rate ~0.3/step
    return 0.3 * float(np.dot(m0, m0)) / weight


def _start_point(inst: FixedPointInstance) -> np.ndarray:
    # deterministic, generic: first group mean plus a small graded offset
    return inst.means[0] + 1e-3 * (1.0 + np.arange(inst.dim)) / inst.dim


def numerical_optimum(inst: FixedPointInstance, lr: Optional[float] = None,
                      tol: float = 1e-10, max_steps: int = 200_000) -> np.ndarray:
    """(Sub)gradient descent on the objective from a generic start.

    The mae step size halves whenever the loss stalls, so the iterate
    settles into the minimizer set instead of oscillating around it.
    Raises on non-convergence, carrying the trajectory tail.
    """
    m = _start_point(inst)
    step = _auto_lr(inst, m) if lr is None else float(lr)
    if step <= 0:
        raise OracleError("lr must be positive")
    best_m, best_loss = m.copy(), loss_value(inst, m)
    stall = 0
    tail: List[float] = []
    for _ in range(max_steps):
        g = loss_gradient(inst, m)
        delta = step * g
        m = m - delta
        if float(np.linalg.norm(delta)) < tol:
            return m
        if inst.distance == "mae":
            cur = loss_value(inst, m)
            if cur < best_loss - 1e-15:
                best_loss, best_m, stall = cur, m.copy(), 0
            else:
                stall += 1
                if stall >= 30:
                    step *= 0.5
                    m = best_m.copy()
                    stall = 0
        tail.append(float(np.linalg.norm(delta)))
        if len(tail) > 5:
            tail.pop(0)
    raise OracleError("no convergence in %d steps; last step norms %s" % (max_steps, tail))


def jensen_check(inst: FixedPointInstance, m: np.ndarray) -> float:
    """Margin L_uniform(m) - L_ratio(m); convexity makes it >= 0.

    Only convex distances qualify: cosine distance is not convex, so the
    bound carries no guarantee there and the request is rejected.
    """
    if inst.distance == "cosine":
        raise OracleError("jensen_check requires a convex distance (mse or mae)")
    m = np.asarray(m, dtype=np.float64)
    vanilla = FixedPointInstance(inst.means, inst.ratios, inst.distance, "vanilla")
    uniform = FixedPointInstance(inst.means, inst.ratios, inst.distance, "fairdd")
    return loss_value(uniform, m) - loss_value(vanilla, m)


# ---------------------------------------------------------------------------
# randomized verification suite
# ---------------------------------------------------------------------------

def random_instance(rng: np.random.Generator, distance: str, variant: str,
                    num_groups: Optional[int] = None, dim: Optional[int] = None
                    ) -> FixedPointInstance:
    a = int(rng.integers(2, 11)) if num_groups is None else num_groups
    d = int(rng.integers(2, 33)) if dim is None else dim
    means = rng.uniform(-2.0, 2.0, size=(a, d))
    if distance == "cosine":
        while np.any(np.linalg.norm(means, axis=1) < 0.3):
            means = rng.uniform(-2.0, 2.0, size=(a, d))
    ratios = rng.dirichlet(np.ones(a))
    ratios = np.maximum(ratios, 1e-6)
    ratios = ratios / ratios.sum()
    return FixedPointInstance(means, ratios, distance, variant)


def _direction_gap(u: np.ndarray, v: np.ndarray) -> float:
    return 1.0 - float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def _claim(name: str, deviation: float, tolerance: float, n: int,
           asserted: bool = True, note: Optional[str] = None) -> Dict:
    entry = {
        "claim": name,
        "max_deviation": float(deviation),
        "tolerance": float(tolerance),
        "instances": int(n),
        "asserted": asserted,
        "passed": bool(deviation <= tolerance) if asserted else None,
    }
    if note:
        entry["note"] = note
    return entry


def run_verification(instances: int = 500, jensen_pairs: int = 1000, seed: int = 0) -> Dict:
    """Check every analytic claim on randomized instances; returns a summary."""
    rng = np.random.default_rng(seed)
    claims: List[Dict] = []

    # vanilla fixed points: weighted mean for mse/mae, direction + scale for cosine
    for kind in ("mse", "mae"):
        worst = 0.0
        for _ in range(instances):
            inst = random_instance(rng, kind, "vanilla")
            m = numerical_optimum(inst, tol=1e-12 if kind == "mae" else 1e-10)
            worst = max(worst, float(np.linalg.norm(m - predicted_optimum(inst).vector)))
        claims.append(_claim("vanilla_%s_fixed_point" % kind, worst, 1e-5, instances))

    worst_dir, worst_scale = 0.0, 0.0
    for _ in range(instances):
        inst = random_instance(rng, "cosine", "vanilla")
        m = numerical_optimum(inst, tol=1e-8)
        pred = predicted_optimum(inst)
        worst_dir = max(worst_dir, _direction_gap(m, pred.vector))
        target = inst.ratios @ inst.means
        lam_defined = np.linalg.norm(m) / np.linalg.norm(target)
        lam_projected = float(np.dot(m, target) / np.dot(target, target))
        worst_scale = max(worst_scale,
                          abs(lam_projected - lam_defined) / max(1.0, lam_defined))
    claims.append(_claim("vanilla_cosine_direction", worst_dir, 1e-4, instances))
    claims.append(_claim("vanilla_cosine_scale_ratio", worst_scale, 1e-4, instances))

    # group-uniform fixed points
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, "mse", "fairdd")
        m = numerical_optimum(inst)
        worst = max(worst, float(np.linalg.norm(m - predicted_optimum(inst).vector)))
    claims.append(_claim("fairdd_mse_fixed_point", worst, 1e-5, instances))

    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, "mae", "fairdd", num_groups=2)
        m = numerical_optimum(inst, tol=1e-13)
        gap = abs(loss_value(inst, inst.means.mean(axis=0)) - loss_value(inst, m))
        worst = max(worst, gap)
    claims.append(_claim("fairdd_mae_two_group_mean_attains_minimum", worst, 1e-9, instances))

    # deviation reports for the unasserted general claims
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, "mae", "fairdd")
        m = numerical_optimum(inst, tol=1e-12)
        pred = predicted_optimum(inst)
        worst = max(worst, abs(loss_value(inst, pred.vector) - loss_value(inst, m)))
    claims.append(_claim("fairdd_mae_general_mean_deviation", worst, 0.0, instances,
                         asserted=False,
                         note="loss(arithmetic mean) - loss(numerical optimum); "
                              "nonzero values are expected, see module docstring"))

    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, "cosine", "fairdd")
        m = numerical_optimum(inst, tol=1e-8)
        pred = predicted_optimum(inst)
        worst = max(worst, _direction_gap(m, pred.vector))
    claims.append(_claim("fairdd_cosine_general_direction_deviation", worst, 0.0, instances,
                         asserted=False,
                         note="cosine gap between numerical direction and the "
                              "arithmetic-mean direction; nonzero values are expected"))

    # convexity bound between the two objectives
    worst_margin = np.inf
    for kind in ("mse", "mae"):
        for _ in range(jensen_pairs // 2):
            inst = random_instance(rng, kind, "fairdd")
            m = rng.uniform(-3.0, 3.0, size=inst.dim)
            worst_margin = min(worst_margin, jensen_check(inst, m))
    claims.append(_claim("uniform_bounds_ratio_objective", -worst_margin, 1e-9, jensen_pairs,
                         note="reports -min margin; passes when min margin >= -1e-9"))

    # duplicate-group tracking of the arithmetic-mean fixed point
    worst = 0.0
    for _ in range(max(instances // 10, 10)):
        inst = random_instance(rng, "mse", "fairdd")
        j = int(rng.integers(inst.num_groups))
        grown = FixedPointInstance(
            np.vstack([inst.means, inst.means[j]]),
            np.full(inst.num_groups + 1, 1.0 / (inst.num_groups + 1)),
            "mse", "fairdd")
        expected = grown.means.mean(axis=0)
        m = numerical_optimum(grown)
        worst = max(worst, float(np.linalg.norm(m - expected)))
    claims.append(_claim("duplicate_group_mean_tracking", worst, 1e-5,
                         max(instances // 10, 10)))

    asserted = [c for c in claims if c["asserted"]]
    return {
        "seed": seed,
        "instances": instances,
        "jensen_pairs": jensen_pairs,
        "claims": claims,
        "all_passed": all(c["passed"] for c in asserted),
    }
