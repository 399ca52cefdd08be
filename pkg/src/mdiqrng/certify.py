"""Private-entropy certification for the three-state protocol.

The protocol prepares |H>, |V> (test states) and |R> = (|H> + i|V>)/sqrt(2)
(generation state) and feeds them to an untrusted binary measurement box.
From the observed test success probabilities

    p_suc_h = p(outcome 0 | |H>),    p_suc_v = p(outcome 1 | |V>),

we bound the probability that an adversary who built the box (and may
correlate it with side information, classical or entangled) guesses the
outcome of a generation round. The adversary's most general strategy is a
convex mixture of qubit POVMs, one branch per value of her side information,
with her guess fixed per branch; the branch POVM elements N_a^e satisfy
N_0^e + N_1^e = q_e * I with sum_e q_e = 1, and the mixture must reproduce
the observed test statistics. Maximizing her total guess probability

    P_g = tr(w2 N_0^0) + tr(w2 N_1^1)

over that set is a small semidefinite program (`sdp_guessing_probability`).
The program admits an exact solution,

    P_g = (1 + |p_h - p_v|) / 2 + sqrt(min(p_h, p_v) * (1 - max(p_h, p_v))),

attained by mixing deterministic-outcome branches with projective
measurements tilted between the test basis and the generation axis;
`guessing_probability` evaluates it directly. A third, independent route
(`oracle_guessing_probability`) searches discretized strategy mixtures by
linear programming and can only ever reach values at or below the program's
optimum. The certified min-entropy per round is -log2(P_g).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

_W0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)          # |H><H|
_W1 = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)          # |V><V|
_R_KET = np.array([1.0, 1.0j]) / math.sqrt(2.0)
_W2 = np.outer(_R_KET, _R_KET.conj())                            # |R><R|


class InfeasibleStatisticsError(ValueError):
    """No strategy in the searched family reproduces the observed statistics."""


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def guessing_probability(p_suc_h: float, p_suc_v: float) -> float:
    """Maximal adversarial guessing probability compatible with the test scores.

    Exact optimum of the convex program described in the module docstring.
    Symmetric in its arguments, monotone non-increasing on [1/2, 1]^2 and
    always within [1/2, 1].
    """
    _check_probability("p_suc_h", p_suc_h)
    _check_probability("p_suc_v", p_suc_v)
    lo = min(p_suc_h, p_suc_v)
    hi = max(p_suc_h, p_suc_v)
    value = (1.0 + (hi - lo)) / 2.0 + math.sqrt(lo * (1.0 - hi))
    return min(1.0, max(0.5, value))


def sdp_guessing_probability(p_suc_h: float, p_suc_v: float, solver=None) -> float:
    """Numeric solve of the guessing-probability program (cvxpy SDP).

    Exists as an independent check of `guessing_probability`; both routes
    agree to ~1e-6. Variables: A = N_0^(guess 0), B = N_1^(guess 1) and the
    branch weights q0, q1.
    """
    _check_probability("p_suc_h", p_suc_h)
    _check_probability("p_suc_v", p_suc_v)
    import cvxpy as cp

    A = cp.Variable((2, 2), hermitian=True)
    B = cp.Variable((2, 2), hermitian=True)
    q0 = cp.Variable(nonneg=True)
    q1 = cp.Variable(nonneg=True)
    constraints = [
        A >> 0,
        B >> 0,
        q0 * np.eye(2) - A >> 0,
        q1 * np.eye(2) - B >> 0,
        q0 + q1 == 1,
        # p(0 | w0) = tr(w0 (A + q1 I - B)) = p_suc_h
        cp.real(cp.trace(_W0 @ A)) - cp.real(cp.trace(_W0 @ B)) + q1 == p_suc_h,
        # p(1 | w1) = tr(w1 (q0 I - A + B)) = p_suc_v
        q0 - cp.real(cp.trace(_W1 @ A)) + cp.real(cp.trace(_W1 @ B)) == p_suc_v,
    ]
    objective = cp.Maximize(cp.real(cp.trace(_W2 @ A)) + cp.real(cp.trace(_W2 @ B)))
    problem = cp.Problem(objective, constraints)
    if solver is None:
        solver = "CLARABEL" if "CLARABEL" in cp.installed_solvers() else "SCS"
    problem.solve(solver=solver)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"guessing-probability SDP did not solve: {problem.status}")
    return float(min(1.0, max(0.5, problem.value)))


def oracle_guessing_probability(p_suc_h: float, p_suc_v: float,
                                grid_resolution: int = 256) -> float:
    """Brute-force lower bound from a discretized strategy family.

    The family contains the two deterministic-outcome boxes plus rank-1
    projective measurements on a Bloch-sphere grid; a linear program finds
    the best convex mixture that reproduces the observed test statistics
    exactly. Because the family is a subset of the strategies admitted by
    the convex program, the result never exceeds `guessing_probability`
    beyond numerical tolerance.
    """
    _check_probability("p_suc_h", p_suc_h)
    _check_probability("p_suc_v", p_suc_v)
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be >= 64")
    from scipy.optimize import linprog

    # Projective measurement along axis n: test scores depend on n_z only,
    # the adversary's best guess on the generation state on |n_y|.
    theta = np.linspace(0.0, math.pi, grid_resolution)     # polar, includes both poles
    phi = np.linspace(0.0, 2.0 * math.pi, grid_resolution, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    n_z = np.cos(tt).ravel()
    n_y = (np.sin(tt) * np.sin(pp)).ravel()

    test_score = (1.0 + n_z) / 2.0            # p(0 | |H>) = p(1 | |V>)
    guess = (1.0 + np.abs(n_y)) / 2.0

    # Columns: projective atoms, then the always-0 and always-1 boxes.
    h_row = np.concatenate([test_score, [1.0, 0.0]])
    v_row = np.concatenate([test_score, [0.0, 1.0]])
    g_row = np.concatenate([guess, [1.0, 1.0]])
    ones = np.ones_like(h_row)

    a_eq = np.vstack([h_row, v_row, ones])
    b_eq = np.array([p_suc_h, p_suc_v, 1.0])
    result = linprog(-g_row, A_eq=a_eq, b_eq=b_eq,
                     bounds=(0.0, None), method="highs")
    if not result.success:
        raise InfeasibleStatisticsError(
            f"no mixture of the discretized strategies reproduces "
            f"(p_suc_h={p_suc_h}, p_suc_v={p_suc_v}): {result.message}")
    return float(-result.fun)


def min_entropy(p_g: float) -> float:
    """Certified min-entropy per round, -log2(p_g)."""
    if p_g <= 0.0:
        raise ValueError(f"guessing probability must be > 0, got {p_g!r}")
    if p_g > 1.0:
        raise ValueError(f"guessing probability must be <= 1, got {p_g!r}")
    return -math.log2(p_g)


def _floor_to(value: float, granularity: float = 1e-4) -> float:
    return math.floor(value / granularity) * granularity


@dataclass(frozen=True)
class Certificate:
    """Result of a certification run.

    min_entropy_per_bit is floored at 1e-4 granularity; rounding down is the
    security-safe direction. The per-detector probabilities are the inputs
    that matter; the averaged-input entropy is carried for display only.
    """

    p_suc_h: float
    p_suc_v: float
    guessing_probability: float
    min_entropy_per_bit: float
    method: str
    min_entropy_avg_inputs: float = 0.0

    def __post_init__(self):
        if not 0.5 <= self.guessing_probability <= 1.0:
            raise ValueError("guessing probability must lie in [1/2, 1]")
        if not 0.0 <= self.min_entropy_per_bit <= 1.0:
            raise ValueError("min-entropy per bit must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "p_suc_h": self.p_suc_h,
            "p_suc_v": self.p_suc_v,
            "p_g": self.guessing_probability,
            "h_min": self.min_entropy_per_bit,
            "h_min_avg_inputs": self.min_entropy_avg_inputs,
            "method": self.method,
            "tolerances": {"program": 1e-6, "h_min_floor": 1e-4},
            "notes": "per-round bound; no finite-statistics penalty applied",
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def certify(p_suc_h: float, p_suc_v: float, method: str = "numeric-program",
            grid_resolution: int = 256) -> Certificate:
    """Build a certificate from per-detector test success probabilities."""
    if method == "numeric-program":
        p_g = guessing_probability(p_suc_h, p_suc_v)
    elif method == "oracle":
        p_g = min(1.0, max(0.5, oracle_guessing_probability(
            p_suc_h, p_suc_v, grid_resolution)))
    else:
        raise ValueError(f"unknown certification method {method!r}")
    avg = (p_suc_h + p_suc_v) / 2.0
    p_g_avg = guessing_probability(avg, avg)
    return Certificate(
        p_suc_h=p_suc_h,
        p_suc_v=p_suc_v,
        guessing_probability=p_g,
        min_entropy_per_bit=_floor_to(min_entropy(p_g)),
        method=method,
        min_entropy_avg_inputs=_floor_to(min_entropy(p_g_avg)),
    )
