"""Parallel-arc congestion game between a municipality and MSPs.

One unit of demand travels from an origin to a destination over parallel
arcs: public transport (arc 0, flat generalised cost ``p0 + V_T * ell0``)
and one arc per MSP whose generalised cost is ``p_j + V_T * ell_j(z)`` up to
the fleet capacity ``f_j`` and infinite beyond it.

The closed forms for affine delays follow from the MSP first-order
condition.  Note the signs: the optimal price is
``(p0 + V_T (ell0 - alpha) + c_tilde) / 2``, and the municipality optimum
has ``+ V_T (ell0 - alpha) - c_tilde`` in its numerator sum; both are checked
against brute-force price grids in the test-suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .game_core import MetricsTriple, WelfareWeights
from .solvers import RootProblem, find_root, maximize_1d, minimize_capped_simplex_potential


class AssumptionViolation(ValueError):
    pass


# -- congestion functions ----------------------------------------------------


class CongestionFn:
    """Convex, strictly increasing travel time ell(z) on [0, inf)."""

    kind = "custom"

    def __call__(self, z):
        raise NotImplementedError

    def derivative(self, z):
        raise NotImplementedError

    def inverse(self, y):
        """Flow at which the travel time reaches ``y``; 0 below ``ell(0)``."""
        raise NotImplementedError

    def inverse_derivative(self, y):
        return 1.0 / self.derivative(self.inverse(y))

    @property
    def is_affine(self) -> bool:
        return False


@dataclass(frozen=True)
class AffineCongestion(CongestionFn):
    alpha: float
    beta: float
    kind = "affine"

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError(f"affine congestion needs alpha >= 0, beta > 0 (got {self.alpha}, {self.beta})")

    def __call__(self, z):
        return self.alpha + self.beta * z

    def derivative(self, z):
        return self.beta

    def inverse(self, y):
        return max(y - self.alpha, 0.0) / self.beta

    def inverse_derivative(self, y):
        return 1.0 / self.beta

    @property
    def is_affine(self):
        return True


@dataclass(frozen=True)
class PowerCongestion(CongestionFn):
    """ell(z) = alpha + gamma * z**power with power >= 1."""

    alpha: float
    gamma: float
    power: float
    kind = "power"

    def __post_init__(self):
        if self.alpha < 0 or self.gamma <= 0 or self.power < 1:
            raise ValueError("power congestion needs alpha >= 0, gamma > 0, power >= 1")

    def __call__(self, z):
        return self.alpha + self.gamma * z ** self.power

    def derivative(self, z):
        return self.gamma * self.power * z ** (self.power - 1)

    def inverse(self, y):
        return (max(y - self.alpha, 0.0) / self.gamma) ** (1.0 / self.power)

    def inverse_derivative(self, y):
        u = y - self.alpha
        if u <= 0:
            return math.inf if self.power > 1 else 1.0 / self.gamma
        return (u / self.gamma) ** (1.0 / self.power) / (self.power * u)

    @property
    def is_affine(self):
        return self.power == 1


class BprCongestion(PowerCongestion):
    """BPR link performance t0 * (1 + a * (z / capacity) ** b)."""

    kind = "bpr"

    def __init__(self, free_flow_time: float, capacity: float, a: float = 0.15, b: float = 4.0):
        if free_flow_time <= 0 or capacity <= 0 or a <= 0:
            raise ValueError("BPR needs positive free-flow time, capacity and coefficient")
        object.__setattr__(self, "free_flow_time", free_flow_time)
        object.__setattr__(self, "capacity", capacity)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        super().__init__(alpha=free_flow_time, gamma=free_flow_time * a / capacity ** b, power=b)


class CustomCongestion(CongestionFn):
    """User-supplied convex increasing delay with its derivative and inverse.

    Consistency of the three callables is checked on sample points.
    """

    def __init__(self, fn: Callable, derivative: Callable, inverse: Callable,
                 samples: Sequence[float] = tuple(np.linspace(0.0, 2.0, 21))):
        self._fn, self._d, self._inv = fn, derivative, inverse
        prev_v, prev_d = -math.inf, -math.inf
        for z in samples:
            v, dv = fn(z), derivative(z)
            if v <= prev_v or dv < prev_d - 1e-12:
                raise AssumptionViolation("custom congestion must be strictly increasing and convex")
            if abs(inverse(v) - z) > 1e-10 * max(1.0, abs(z)):
                raise ValueError(f"inverse inconsistent with function at z={z}")
            h = 1e-6 * max(1.0, abs(z))
            fd = (fn(z + h) - fn(max(z - h, 0.0))) / (z + h - max(z - h, 0.0))
            if abs(fd - dv) > 1e-4 * max(1.0, abs(dv)):
                raise ValueError(f"derivative inconsistent with function at z={z}")
            prev_v, prev_d = v, dv

    def __call__(self, z):
        return self._fn(z)

    def derivative(self, z):
        return self._d(z)

    def inverse(self, y):
        if y <= self._fn(0.0):
            return 0.0
        return self._inv(y)


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class PtDelay:
    p0: float
    ell0_bar: float
    p0_max: float

    def __post_init__(self):
        if self.ell0_bar < 0 or self.p0_max <= 0 or not 0 <= self.p0 <= self.p0_max:
            raise ValueError(f"invalid public transport parameters {self}")


@dataclass(frozen=True)
class MspParams:
    trip_cost: float
    vehicle_cost: float
    emission_rate: float
    congestion: CongestionFn

    def __post_init__(self):
        if min(self.trip_cost, self.vehicle_cost, self.emission_rate) < 0:
            raise ValueError("MSP costs and emission rate must be non-negative")

    @property
    def c_tilde(self) -> float:
        return self.trip_cost + self.vehicle_cost


@dataclass(frozen=True)
class MspStrategy:
    price: float
    fleet: float

    def __post_init__(self):
        if self.price < 0 or self.fleet < 0:
            raise ValueError(f"MSP strategy must be non-negative, got {self}")


@dataclass(frozen=True)
class CongestionScenario:
    pt: PtDelay
    msps: tuple
    value_of_time: float
    weights: WelfareWeights = field(default_factory=lambda: WelfareWeights(1.0, 1.0, 1.0))

    def __post_init__(self):
        object.__setattr__(self, "msps", tuple(self.msps))
        if self.value_of_time <= 0:
            raise ValueError("value of time must be positive")

    @property
    def n_msps(self) -> int:
        return len(self.msps)


@dataclass
class CongestionEquilibrium:
    p0: float
    strategies: list
    flows: np.ndarray
    welfare: float
    metrics: MetricsTriple
    audit_passed: bool = False


# -- delays and Wardrop flows --------------------------------------------------


def delay(scenario: CongestionScenario, j: int, strategy, z: float) -> float:
    """Generalised cost on arc ``j`` at flow ``z``; ``strategy`` is p0 for j=0."""
    if z < 0:
        raise ValueError(f"negative flow {z}")
    V = scenario.value_of_time
    if j == 0:
        return float(strategy) + V * scenario.pt.ell0_bar
    if z > strategy.fleet:
        return math.inf
    return strategy.price + V * scenario.msps[j - 1].congestion(z)


def _arc_inverse(price, V, ell):
    def inv(lam):
        return ell.inverse((lam - price) / V)
    return inv


def wardrop_solve(scenario: CongestionScenario, prices: Sequence[float], fleets: Sequence[float]) -> np.ndarray:
    """Wardrop flows (public transport first) from the capped-simplex potential."""
    prices = [float(p) for p in prices]
    if len(prices) != scenario.n_msps + 1 or len(fleets) != scenario.n_msps:
        raise ValueError("need one price per arc and one fleet per MSP")
    V = scenario.value_of_time
    d0 = prices[0] + V * scenario.pt.ell0_bar
    delays = [lambda z, d0=d0: d0]
    inverses = [lambda lam, d0=d0: math.inf if lam >= d0 else 0.0]
    for msp, p in zip(scenario.msps, prices[1:]):
        ell = msp.congestion
        delays.append(lambda z, p=p, ell=ell: p + V * ell(z))
        inverses.append(_arc_inverse(p, V, ell))
    caps = [math.inf, *fleets]
    return minimize_capped_simplex_potential(delays, caps, inverses)


def check_assumption2(scenario: CongestionScenario) -> bool:
    """Public transport keeps a share of the demand for every admissible strategy."""
    y = scenario.pt.p0_max / scenario.value_of_time + scenario.pt.ell0_bar
    return sum(m.congestion.inverse(y) for m in scenario.msps) <= 1.0


def wardrop_closed_form(scenario: CongestionScenario, prices: Sequence[float]) -> np.ndarray:
    """Uncapped Wardrop flows when public transport stays in use."""
    if not check_assumption2(scenario):
        raise AssumptionViolation("closed form invalid: public transport may be emptied")
    V, ell0 = scenario.value_of_time, scenario.pt.ell0_bar
    p0 = prices[0]
    x = np.zeros(scenario.n_msps + 1)
    for j, (msp, p) in enumerate(zip(scenario.msps, prices[1:]), start=1):
        y = (p0 - p) / V + ell0
        x[j] = msp.congestion.inverse(y) if y >= msp.congestion(0.0) else 0.0
    x[0] = 1.0 - x[1:].sum()
    return x


# -- MSP reactions -------------------------------------------------------------


def _exits(scenario, msp, p0):
    V = scenario.value_of_time
    return msp.c_tilde + V * msp.congestion(0.0) >= p0 + V * scenario.pt.ell0_bar


def msp_profit(scenario: CongestionScenario, j: int, p0: float, price: float) -> float:
    """Profit at ``price`` with the fleet matched to the served flow."""
    msp = scenario.msps[j - 1]
    y = (p0 - price) / scenario.value_of_time + scenario.pt.ell0_bar
    return (price - msp.c_tilde) * msp.congestion.inverse(y)


def optimality_residual(scenario: CongestionScenario, j: int, p0: float, price: float) -> float:
    """First-order condition of the MSP pricing problem, zero at the optimum."""
    msp = scenario.msps[j - 1]
    V = scenario.value_of_time
    y = (p0 - price) / V + scenario.pt.ell0_bar
    ell = msp.congestion
    slope = ell.inverse_derivative(y)
    head = (price - msp.c_tilde) / V
    if head == 0.0:
        return ell.inverse(y)
    return -head * slope + ell.inverse(y)


def msp_best_response(scenario: CongestionScenario, j: int, p0: float) -> MspStrategy:
    """Profit-maximising (price, fleet) of MSP ``j`` (1-based) given the PT price."""
    msp = scenario.msps[j - 1]
    V, ell0 = scenario.value_of_time, scenario.pt.ell0_bar
    if _exits(scenario, msp, p0):
        return MspStrategy(0.0, 0.0)
    lo = msp.c_tilde
    hi = p0 + V * (ell0 - msp.congestion(0.0))
    try:
        price = find_root(RootProblem(lambda p: optimality_residual(scenario, j, p0, p), lo, hi, tolerance=1e-8))
    except ValueError as exc:
        raise RuntimeError(f"bracket collapse for MSP {j} at p0={p0} on [{lo}, {hi}]: {exc}") from exc
    fleet = msp.congestion.inverse((p0 - price) / V + ell0)
    return MspStrategy(price, fleet)


def affine_best_response(scenario: CongestionScenario, j: int, p0: float) -> MspStrategy:
    msp = scenario.msps[j - 1]
    ell = msp.congestion
    if not ell.is_affine:
        raise ValueError(f"MSP {j} does not have affine congestion")
    V, ell0 = scenario.value_of_time, scenario.pt.ell0_bar
    alpha, beta = ell(0.0), ell.derivative(0.0)
    if msp.c_tilde + V * alpha >= p0 + V * ell0:
        return MspStrategy(0.0, 0.0)
    choke = p0 + V * (ell0 - alpha)
    return MspStrategy((choke + msp.c_tilde) / 2.0, (choke - msp.c_tilde) / (2.0 * V * beta))


def municipality_affine_optimum(scenario: CongestionScenario) -> float:
    """Welfare-maximising PT price when every MSP has affine congestion."""
    V, ell0, p_max = scenario.value_of_time, scenario.pt.ell0_bar, scenario.pt.p0_max
    k1, k2, k3 = scenario.weights.k1, scenario.weights.k2, scenario.weights.k3
    if not check_assumption2(scenario):
        raise AssumptionViolation("closed form invalid: public transport may be emptied")
    for j, msp in enumerate(scenario.msps, start=1):
        if not msp.congestion.is_affine:
            raise ValueError(f"MSP {j} does not have affine congestion")
        if msp.c_tilde + V * msp.congestion(0.0) >= V * ell0:
            raise AssumptionViolation(f"MSP {j} exits the market for small PT prices")
    if k3 == 0:
        # welfare is non-increasing in p0 without a revenue term
        return 0.0
    if not scenario.msps:
        return p_max
    num = 1.0 - k1 / k3
    den = 0.0
    for msp in scenario.msps:
        alpha, beta = msp.congestion(0.0), msp.congestion.derivative(0.0)
        num -= ((k2 / k3) * msp.emission_rate + V * (ell0 - alpha) - msp.c_tilde) / (2.0 * V * beta)
        den += 1.0 / (V * beta)
    return float(np.clip(num / den, 0.0, p_max))


# -- welfare and the leader problem ----------------------------------------------


def _metrics(scenario, p0, prices, flows):
    V = scenario.value_of_time
    cust = flows[0] * (p0 + V * scenario.pt.ell0_bar)
    emis = 0.0
    for msp, p, x in zip(scenario.msps, prices, flows[1:]):
        if x > 0:
            cust += x * (p + V * msp.congestion(x))
            emis += msp.emission_rate * x
    return MetricsTriple(float(cust), float(emis), float(p0 * flows[0]))


def social_welfare_congestion(scenario: CongestionScenario, p0: float,
                              strategies: Sequence[MspStrategy]) -> tuple:
    """Municipality welfare and the metrics triple at the induced Wardrop flows."""
    prices = [s.price for s in strategies]
    flows = wardrop_solve(scenario, [p0, *prices], [s.fleet for s in strategies])
    metrics = _metrics(scenario, p0, prices, flows)
    return scenario.weights.welfare(metrics), metrics


def reaction_outcome(scenario: CongestionScenario, p0: float):
    """MSP reactions to ``p0`` and the flows they induce (fleets bind exactly)."""
    strategies = [msp_best_response(scenario, j, p0) for j in range(1, scenario.n_msps + 1)]
    flows = np.array([1.0 - sum(s.fleet for s in strategies), *(s.fleet for s in strategies)])
    return strategies, flows


def leader_welfare(scenario: CongestionScenario, p0: float) -> float:
    strategies, flows = reaction_outcome(scenario, p0)
    return scenario.weights.welfare(_metrics(scenario, p0, [s.price for s in strategies], flows))


def audit_equilibrium(scenario: CongestionScenario, eq: CongestionEquilibrium,
                      step: float = 1e-3, tolerance: float = 1e-9) -> bool:
    """Local unilateral-deviation audit of a computed equilibrium."""
    p_max = scenario.pt.p0_max
    for dp in (-step, step):
        q = eq.p0 + dp
        if 0.0 <= q <= p_max and leader_welfare(scenario, q) > eq.welfare + tolerance:
            return False
    for j, s in enumerate(eq.strategies, start=1):
        base = msp_profit(scenario, j, eq.p0, s.price) if s.fleet > 0 else 0.0
        for dp in (-step, step):
            q = s.price + dp
            if q >= 0 and msp_profit(scenario, j, eq.p0, q) > base + tolerance:
                return False
    return True


def solve_stackelberg_congestion(scenario: CongestionScenario, grid_size: int = 10001,
                                 tolerance: float = 1e-10) -> CongestionEquilibrium:
    """Leader price and MSP reactions by grid search plus golden-section refinement."""
    if not check_assumption2(scenario):
        raise AssumptionViolation("public transport may be emptied; the leader problem is not well posed")
    p0, _ = maximize_1d(lambda p: leader_welfare(scenario, p), 0.0, scenario.pt.p0_max,
                        grid_size=grid_size, tolerance=tolerance)
    strategies, flows = reaction_outcome(scenario, p0)
    welfare, metrics = social_welfare_congestion(scenario, p0, strategies)
    eq = CongestionEquilibrium(p0=p0, strategies=strategies, flows=flows, welfare=welfare, metrics=metrics)
    eq.audit_passed = audit_equilibrium(scenario, eq)
    return eq
