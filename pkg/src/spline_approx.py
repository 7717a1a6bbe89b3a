"""
This module provides first-order spline approximations of function spaces: the hat-function basis,
the approximation error bound, the quantized projection, the input and delay label sets and the
choice of quantization parameters.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from time_delay_system import ControlSegment

logger = logging.getLogger(__name__)

LATTICE_TOLERANCE = 1e-9


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration would exceed its configured budget."""


@dataclass(frozen=True)
class KnotGrid:
    """Uniform grid i1 + j h, j = 0..N+1, with h = (i2 - i1) / (N + 1)."""
    i1: float
    i2: float
    N: int

    def __post_init__(self):
        if not self.i1 < self.i2:
            raise ValueError(f"Need i1 < i2, got [{self.i1}, {self.i2}].")
        if self.N < 0:
            raise ValueError(f"N must be non-negative, got {self.N}.")

    @property
    def h(self) -> float:
        return (self.i2 - self.i1) / (self.N + 1)

    @property
    def size(self) -> int:
        return self.N + 2

    def knots(self) -> np.ndarray:
        knots = self.i1 + np.arange(self.N + 2) * self.h
        knots[-1] = self.i2
        return knots


def spline_basis(i: int, t, grid: KnotGrid):
    """
    Value of the i-th hat function at t.

    Raises:
        ValueError: If i or t is out of range.
    """
    if not 0 <= i <= grid.N + 1:
        raise ValueError(f"Basis index {i} outside 0..{grid.N + 1}.")
    t = np.asarray(t, dtype=float)
    slack = LATTICE_TOLERANCE * max(1.0, abs(grid.i2 - grid.i1))
    if np.any(t < grid.i1 - slack) or np.any(t > grid.i2 + slack):
        raise ValueError(f"Time outside [{grid.i1}, {grid.i2}].")
    return np.maximum(0.0, 1.0 - np.abs((t - grid.i1) / grid.h - i))


class SplineProfile:
    """Vector-valued first-order spline sum_i coeffs[i] s_i(t) on a knot grid."""
    def __init__(self, grid: KnotGrid, coeffs, clamped: bool = False):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape[0] != grid.size:
            raise ValueError(f"Expected {grid.size} coefficient rows, got {coeffs.shape[0]}.")
        self.grid = grid
        self.coeffs = coeffs
        self.clamped = clamped

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def evaluate(self, t):
        """Linear interpolation of the coefficients; shape (n,) for scalar t, (len(t), n) otherwise."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        knots = self.grid.knots()
        result = np.column_stack([np.interp(t, knots, self.coeffs[:, i]) for i in range(self.n)])
        return result[0] if scalar else result

    def __eq__(self, other):
        return (isinstance(other, SplineProfile) and self.grid == other.grid
                and np.array_equal(self.coeffs, other.coeffs))

    def __hash__(self):
        return hash((self.grid, self.coeffs.tobytes()))


def lambda_bound(N: int, theta: float, M: float, interval: Tuple[float, float]) -> float:
    """Lambda(N, theta, M) = h^2 M / 8 + (N + 2) theta on the given interval."""
    if N < 0 or theta < 0 or M < 0:
        raise ValueError(f"Need N >= 0, theta >= 0, M >= 0, got {N}, {theta}, {M}.")
    h = (interval[1] - interval[0]) / (N + 1)
    return h * h * M / 8.0 + (N + 2) * theta


def lattice_indices(values, pitch: float):
    """Nearest multiple of pitch, ties toward -inf, as integer indices."""
    return np.ceil(np.asarray(values, dtype=float) / pitch - 0.5).astype(np.int64)


def lattice_range(low: float, high: float, pitch: float) -> Tuple[int, int]:
    """Smallest and largest integer k with low <= k * pitch <= high."""
    return (int(np.ceil(low / pitch - LATTICE_TOLERANCE)), int(np.floor(high / pitch + LATTICE_TOLERANCE)))


def project(y, grid: KnotGrid, theta: float, value_range: Optional[Tuple[float, float]] = None) -> SplineProfile:
    """
    Quantized projection: samples y at the knots and rounds each coordinate to the nearest multiple
    of 2 theta, so every coefficient lies within theta of its sample.

    Args:
        y: Anything with an evaluate(t) method, or a callable of t.
        grid (KnotGrid): Knot grid of the profile.
        theta (float): Half the lattice pitch.
        value_range (tuple, optional): Admissible coefficient interval; rounded coefficients that
            leave it are clamped onto the nearest lattice point inside and the profile is flagged.

    Returns:
        SplineProfile: The projected profile.
    """
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}.")
    evaluate = y.evaluate if hasattr(y, 'evaluate') else y
    samples = np.asarray(evaluate(grid.knots()), dtype=float).reshape(grid.size, -1)
    pitch = 2.0 * theta
    indices = lattice_indices(samples, pitch)
    clamped = False
    if value_range is not None:
        low, high = lattice_range(value_range[0], value_range[1], pitch)
        bounded = np.clip(indices, low, high)
        if np.any(bounded != indices):
            clamped = True
            logger.warning("Projection clamped %d coefficients into [%g, %g].",
                           int(np.count_nonzero(bounded != indices)), *value_range)
        indices = bounded
    return SplineProfile(grid, indices * pitch, clamped=clamped)


def enumerate_input_labels(b_u: float, m: int, lambda_u: float) -> List[ControlSegment]:
    """
    All constant inputs on the 2 lambda_U lattice inside the infinity ball of radius B_U, ordered
    lexicographically by lattice index. The origin is always included.
    """
    if lambda_u <= 0:
        raise ValueError(f"lambda_U must be positive, got {lambda_u}.")
    pitch = 2.0 * lambda_u
    low, high = lattice_range(-b_u, b_u, pitch)
    axis = range(low, high + 1)
    return [ControlSegment(tuple(k * pitch for k in index)) for index in itertools.product(axis, repeat=m)]


def input_label_indices(b_u: float, m: int, lambda_u: float) -> np.ndarray:
    """Integer lattice indices of the input labels, same order as enumerate_input_labels."""
    low, high = lattice_range(-b_u, b_u, 2.0 * lambda_u)
    return np.array(list(itertools.product(range(low, high + 1), repeat=m)), dtype=np.int64)


class DelayLabels:
    """
    Delay labels: every (N_D + 2)-tuple of lattice values of pitch theta_D in [delta_min, delta_max],
    read as spline coefficients on [0, tau].
    """
    def __init__(self, delta_min: float, delta_max: float, N_D: int, theta_D: float, budget: int):
        if theta_D <= 0:
            raise ValueError(f"theta_D must be positive, got {theta_D}.")
        self.N_D = int(N_D)
        self.theta_D = float(theta_D)
        self.budget = int(budget)
        if delta_max - delta_min <= LATTICE_TOLERANCE * max(1.0, delta_max):
            self.values = np.array([float(delta_min)])
        else:
            low, high = lattice_range(delta_min, delta_max, theta_D)
            self.values = np.arange(low, high + 1) * theta_D
            if len(self.values) == 0:
                self.values = np.array([0.5 * (delta_min + delta_max)])
                logger.warning("No delay lattice value inside [%g, %g]; using the midpoint.", delta_min, delta_max)

    @property
    def cardinality(self) -> int:
        return len(self.values) ** (self.N_D + 2)

    def __iter__(self) -> Iterator[Tuple[float, ...]]:
        return itertools.product(self.values.tolist(), repeat=self.N_D + 2)

    def materialize(self) -> np.ndarray:
        """
        Returns all labels as an array of shape (cardinality, N_D + 2).

        Raises:
            BudgetExceeded: If the cardinality exceeds the budget.
        """
        if self.cardinality > self.budget:
            raise BudgetExceeded(f"{self.cardinality} delay labels exceed the budget of {self.budget}; "
                                 f"use coarsened disturbances.")
        return np.array(list(self), dtype=float).reshape(-1, self.N_D + 2)

    def coarsened(self, theta_coarse: float) -> Tuple[np.ndarray, float]:
        """
        Representatives on the coarser pitch theta_coarse and the cover radius, the largest distance
        from a lattice value to its nearest representative.

        Returns:
            tuple: Labels array of shape (count, N_D + 2) and the cover radius.
        """
        if theta_coarse < self.theta_D:
            raise ValueError(f"Coarse pitch {theta_coarse} is finer than theta_D = {self.theta_D}.")
        low, high = self.values[0], self.values[-1]
        first, last = lattice_range(low, high, theta_coarse)
        representatives = np.arange(first, last + 1) * theta_coarse
        if len(representatives) == 0:
            representatives = np.array([0.5 * (low + high)])
        nearest = np.min(np.abs(self.values[:, None] - representatives[None, :]), axis=1)
        cover = float(np.max(nearest))
        labels = np.array(list(itertools.product(representatives.tolist(), repeat=self.N_D + 2)), dtype=float)
        return labels.reshape(-1, self.N_D + 2), cover


def enumerate_delay_labels(delta_min: float, delta_max: float, N_D: int, theta_D: float,
                           budget: int) -> DelayLabels:
    """Returns the lazily enumerated delay label set."""
    return DelayLabels(delta_min, delta_max, N_D, theta_D, budget)


@dataclass
class QuantizationParams:
    """Sampling period, spline grids and precisions of the symbolic model."""
    tau: float
    N_X: int
    theta_X: float
    N_D: int
    theta_D: float
    lambda_U: float
    epsilon: float
    M_X: float
    M_D: float
    delta_max: float

    @property
    def lambda_X(self) -> float:
        return lambda_bound(self.N_X, self.theta_X, self.M_X, (-self.delta_max, 0.0))

    @property
    def lambda_D(self) -> float:
        return lambda_bound(self.N_D, self.theta_D, self.M_D, (0.0, self.tau))

    def state_grid(self) -> KnotGrid:
        return KnotGrid(-self.delta_max, 0.0, self.N_X)

    def delay_grid(self) -> KnotGrid:
        return KnotGrid(0.0, self.tau, self.N_D)


def cond2_value(cert, epsilon: float, tau: float, lambda_x: float, lambda_u: float, lambda_d: float) -> float:
    """
    max{beta(eps, tau), gamma_U(lambda_U) + gamma_D(lambda_D)} + max{beta(lambda_X, tau), gamma_D(lambda_D)} + lambda_X
    """
    first = max(cert.beta(epsilon, tau), cert.gamma_u(lambda_u) + cert.gamma_d(lambda_d))
    second = max(cert.beta(lambda_x, tau), cert.gamma_d(lambda_d))
    return float(first + second + lambda_x)


def cond3_value(cert, params: QuantizationParams) -> float:
    """The same inequality with lambda_X and lambda_D recomputed from the spline parameters."""
    return cond2_value(cert, params.epsilon, params.tau, params.lambda_X, params.lambda_U, params.lambda_D)


def tau_for_precision(beta, epsilon: float, fraction: float = 1.0 / 3.0, tau_step: float = 0.1,
                      tau_min: float = 0.0, r: Optional[float] = None) -> float:
    """
    Smallest tau with beta(epsilon, tau) <= fraction * epsilon and tau > tau_min, taken on the grid of
    multiples of tau_step or, when r > 0, among the divisors r / k.

    Raises:
        ValueError: If no admissible tau exists.
    """
    needed = max(0.0, np.log(beta.c / fraction) / beta.a)
    if r is not None and r > 0:
        k = int(np.floor(r / max(needed, 1e-300) + LATTICE_TOLERANCE))
        while k >= 1 and r / k <= tau_min:
            k -= 1
        if k < 1:
            raise ValueError(f"No tau = r / k satisfies beta(eps, tau) <= {fraction:g} eps and tau > {tau_min}.")
        return r / k
    tau = tau_step * max(1, int(np.ceil(needed / tau_step - LATTICE_TOLERANCE)))
    while tau <= tau_min:
        tau += tau_step
    return float(tau)


def _knots_for(target: float, M: float, interval: Tuple[float, float], max_knots: int) -> Tuple[int, float]:
    """Fewest interior knots N with h^2 M / 8 <= target / 2 and the pitch spending the remainder."""
    width = interval[1] - interval[0]
    for N in range(max_knots + 1):
        interpolation = (width / (N + 1)) ** 2 * M / 8.0
        if interpolation <= 0.5 * target:
            return N, (target - interpolation) / (N + 2)
    raise ValueError(f"No N <= {max_knots} reaches precision {target:g} with M = {M:g}.")


def solve_quantization(epsilon: float, cert, M_X: float, M_D: float, delta_max: float,
                       tau_min: float = 0.0, r: Optional[float] = None, manual: Optional[dict] = None,
                       tau_step: float = 0.1, max_knots: int = 10_000) -> QuantizationParams:
    """
    Chooses (or, for manual parameters, only verifies) the quantization of the symbolic model.

    The automatic recipe takes lambda_X = eps / 3, gamma_U(lambda_U) <= eps / 6,
    gamma_D(lambda_D) <= eps / 6 and tau with beta(eps, tau) <= eps / 3, then picks N and theta
    so that each Lambda bound meets its precision. The result is re-checked against cond3.

    Args:
        manual (dict, optional): Keys tau, N_X, theta_X, N_D, theta_D, lambda_U.

    Raises:
        ValueError: If the parameters are infeasible or fail verification.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}.")
    if manual is not None:
        params = QuantizationParams(tau=float(manual['tau']), N_X=int(manual['N_X']),
                                    theta_X=float(manual['theta_X']), N_D=int(manual['N_D']),
                                    theta_D=float(manual['theta_D']), lambda_U=float(manual['lambda_U']),
                                    epsilon=epsilon, M_X=M_X, M_D=M_D, delta_max=delta_max)
        if params.tau <= tau_min:
            raise ValueError(f"tau = {params.tau} must exceed {tau_min}.")
        if r is not None and r > 0:
            ratio = r / params.tau
            if abs(ratio - round(ratio)) > LATTICE_TOLERANCE * max(1.0, ratio):
                raise ValueError(f"r = {r} is not an integer multiple of tau = {params.tau}.")
    else:
        tau = tau_for_precision(cert.beta, epsilon, 1.0 / 3.0, tau_step, tau_min, r)
        N_X, theta_X = _knots_for(epsilon / 3.0, M_X, (-delta_max, 0.0), max_knots)
        N_D, theta_D = _knots_for(cert.gamma_d.inverse(epsilon / 6.0), M_D, (0.0, tau), max_knots)
        lambda_U = cert.gamma_u.inverse(epsilon / 6.0)
        if not np.isfinite(lambda_U):
            lambda_U = epsilon
        params = QuantizationParams(tau=tau, N_X=N_X, theta_X=theta_X, N_D=N_D, theta_D=theta_D,
                                    lambda_U=lambda_U, epsilon=epsilon, M_X=M_X, M_D=M_D, delta_max=delta_max)
        logger.info("Automatic quantization: tau=%g N_X=%d theta_X=%g N_D=%d theta_D=%g lambda_U=%g",
                    tau, N_X, theta_X, N_D, theta_D, lambda_U)
    value = cond3_value(cert, params)
    if value > epsilon * (1 + LATTICE_TOLERANCE):
        raise ValueError(f"Quantization inequality fails: {value:.6g} > epsilon = {epsilon:.6g}.")
    return params


def export_labels(grid: KnotGrid, theta: float, coeffs: Sequence) -> str:
    """Text export: a grid header then one coefficient tuple per line."""
    lines = [f"# interval {grid.i1!r} {grid.i2!r}", f"# N {grid.N}", f"# theta {theta!r}"]
    for row in coeffs:
        lines.append(' '.join(repr(float(v)) for v in np.ravel(row)))
    return '\n'.join(lines) + '\n'


def parse_labels(text: str) -> Tuple[KnotGrid, float, np.ndarray]:
    """Inverse of export_labels."""
    header, rows = {}, []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith('#'):
            key, *values = line[1:].split()
            header[key] = values
        else:
            rows.append([float(v) for v in line.split()])
    try:
        grid = KnotGrid(float(header['interval'][0]), float(header['interval'][1]), int(header['N'][0]))
        theta = float(header['theta'][0])
    except (KeyError, IndexError) as error:
        raise ValueError(f"Malformed label header: missing {error}.") from error
    return grid, theta, np.array(rows, dtype=float).reshape(len(rows), -1)
