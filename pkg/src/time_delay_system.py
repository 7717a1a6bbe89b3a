"""
This file contains the classes for the SystemDef, HistorySegment, DelaySegment, DelayRealization
and ControlSegment objects, together with the built-in time-delay systems.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOLERANCE = 1e-12
SPAN_TOLERANCE = 1e-12
MAX_GRID_POINTS = 2_000_000


class SystemDef:
    """
    Time-delay system dx/dt = f(x(t), x(t - Delta(t)), u(t - r)) with Delta(t) in [delta_min, delta_max].

    The vector field receives arrays whose last axis holds the coordinates and may carry any number
    of leading batch axes; it must return an array of the same leading shape with n columns.
    """
    def __init__(self, name: str, n: int, m: int, f: Callable,
                 delta_min: float, delta_max: float, r: float, d_slope: float,
                 b_u: float, b_x0: float, m_1: float,
                 jacobian: Optional[Callable] = None):
        """
        Initialize and check a system definition.

        Args:
            name (str): Identifier of the system.
            n (int): State dimension.
            m (int): Input dimension.
            f (Callable): Vector field f(x, x_delayed, u).
            delta_min (float): Lower delay bound.
            delta_max (float): Upper delay bound.
            r (float): Input delay.
            d_slope (float): Bound on the delay slope, in [0, 1).
            b_u (float): Input magnitude bound.
            b_x0 (float): Initial-condition magnitude bound.
            m_1 (float): Bound on the derivative of the initial condition.
            jacobian (Callable, optional): Differential of f with respect to (x, x_delayed, u),
                returning arrays of shape (..., n, 2n + m).

        Raises:
            ValueError: If a bound is inconsistent or the origin is not an equilibrium.
        """
        if n < 1 or m < 1:
            raise ValueError(f"System '{name}': dimensions must be positive, got n={n}, m={m}.")
        if not 0 <= delta_min <= delta_max:
            raise ValueError(f"System '{name}': need 0 <= delta_min <= delta_max, "
                             f"got [{delta_min}, {delta_max}].")
        if not 0 <= d_slope < 1:
            raise ValueError(f"System '{name}': d_slope must lie in [0, 1), got {d_slope}.")
        if r < 0:
            raise ValueError(f"System '{name}': input delay r must be non-negative, got {r}.")
        if b_u <= 0 or b_x0 <= 0:
            raise ValueError(f"System '{name}': B_U and B_X0 must be positive, got {b_u}, {b_x0}.")
        if m_1 < 0:
            raise ValueError(f"System '{name}': M_1 must be non-negative, got {m_1}.")
        self.name = name
        self.n = int(n)
        self.m = int(m)
        self.f = f
        self.delta_min = float(delta_min)
        self.delta_max = float(delta_max)
        self.r = float(r)
        self.d_slope = float(d_slope)
        self.b_u = float(b_u)
        self.b_x0 = float(b_x0)
        self.m_1 = float(m_1)
        self.jacobian = jacobian

        residual = self.evaluate(np.zeros(self.n), np.zeros(self.n), np.zeros(self.m))
        if np.max(np.abs(residual)) > EQUILIBRIUM_TOLERANCE:
            raise ValueError(f"System '{name}': f(0, 0, 0) = {residual} is not zero.")

    def evaluate(self, x, y, u) -> np.ndarray:
        """Evaluates the vector field on (possibly batched) arguments."""
        x = np.asarray(x, dtype=float)
        result = np.asarray(self.f(x, np.asarray(y, dtype=float), np.asarray(u, dtype=float)),
                            dtype=float)
        return np.broadcast_to(result, x.shape)

    def get_name(self) -> str:
        """Returns the name of the system"""
        return self.name

    def default_step(self, tau: float) -> float:
        """Returns the default integration step min(delta_min / 2, tau / 200)."""
        return min(self.delta_min / 2.0, tau / 200.0)

    def domain_grid(self, b_x: float, grid_step: float,
                    max_points: int = MAX_GRID_POINTS) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """
        Yields chunks of a uniform grid over the box X x X x U.

        The box corners are always part of the grid. When the requested step would exceed
        max_points, the step is enlarged and a warning is logged.

        Args:
            b_x (float): Half-width of the state box.
            grid_step (float): Requested grid spacing.
            max_points (int): Upper bound on the total number of grid points.

        Yields:
            tuple: Arrays (x, y, u) of shapes (P, n), (P, n) and (P, m).
        """
        if grid_step <= 0:
            raise ValueError(f"grid_step must be positive, got {grid_step}.")
        bounds = [b_x] * (2 * self.n) + [self.b_u] * self.m
        step = float(grid_step)

        def axis_counts(spacing):
            return [max(2, int(np.ceil(2.0 * bound / spacing)) + 1) if bound > 0 else 1
                    for bound in bounds]

        counts = axis_counts(step)
        while np.prod(counts, dtype=float) > max_points:
            step *= 1.25
            counts = axis_counts(step)
        if step != grid_step:
            logger.warning("Grid step raised from %g to %g to stay below %d points.",
                           grid_step, step, max_points)
        axes = [np.linspace(-bound, bound, count) for bound, count in zip(bounds, counts)]
        rest = np.stack(np.meshgrid(*axes[1:], indexing='ij'), axis=-1).reshape(-1, len(axes) - 1)
        for first in axes[0]:
            points = np.column_stack([np.full(len(rest), first), rest])
            yield points[:, :self.n], points[:, self.n:2 * self.n], points[:, 2 * self.n:]


def hermite_gather(knots, values, derivatives, s, derivative=False):
    """
    Evaluates piecewise cubic Hermite (or linear, when derivatives is None) interpolants of a
    batch at one query time per batch element.

    Args:
        knots (np.ndarray): Shared knot times, shape (K,).
        values (np.ndarray): Values, shape (B, K, n).
        derivatives (np.ndarray or None): Derivatives, shape (B, K, n).
        s (np.ndarray): Query times, shape (B,), clipped to the knot span.
        derivative (bool): Return the time derivative instead of the value.

    Returns:
        np.ndarray: Shape (B, n).
    """
    s = np.clip(s, knots[0], knots[-1])
    idx = np.clip(np.searchsorted(knots, s, side='right') - 1, 0, len(knots) - 2)
    rows = np.arange(values.shape[0])
    t0 = knots[idx]
    width = knots[idx + 1] - t0
    theta = ((s - t0) / width)[:, None]
    v0 = values[rows, idx]
    v1 = values[rows, idx + 1]
    if derivatives is None:
        if derivative:
            return (v1 - v0) / width[:, None]
        return v0 + theta * (v1 - v0)
    d0 = derivatives[rows, idx] * width[:, None]
    d1 = derivatives[rows, idx + 1] * width[:, None]
    if derivative:
        return ((6 * theta ** 2 - 6 * theta) * v0 + (3 * theta ** 2 - 4 * theta + 1) * d0
                + (-6 * theta ** 2 + 6 * theta) * v1 + (3 * theta ** 2 - 2 * theta) * d1) / width[:, None]
    return ((2 * theta ** 3 - 3 * theta ** 2 + 1) * v0 + (theta ** 3 - 2 * theta ** 2 + theta) * d0
            + (-2 * theta ** 3 + 3 * theta ** 2) * v1 + (theta ** 3 - theta ** 2) * d1)


class HistorySegment:
    """
    State x_t of a delay system: a continuous function on [-delta_max, 0] valued in R^n, stored as
    knot samples. With derivatives the segment is a cubic Hermite interpolant, otherwise it is
    piecewise linear (which represents a first-order spline exactly).
    """
    def __init__(self, knots, values, derivatives=None):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if knots.ndim != 1 or len(knots) < 2:
            raise ValueError("A history segment needs at least two knots.")
        if values.shape[0] != len(knots):
            raise ValueError(f"Got {values.shape[0]} value rows for {len(knots)} knots.")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("History knots must be strictly increasing.")
        if abs(knots[-1]) > SPAN_TOLERANCE:
            raise ValueError(f"The last history knot must be 0, got {knots[-1]}.")
        if knots[0] >= 0:
            raise ValueError(f"The first history knot must be negative, got {knots[0]}.")
        knots[-1] = 0.0
        if derivatives is not None:
            derivatives = np.asarray(derivatives, dtype=float)
            if derivatives.ndim == 1:
                derivatives = derivatives[:, None]
            if derivatives.shape != values.shape:
                raise ValueError("Derivatives must have the same shape as values.")
        self.knots = knots
        self.values = values
        self.derivatives = derivatives
        self._spline = None

    @property
    def delta_max(self) -> float:
        return -float(self.knots[0])

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def evaluate(self, theta) -> np.ndarray:
        """
        Evaluates the segment.

        Args:
            theta (float or array): Times in [-delta_max, 0].

        Returns:
            np.ndarray: Shape (n,) for a scalar time, (len(theta), n) otherwise.

        Raises:
            ValueError: If a time lies outside the span.
        """
        scalar = np.ndim(theta) == 0
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        tolerance = SPAN_TOLERANCE * max(1.0, self.delta_max)
        if np.any(theta < self.knots[0] - tolerance) or np.any(theta > tolerance):
            raise ValueError(f"Evaluation time outside [{self.knots[0]}, 0].")
        theta = np.clip(theta, self.knots[0], 0.0)
        if self.derivatives is None:
            result = np.column_stack([np.interp(theta, self.knots, self.values[:, i])
                                      for i in range(self.n)])
        else:
            if self._spline is None:
                self._spline = CubicHermiteSpline(self.knots, self.values, self.derivatives, axis=0)
            result = self._spline(theta)
        return result[0] if scalar else result

    def sup_norm(self, density: int = 10) -> float:
        """Returns the sampled sup of the infinity norm over the span."""
        grid = evaluation_grid([self.knots], density)
        return float(np.max(np.abs(self.evaluate(grid))))

    @classmethod
    def constant(cls, value, delta_max: float, num_knots: int = 2) -> 'HistorySegment':
        """Creates a constant segment."""
        value = np.atleast_1d(np.asarray(value, dtype=float))
        knots = np.linspace(-delta_max, 0.0, num_knots)
        return cls(knots, np.tile(value, (num_knots, 1)), np.zeros((num_knots, len(value))))

    @classmethod
    def from_function(cls, func: Callable, delta_max: float, num_knots: int = 201,
                      derivative: Optional[Callable] = None) -> 'HistorySegment':
        """Samples func (and optionally its derivative) on a uniform knot grid."""
        knots = np.linspace(-delta_max, 0.0, num_knots)
        values = np.array([np.atleast_1d(func(t)) for t in knots], dtype=float)
        derivatives = None
        if derivative is not None:
            derivatives = np.array([np.atleast_1d(derivative(t)) for t in knots], dtype=float)
        return cls(knots, values, derivatives)


@dataclass
class HistoryBatch:
    """A batch of history segments sharing one knot grid."""
    knots: np.ndarray
    values: np.ndarray
    derivatives: Optional[np.ndarray] = None

    def __len__(self):
        return self.values.shape[0]

    def segment(self, index: int) -> HistorySegment:
        derivatives = None if self.derivatives is None else self.derivatives[index]
        return HistorySegment(self.knots, self.values[index], derivatives)

    def evaluate(self, grid) -> np.ndarray:
        """Evaluates every member on a shared time grid; returns shape (B, len(grid), n)."""
        grid = np.clip(np.asarray(grid, dtype=float), self.knots[0], 0.0)
        if self.derivatives is None:
            left = np.clip(np.searchsorted(self.knots, grid, side='right') - 1, 0, len(self.knots) - 2)
            theta = ((grid - self.knots[left]) / (self.knots[left + 1] - self.knots[left]))[None, :, None]
            return self.values[:, left] + theta * (self.values[:, left + 1] - self.values[:, left])
        spline = CubicHermiteSpline(self.knots, np.moveaxis(self.values, 1, 0),
                                    np.moveaxis(self.derivatives, 1, 0), axis=0)
        return np.moveaxis(spline(grid), 0, 1)

    @classmethod
    def stack(cls, segments) -> 'HistoryBatch':
        """Stacks segments that share their knots."""
        knots = segments[0].knots
        for segment in segments[1:]:
            if len(segment.knots) != len(knots) or np.any(segment.knots != knots):
                raise ValueError("Batched history segments must share their knots.")
        if all(segment.derivatives is not None for segment in segments):
            derivatives = np.stack([segment.derivatives for segment in segments])
        elif any(segment.derivatives is not None for segment in segments):
            raise ValueError("Cannot batch Hermite and piecewise-linear segments together.")
        else:
            derivatives = None
        return cls(knots, np.stack([segment.values for segment in segments]), derivatives)


def evaluation_grid(knot_sets, density: int = 10) -> np.ndarray:
    """
    Returns the union of the given knot sets with every interval split into `density` pieces.
    """
    if density < 1:
        raise ValueError(f"density must be at least 1, got {density}.")
    knots = np.unique(np.concatenate([np.asarray(k, dtype=float) for k in knot_sets]))
    fractions = np.arange(density) / density
    inner = (knots[:-1, None] + np.diff(knots)[:, None] * fractions[None, :]).ravel()
    return np.concatenate([inner, knots[-1:]])


class DelaySegment:
    """
    Delay realization on one sampling period [0, tau], given either by a vectorized callback or by
    a first-order spline profile (any object exposing evaluate(t) and a grid).
    """
    def __init__(self, tau: float, func: Optional[Callable] = None, profile=None,
                 slope_bound: Optional[float] = None):
        if (func is None) == (profile is None):
            raise ValueError("A delay segment needs exactly one of func or profile.")
        if tau <= 0:
            raise ValueError(f"tau must be positive, got {tau}.")
        self.tau = float(tau)
        self.func = func
        self.profile = profile
        self.slope_bound = slope_bound

    @property
    def analytic(self) -> bool:
        return self.func is not None

    def evaluate(self, t) -> np.ndarray:
        """Returns the delay at the given times of [0, tau]."""
        t = np.asarray(t, dtype=float)
        if self.func is not None:
            return np.broadcast_to(np.asarray(self.func(t), dtype=float), t.shape)
        return np.asarray(self.profile.evaluate(t), dtype=float).reshape(t.shape)

    def validate(self, sys: SystemDef, samples: int = 201) -> bool:
        """
        Checks the range and, for analytic segments, the slope of the delay.

        Raises:
            ValueError: If the delay leaves [delta_min, delta_max] or is too steep.
        """
        t = np.linspace(0.0, self.tau, samples)
        values = self.evaluate(t)
        tolerance = SPAN_TOLERANCE * max(1.0, sys.delta_max)
        if np.min(values) < sys.delta_min - tolerance or np.max(values) > sys.delta_max + tolerance:
            raise ValueError(f"Delay out of range: values in [{np.min(values)}, {np.max(values)}] "
                             f"but admissible range is [{sys.delta_min}, {sys.delta_max}].")
        if self.analytic:
            slope = self.slope_bound
            if slope is None:
                slope = float(np.max(np.abs(np.diff(values) / np.diff(t))))
            if slope > sys.d_slope + 1e-9:
                raise ValueError(f"Delay slope {slope} exceeds d_slope = {sys.d_slope}.")
        return True

    @classmethod
    def constant(cls, value: float, tau: float) -> 'DelaySegment':
        return cls(tau, func=lambda t: np.full(np.shape(t), float(value)), slope_bound=0.0)


class DelayRealization:
    """
    Delay signal over [0, inf). Parameters of the sinusoidal family may be arrays, in which case
    evaluate(t) at a scalar time returns one delay per batch member.
    """
    def __init__(self, func: Callable, slope_bound: Optional[float] = None, description: str = ''):
        self.func = func
        self.slope_bound = slope_bound
        self.description = description

    def evaluate(self, t):
        return self.func(t)

    def window(self, t0: float, tau: float) -> DelaySegment:
        """Returns the restriction to [t0, t0 + tau] shifted to [0, tau]."""
        func = self.func
        return DelaySegment(tau, func=lambda t: func(t0 + np.asarray(t, dtype=float)),
                            slope_bound=self.slope_bound)

    @classmethod
    def sinusoid(cls, mid, amp, omega, phase=0.0) -> 'DelayRealization':
        """Creates mid + amp * sin(omega * t + phase)."""
        mid, amp, omega, phase = (np.asarray(p, dtype=float) for p in (mid, amp, omega, phase))
        slope = float(np.max(np.abs(amp * omega)))

        def func(t):
            return mid + amp * np.sin(omega * t + phase)

        return cls(func, slope_bound=slope,
                   description=f"sinusoid(mid={mid}, amp={amp}, omega={omega}, phase={phase})")

    @classmethod
    def constant(cls, value: float) -> 'DelayRealization':
        return cls(lambda t: np.full(np.shape(t), float(value)), slope_bound=0.0,
                   description=f"constant({value})")

    @classmethod
    def slow_sinusoid(cls, sys: SystemDef, omega: float = 0.01) -> 'DelayRealization':
        """Midpoint of the delay range plus half its width times sin(omega * t)."""
        mid = 0.5 * (sys.delta_max + sys.delta_min)
        amp = 0.5 * (sys.delta_max - sys.delta_min)
        return cls.sinusoid(mid, amp, omega)


@dataclass(frozen=True)
class ControlSegment:
    """Constant input value applied over one sampling period."""
    value: Tuple[float, ...]

    @classmethod
    def of(cls, value) -> 'ControlSegment':
        return cls(tuple(float(v) for v in np.atleast_1d(value)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.value, dtype=float)

    def validate(self, sys: SystemDef) -> bool:
        """Checks dimension and magnitude against the system's input bound."""
        if len(self.value) != sys.m:
            raise ValueError(f"Control has dimension {len(self.value)}, system expects {sys.m}.")
        if np.max(np.abs(self.as_array())) > sys.b_u + 1e-12:
            raise ValueError(f"Control {self.value} exceeds B_U = {sys.b_u}.")
        return True


def pola2012_field(x, y, u):
    dx1 = -8.0 * x[..., 0] + np.tanh(y[..., 1])
    dx2 = -9.0 * x[..., 1] + np.sin(y[..., 0]) + np.cos(x[..., 1]) * u[..., 0]
    return np.stack([dx1, dx2], axis=-1)


def pola2012_jacobian(x, y, u):
    """Columns ordered (x1, x2, y1, y2, u)."""
    shape = x.shape[:-1] + (2, 5)
    jac = np.zeros(shape)
    jac[..., 0, 0] = -8.0
    jac[..., 0, 3] = 1.0 / np.cosh(y[..., 1]) ** 2
    jac[..., 1, 1] = -9.0 - np.sin(x[..., 1]) * u[..., 0]
    jac[..., 1, 2] = np.cos(y[..., 0])
    jac[..., 1, 4] = np.cos(x[..., 1])
    return jac


def scalar_toy_field(x, y, u):
    return -2.0 * x + 0.2 * y + u


def scalar_toy_jacobian(x, y, u):
    jac = np.zeros(x.shape[:-1] + (1, 3))
    jac[..., 0, :] = (-2.0, 0.2, 1.0)
    return jac


def linear_decay_field(x, y, u):
    return -x


def zero_field(x, y, u):
    return np.zeros_like(x)


BUILTIN_SYSTEMS: Dict[str, Dict] = {
    'pola2012-example': {
        'n': 2, 'm': 1, 'f': pola2012_field, 'jacobian': pola2012_jacobian,
        'delta_min': 1e-3, 'delta_max': 1e-2, 'r': 10.0, 'd_slope': 0.2,
        'b_u': 0.3, 'b_x0': 0.5, 'm_1': 0.1,
    },
    'scalar-toy': {
        'n': 1, 'm': 1, 'f': scalar_toy_field, 'jacobian': scalar_toy_jacobian,
        'delta_min': 0.01, 'delta_max': 0.02, 'r': 3.0, 'd_slope': 0.2,
        'b_u': 0.5, 'b_x0': 0.7, 'm_1': 0.1,
    },
    'linear-decay': {
        'n': 1, 'm': 1, 'f': linear_decay_field, 'jacobian': None,
        'delta_min': 0.1, 'delta_max': 0.2, 'r': 0.0, 'd_slope': 0.0,
        'b_u': 1.0, 'b_x0': 1.0, 'm_1': 1.0,
    },
    'zero': {
        'n': 1, 'm': 1, 'f': zero_field, 'jacobian': None,
        'delta_min': 0.1, 'delta_max': 0.2, 'r': 0.0, 'd_slope': 0.0,
        'b_u': 1.0, 'b_x0': 1.0, 'm_1': 0.1,
    },
}


def create_system(name: str, **overrides) -> SystemDef:
    """
    Instantiates a built-in system, optionally overriding its bounds.

    Raises:
        KeyError: If the name is unknown.
    """
    if name not in BUILTIN_SYSTEMS:
        raise KeyError(f"Unknown system '{name}'. Known systems: {sorted(BUILTIN_SYSTEMS)}")
    parameters = dict(BUILTIN_SYSTEMS[name])
    unknown = set(overrides) - set(parameters)
    if unknown:
        raise KeyError(f"Unknown system parameters: {sorted(unknown)}")
    parameters.update(overrides)
    return SystemDef(name=name, **parameters)
