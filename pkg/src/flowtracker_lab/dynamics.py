"""Distributed input-output systems whose state average tracks the average input.

Four concrete systems share the pattern: the shared state block x mixes
through -L(t)x plus the control input, auxiliary blocks (ratio weights,
dual variables) mix through L(t) as well, and each agent's output is its
estimate of the network average. Because columns of L(t) sum to zero, the
row average of x obeys d/dt xbar = (1/n) sum_i u_i for every system here;
that constant is exposed as c1.

States are exchanged with integrators as flat vectors; `pack`/`unpack`
translate to the structured SystemState view.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, InvalidInputError
from .graphnet import LaplacianProcess
from .objectives import ObjectiveFamily, gradient_affine_map, _vectorized_grad, stacked_gradient
from .schedules import StepSchedule, evaluate

# Ratio weights below this abort the run instead of being clamped;
# clamping would silently change the dynamics.
W_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class SystemState:
    """Structured view of one system's state: shared rows x plus aux blocks."""

    x: np.ndarray
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(
            self, "aux", {k: np.asarray(v, dtype=float) for k, v in self.aux.items()}
        )


class FlowTrackerSystem:
    """Base for the concrete systems; subclasses fill in the vector field."""

    name: str = "base"
    has_weights = False
    supports_affine = False

    def __init__(self, process: LaplacianProcess, d: int):
        if d < 1:
            raise InvalidInputError("state dimension d must be positive")
        self.process = process
        self.n = process.n
        self.d = d
        self.c1 = 1.0 / self.n
        self._nd = self.n * d

    # aux blocks as (name, shape) pairs, in flat-vector order
    aux_layout: tuple[tuple[str, tuple[int, ...]], ...] = ()

    @property
    def state_size(self) -> int:
        return self._nd + sum(int(np.prod(shape)) for _, shape in self.aux_layout)

    def pack(self, state: SystemState) -> np.ndarray:
        if state.x.shape != (self.n, self.d):
            raise InvalidInputError(
                f"x must be {self.n}x{self.d}, got {state.x.shape}"
            )
        parts = [state.x.ravel()]
        for name, shape in self.aux_layout:
            if name not in state.aux:
                raise InvalidInputError(f"state is missing aux block {name!r}")
            block = np.asarray(state.aux[name], dtype=float)
            if block.shape != shape:
                raise InvalidInputError(f"aux block {name!r} must have shape {shape}")
            parts.append(block.ravel())
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()

    def unpack(self, vec: np.ndarray) -> SystemState:
        x = vec[: self._nd].reshape(self.n, self.d).copy()
        aux = {}
        offset = self._nd
        for name, shape in self.aux_layout:
            size = int(np.prod(shape))
            aux[name] = vec[offset : offset + size].reshape(shape).copy()
            offset += size
        return SystemState(x, aux)

    def initial_state(self, x, **aux) -> SystemState:
        raise NotImplementedError

    def check_initial(self, state: SystemState) -> None:
        """Validate membership in the system's admissible initial set."""
        self.pack(state)

    def deriv_flat(self, t, vec, lap_matrix, u) -> np.ndarray:
        raise NotImplementedError

    def output_flat(self, t, vec) -> np.ndarray:
        raise NotImplementedError

    def weight_min(self, vec) -> float:
        return math.inf

    def deriv_state(self, t: float, state: SystemState, u: np.ndarray) -> SystemState:
        """Structured wrapper over the flat vector field (probe-friendly)."""
        lap = self.process.at(t).matrix
        return self.unpack(self.deriv_flat(t, self.pack(state), lap, np.asarray(u, dtype=float)))

    def output_state(self, t: float, state: SystemState) -> np.ndarray:
        return self.output_flat(t, self.pack(state))

    def closed_loop_affine(self, lap_matrix, row_scale, row_offset):
        """(M, c) with flat derivative = M v + c under u = row_scale * y + offset."""
        return None


class AveragingSystem(FlowTrackerSystem):
    """dx = -L(t) x + u with direct output y = x."""

    name = "averaging"
    supports_affine = True

    def initial_state(self, x, **aux) -> SystemState:
        if aux:
            raise InvalidInputError("averaging has no aux blocks")
        return SystemState(np.atleast_2d(np.asarray(x, dtype=float)))

    def deriv_flat(self, t, vec, lap_matrix, u):
        x = vec.reshape(self.n, self.d)
        return (u - lap_matrix @ x).ravel()

    def output_flat(self, t, vec):
        return vec.reshape(self.n, self.d)

    def closed_loop_affine(self, lap_matrix, row_scale, row_offset):
        big_l = np.kron(lap_matrix, np.eye(self.d))
        m = -big_l + np.diag(np.repeat(row_scale, self.d))
        return m, row_offset.ravel().copy()


class PushSumSystem(FlowTrackerSystem):
    """Ratio consensus: dx = -L x + u, dw = -L w, y_i = x_i / w_i.

    Weight balance is not required; the ratio de-biases the mixing as
    long as the weights stay bounded away from zero.
    """

    name = "push-sum"
    has_weights = True

    def __init__(self, process, d):
        super().__init__(process, d)
        self.aux_layout = (("w", (self.n,)),)

    def initial_state(self, x, w=None, **aux) -> SystemState:
        if aux:
            raise InvalidInputError("push-sum has only the aux block 'w'")
        if w is None:
            w = np.ones(self.n)
        return SystemState(np.atleast_2d(np.asarray(x, dtype=float)), {"w": w})

    def check_initial(self, state: SystemState) -> None:
        self.pack(state)
        if not np.array_equal(state.aux["w"], np.ones(self.n)):
            raise InvalidInputError("push-sum requires w(0) = 1 for every agent")

    def deriv_flat(self, t, vec, lap_matrix, u):
        nd = self._nd
        x = vec[:nd].reshape(self.n, self.d)
        w = vec[nd:]
        return np.concatenate(((u - lap_matrix @ x).ravel(), -(lap_matrix @ w)))

    def output_flat(self, t, vec):
        nd = self._nd
        return vec[:nd].reshape(self.n, self.d) / vec[nd:][:, None]

    def weight_min(self, vec):
        return float(vec[self._nd :].min())


class SaddlePointSystem(FlowTrackerSystem):
    """dx = -a L x - L w + u, dw = L x, y = x, for weight-balanced processes."""

    name = "saddle-point"
    supports_affine = True

    def __init__(self, process, d, a):
        super().__init__(process, d)
        self.a = float(a)
        self.aux_layout = (("w", (self.n, self.d)),)

    def initial_state(self, x, w=None, **aux) -> SystemState:
        if aux:
            raise InvalidInputError("saddle-point has only the aux block 'w'")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if w is None:
            w = np.zeros((self.n, self.d))
        return SystemState(x, {"w": np.atleast_2d(np.asarray(w, dtype=float))})

    def deriv_flat(self, t, vec, lap_matrix, u):
        nd = self._nd
        x = vec[:nd].reshape(self.n, self.d)
        w = vec[nd:].reshape(self.n, self.d)
        lx = lap_matrix @ x
        dx = u - self.a * lx - lap_matrix @ w
        return np.concatenate((dx.ravel(), lx.ravel()))

    def output_flat(self, t, vec):
        return vec[: self._nd].reshape(self.n, self.d)

    def closed_loop_affine(self, lap_matrix, row_scale, row_offset):
        big_l = np.kron(lap_matrix, np.eye(self.d))
        nd = self._nd
        m = np.zeros((2 * nd, 2 * nd))
        m[:nd, :nd] = -self.a * big_l + np.diag(np.repeat(row_scale, self.d))
        m[:nd, nd:] = -big_l
        m[nd:, :nd] = big_l
        c = np.zeros(2 * nd)
        c[:nd] = row_offset.ravel()
        return m, c


class SaddlePushSystem(FlowTrackerSystem):
    """Saddle-point mixing combined with ratio weights, scalar states only.

    dx = -a L x - L z + u, dz = L x, dv = -L v, y_i = x_i / v_i.
    """

    name = "spps"
    has_weights = True

    def __init__(self, process, a):
        super().__init__(process, 1)
        self.a = float(a)
        self.aux_layout = (("z", (self.n,)), ("v", (self.n,)))

    def initial_state(self, x, z=None, v=None, **aux) -> SystemState:
        if aux:
            raise InvalidInputError("spps has aux blocks 'z' and 'v' only")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != 1:
            x = x.reshape(self.n, 1)
        if z is None:
            z = np.zeros(self.n)
        if v is None:
            v = np.ones(self.n)
        return SystemState(x, {"z": z, "v": v})

    def check_initial(self, state: SystemState) -> None:
        self.pack(state)
        if not np.array_equal(state.aux["v"], np.ones(self.n)):
            raise InvalidInputError("spps requires v(0) = 1 for every agent")

    def deriv_flat(self, t, vec, lap_matrix, u):
        n = self.n
        x = vec[:n]
        z = vec[n : 2 * n]
        v = vec[2 * n :]
        lx = lap_matrix @ x
        dx = u[:, 0] - self.a * lx - lap_matrix @ z
        return np.concatenate((dx, lx, -(lap_matrix @ v)))

    def output_flat(self, t, vec):
        n = self.n
        return (vec[:n] / vec[2 * n :])[:, None]

    def weight_min(self, vec):
        return float(vec[2 * self.n :].min())


# --- factories --------------------------------------------------------------


def averaging_system(process: LaplacianProcess, d: int = 1) -> AveragingSystem:
    """Plain mixing plus input; warns when pieces are not weight-balanced,
    since then the state average no longer integrates the average input."""
    if not process.is_weight_balanced():
        warnings.warn(
            "averaging on a non-weight-balanced process: input tracking is not guaranteed",
            stacklevel=2,
        )
    return AveragingSystem(process, d)


def push_sum_system(process: LaplacianProcess, d: int = 1) -> PushSumSystem:
    return PushSumSystem(process, d)


def saddle_point_system(process: LaplacianProcess, a: float, d: int = 1) -> SaddlePointSystem:
    if a <= 0:
        raise InvalidInputError("gain a must be positive")
    if not process.is_weight_balanced():
        raise InvalidInputError("saddle-point dynamics needs weight-balanced pieces")
    if a < 5:
        warnings.warn(
            "gain a < 5 is outside the proven sufficient range", stacklevel=2
        )
    return SaddlePointSystem(process, d, a)


def spps_system(process: LaplacianProcess, a: float, d: int = 1) -> SaddlePushSystem:
    if d != 1:
        raise CapabilityError("spps is defined for scalar agent states (d = 1)")
    if a <= 0:
        raise InvalidInputError("gain a must be positive")
    if a < 5:
        warnings.warn(
            "gain a < 5 is outside the proven sufficient range", stacklevel=2
        )
    return SaddlePushSystem(process, a)


SYSTEM_NAMES = ("averaging", "push-sum", "saddle-point", "spps")


def make_system(name: str, process: LaplacianProcess, d: int = 1, a: float = 5.0):
    if name == "averaging":
        return averaging_system(process, d)
    if name == "push-sum":
        return push_sum_system(process, d)
    if name == "saddle-point":
        return saddle_point_system(process, a, d)
    if name == "spps":
        return spps_system(process, a, d)
    raise InvalidInputError(f"unknown dynamics {name!r}; options: {SYSTEM_NAMES}")


# --- control laws -----------------------------------------------------------


class GradientFeedback:
    """u_i(t) = -alpha(t) * grad f_i(y_i): the distributed gradient feedback."""

    def __init__(self, family: ObjectiveFamily, schedule: StepSchedule):
        self.family = family
        self.schedule = schedule
        self.n = family.n
        self.d = family.d
        fast = _vectorized_grad(family)
        self._grad = fast if fast is not None else (
            lambda y: stacked_gradient(family, y)
        )

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        return (-evaluate(self.schedule, t)) * self._grad(y)

    def rowwise_affine(self):
        """(scale, offset) with u = scale[:, None] * y + offset, if the law
        is affine and time-invariant (constant step, quadratic agents)."""
        if self.schedule.kind != "constant":
            return None
        affine = gradient_affine_map(self.family)
        if affine is None:
            return None
        slope, intercept = affine
        a0 = self.schedule.a0
        return -a0 * slope, -a0 * intercept


class ZeroControl:
    """u identically zero; free mixing."""

    def __init__(self, n: int, d: int):
        self.n = n
        self.d = d
        self._zeros = np.zeros((n, d))

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        return self._zeros

    def rowwise_affine(self):
        return np.zeros(self.n), np.zeros((self.n, self.d))


def gradient_feedback(family: ObjectiveFamily, schedule: StepSchedule) -> GradientFeedback:
    return GradientFeedback(family, schedule)


def predicted_spps_rate(a: float, pi_min: float, gamma: float, n: int) -> float:
    """Per-unit-time contraction factor exp(-2 a pi_min gamma / n^2).

    Valid for gain a >= 5, a strictly positive common stationary
    distribution with smallest entry pi_min, and per-piece minimum cut at
    least gamma.
    """
    if a < 5:
        raise InvalidInputError("the rate formula requires gain a >= 5")
    if not (0 < pi_min <= 1):
        raise InvalidInputError("pi_min must lie in (0, 1]")
    if gamma <= 0:
        raise InvalidInputError("minimum cut gamma must be positive")
    if n < 1:
        raise InvalidInputError("agent count must be positive")
    return math.exp(-2.0 * a * pi_min * gamma / (n * n))
