"""Trajectory integration of flow-tracker systems under a control law.

Classical fixed-step RK4 with the control law evaluated at stage times on
stage states: the feedback is part of the vector field rather than a
zero-order hold, which preserves 4th-order accuracy for the
continuous-time model. Switching instants of the Laplacian process must
land on step boundaries so no step straddles a discontinuity.

When the closed loop is affine and time-invariant within each piece
(linear system, quadratic objectives, constant step size), the RK4 step
collapses to a precomputed affine map; this is the same one-step
polynomial, evaluated faster, and is used automatically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    W_FLOOR,
    FlowTrackerSystem,
    GradientFeedback,
    SystemState,
    ZeroControl,
)
from .errors import (
    DegenerateWeightsError,
    InvalidInputError,
    NumericalFailureError,
)
from .flowcore import check_switch_alignment, steps_in_span

DEFAULT_RECORD_EVERY = 0.1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled record of a simulation run."""

    times: np.ndarray
    x: np.ndarray  # (m, n, d)
    aux: dict[str, np.ndarray]
    y: np.ndarray  # (m, n, d)
    u: np.ndarray  # (m, n, d)
    xbar: np.ndarray  # (m, d)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @property
    def record_interval(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_samples > 1 else 0.0

    @property
    def is_full_resolution(self) -> bool:
        h = self.meta.get("h")
        return h is not None and self.n_samples > 1 and abs(self.record_interval - h) < 1e-12

    def state_at(self, k: int) -> SystemState:
        return SystemState(self.x[k], {name: arr[k] for name, arr in self.aux.items()})

    def _csv_header(self) -> list[str]:
        n, d = self.n, self.d
        cols = ["t"]
        cols += [f"x_{i + 1}" for i in range(n * d)]
        for name, arr in self.aux.items():
            width = int(np.prod(arr.shape[1:]))
            cols += [f"{name}_{i + 1}" for i in range(width)]
        cols += [f"y_{i + 1}" for i in range(n * d)]
        cols += [f"u_{i + 1}" for i in range(n * d)]
        cols += [f"xbar_{i + 1}" for i in range(d)]
        return cols

    def write_csv(self, path) -> None:
        """17-significant-digit text: re-running a config reproduces bytes."""
        def fmt(v: float) -> str:
            return f"{v:.17g}"

        with open(path, "w") as fh:
            fh.write(",".join(self._csv_header()) + "\n")
            for k in range(self.n_samples):
                row = [fmt(self.times[k])]
                row += [fmt(v) for v in self.x[k].ravel()]
                for arr in self.aux.values():
                    row += [fmt(v) for v in np.asarray(arr[k]).ravel()]
                row += [fmt(v) for v in self.y[k].ravel()]
                row += [fmt(v) for v in self.u[k].ravel()]
                row += [fmt(v) for v in self.xbar[k].ravel()]
                fh.write(",".join(row) + "\n")

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for k in range(self.n_samples):
                rec = {
                    "t": float(self.times[k]),
                    "x": self.x[k].tolist(),
                    "aux": {name: arr[k].tolist() for name, arr in self.aux.items()},
                    "y": self.y[k].tolist(),
                    "u": self.u[k].tolist(),
                    "xbar": self.xbar[k].tolist(),
                }
                fh.write(json.dumps(rec) + "\n")


def _affine_step_map(system, law, lap_matrix, h):
    """Exact RK4 one-step map (R, r) for an affine closed loop, or None."""
    coeffs = law.rowwise_affine() if hasattr(law, "rowwise_affine") else None
    if coeffs is None or not system.supports_affine:
        return None
    row_scale, row_offset = coeffs
    built = system.closed_loop_affine(lap_matrix, row_scale, row_offset)
    if built is None:
        return None
    m, c = built
    size = m.shape[0]
    hm = h * m
    step_mat = np.eye(size)
    term = np.eye(size)
    for j in range(1, 5):
        term = term @ hm / j
        step_mat = step_mat + term
    acc = np.eye(size)
    term = np.eye(size)
    for j in range(1, 4):
        term = term @ hm / (j + 1)
        acc = acc + term
    step_off = h * (acc @ c)
    return step_mat, step_off


def integrate(
    system: FlowTrackerSystem,
    law,
    init: SystemState,
    t_end: float,
    h: float,
    record_every: float = DEFAULT_RECORD_EVERY,
    extra_meta: dict | None = None,
    use_affine_path: bool = True,
) -> Trajectory:
    """Integrate `system` under control `law` from `init` to t_end.

    Parameters
    ----------
    law : callable or None
        Maps (t, y) to the control block u (n x d). None means u = 0.
    h : float
        RK4 step; must divide record_every, t_end, and every dwell time.
    record_every : float
        Sampling interval of the returned trajectory; pass h for
        full-resolution records (needed by derivative-based checks).

    Raises
    ------
    InvalidInputError
        Misaligned steps or an initial state outside the system's
        admissible set.
    DegenerateWeightsError
        A ratio weight fell below the positivity floor.
    NumericalFailureError
        Non-finite state, or output outside a declared validity box.
    """
    process = system.process
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    if t_end <= 0:
        raise InvalidInputError("t_end must be positive")
    if t_end > process.horizon + 1e-12:
        raise InvalidInputError(
            f"t_end {t_end} exceeds the process horizon {process.horizon}"
        )
    check_switch_alignment(process, h)
    steps_per_record = steps_in_span(record_every, h, "record interval")
    if steps_per_record < 1:
        raise InvalidInputError("record_every must be at least h")
    n_steps = steps_in_span(t_end, h, "t_end")
    if n_steps % steps_per_record:
        raise InvalidInputError("t_end must be a multiple of record_every")

    system.check_initial(init)
    vec = system.pack(init)

    box = None
    if isinstance(law, GradientFeedback):
        box = law.family.validity_box

    n, d = system.n, system.d
    nd = n * d
    m_records = n_steps // steps_per_record + 1
    times = np.arange(m_records) * (steps_per_record * h)
    x_rec = np.empty((m_records, n, d))
    aux_rec = {
        name: np.empty((m_records, *shape)) for name, shape in system.aux_layout
    }
    y_rec = np.empty((m_records, n, d))
    u_rec = np.empty((m_records, n, d))
    xbar_rec = np.empty((m_records, d))

    law_or_zero = law if law is not None else ZeroControl(n, d)
    guard = system.has_weights
    output = system.output_flat
    deriv = system.deriv_flat

    def record(j: int, t: float):
        if not np.all(np.isfinite(vec)):
            raise NumericalFailureError("state became non-finite", t)
        x_now = vec[:nd].reshape(n, d)
        x_rec[j] = x_now
        offset = nd
        for name, shape in system.aux_layout:
            size = int(np.prod(shape))
            aux_rec[name][j] = vec[offset : offset + size].reshape(shape)
            offset += size
        y_now = output(t, vec)
        y_rec[j] = y_now
        u_rec[j] = law_or_zero(t, y_now)
        xbar_rec[j] = x_now.mean(axis=0)
        if box is not None:
            for row in y_now:
                if not box.contains(row):
                    raise NumericalFailureError(
                        "output left the declared gradient-validity box", t
                    )

    record(0, 0.0)

    # step indices of piece boundaries, clipped to the run
    bounds = [steps_in_span(t, h, "switch time") for t in process.start_times]
    bounds = [b for b in bounds if b < n_steps] + [n_steps]

    h2 = 0.5 * h
    h6 = h / 6.0
    step = 0
    for seg_idx in range(len(bounds) - 1):
        seg_end = bounds[seg_idx + 1]
        if seg_end <= step:
            continue
        lap = process.laplacians[min(seg_idx, len(process.laplacians) - 1)].matrix
        affine = (
            _affine_step_map(system, law_or_zero, lap, h) if use_affine_path else None
        )
        if affine is not None:
            step_mat, step_off = affine
            while step < seg_end:
                vec = step_mat @ vec + step_off
                step += 1
                if step % steps_per_record == 0:
                    record(step // steps_per_record, step * h)
        else:
            while step < seg_end:
                t = step * h
                y = output(t, vec)
                k1 = deriv(t, vec, lap, law_or_zero(t, y))
                v2 = vec + h2 * k1
                k2 = deriv(t + h2, v2, lap, law_or_zero(t + h2, output(t + h2, v2)))
                v3 = vec + h2 * k2
                k3 = deriv(t + h2, v3, lap, law_or_zero(t + h2, output(t + h2, v3)))
                v4 = vec + h * k3
                k4 = deriv(t + h, v4, lap, law_or_zero(t + h, output(t + h, v4)))
                vec = vec + h6 * (k1 + 2.0 * (k2 + k3) + k4)
                step += 1
                if guard and system.weight_min(vec) < W_FLOOR:
                    raise DegenerateWeightsError(
                        "ratio weight fell below the floor "
                        f"{W_FLOOR:g}; the mixing flow is not keeping "
                        "row sums positive",
                        step * h,
                    )
                if step % steps_per_record == 0:
                    record(step // steps_per_record, step * h)

    meta = {
        "system": system.name,
        "n": n,
        "d": d,
        "h": h,
        "record_every": steps_per_record * h,
        "t_end": t_end,
        "c1": system.c1,
    }
    if extra_meta:
        meta.update(extra_meta)
    return Trajectory(times, x_rec, aux_rec, y_rec, u_rec, xbar_rec, meta)


def closed_form_two_agent(alpha: float, x0, t: float) -> np.ndarray:
    """Exact solution of the two-agent constant-step averaging loop.

    The closed loop dx = -(L + alpha I) x + alpha (1, -1) with
    L = [[1, -1], [-1, 1]] has modes exp(-alpha t) on the consensus line
    and exp(-(2 + alpha) t) on the disagreement line, and settles at
    alpha / (2 + alpha) * (1, -1).
    """
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(2)
    if t < 0:
        raise InvalidInputError("t must be nonnegative")
    slow = math.exp(-alpha * t)
    fast = math.exp(-(2.0 + alpha) * t)
    e_at = 0.5 * np.array(
        [[slow + fast, slow - fast], [slow - fast, slow + fast]]
    )
    x_inf = alpha / (2.0 + alpha) * np.array([1.0, -1.0])
    return e_at @ x0 + x_inf - e_at @ x_inf


@dataclass(frozen=True)
class LimitEstimate:
    y_limit: np.ndarray  # (n, d)
    xbar_limit: np.ndarray  # (d,)
    residual: float

    def to_dict(self) -> dict:
        return {
            "y_limit": self.y_limit.tolist(),
            "xbar_limit": self.xbar_limit.tolist(),
            "residual": self.residual,
        }


def estimate_limit(traj: Trajectory, tail_fraction: float = 0.1) -> LimitEstimate:
    """Tail-mean of the outputs with the in-tail spread as residual."""
    if not (0 < tail_fraction <= 1):
        raise InvalidInputError("tail_fraction must lie in (0, 1]")
    m_tail = int(math.ceil(traj.n_samples * tail_fraction))
    if m_tail < 10:
        raise InvalidInputError(
            f"tail holds {m_tail} samples; need at least 10 for a stable estimate"
        )
    tail_y = traj.y[-m_tail:]
    tail_xbar = traj.xbar[-m_tail:]
    y_limit = tail_y.mean(axis=0)
    xbar_limit = tail_xbar.mean(axis=0)
    residual = float(
        max(np.abs(tail_y - y_limit).max(), np.abs(tail_xbar - xbar_limit).max())
    )
    return LimitEstimate(y_limit, xbar_limit, residual)
