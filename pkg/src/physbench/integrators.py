"""
Time steppers: adaptive Dormand-Prince RK45 with dense output, forward Euler,
kick-drift-kick leapfrog and forward Euler with bouncing-ball ground contact

Derivative callbacks have the signature f(t, y) -> dy/dt.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from physbench.models import ContractError, IntegrationError, IntegratorConfig, NumericError
from physbench.systems import apply_contact

DerivativeFn = Callable[[float, np.ndarray], np.ndarray]

# Dormand-Prince 5(4) tableau
RK45_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
RK45_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
RK45_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# difference between the 5th and embedded 4th order weights, last entry weighs the FSAL stage
RK45_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# free 4th order interpolant, y(t + theta h) = y + h K^T P [theta, theta^2, theta^3, theta^4]
RK45_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ],
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1 / 5


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    states sampled on a strictly monotonic time grid, one row per time; backward runs have decreasing times
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'states', states)
        if times.ndim != 1 or states.ndim != 2 or len(times) != len(states):
            raise ContractError(f'Trajectory needs one state row per time, got {times.shape} and {states.shape}')
        deltas = np.diff(times)
        if len(times) > 1 and not (np.all(deltas > 0) or np.all(deltas < 0)):
            raise ContractError('Trajectory times must be strictly monotonic')
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise NumericError('Trajectory contains non-finite entries')

    def __len__(self) -> int:
        return len(self.times)

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]

    def uniform_step(self, tolerance: float = 1e-9) -> float:
        """
        the grid step of a uniform trajectory, raises if the grid is not uniform
        """
        if len(self.times) < 2:
            raise ContractError('A single-point trajectory has no time step')
        deltas = np.diff(self.times)
        if np.max(np.abs(deltas - deltas[0])) > tolerance * max(1.0, abs(deltas[0])):
            raise ContractError('Trajectory time grid is not uniform')
        return float(deltas[0])


def _checked(derivative: np.ndarray, t: float) -> np.ndarray:
    derivative = np.asarray(derivative, dtype=np.float64)
    if not np.all(np.isfinite(derivative)):
        raise NumericError(f'Non-finite derivative at t={t}')
    return derivative


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values * values)))


def _initial_step(f: DerivativeFn, t0: float, y0: np.ndarray, f0: np.ndarray, cfg: IntegratorConfig, span: float):
    """
    starting step from the derivative scale and a one-step probe of the second derivative
    """
    scale = cfg.atol + np.abs(y0) * cfg.rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = _checked(f(t0 + h0, y0 + h0 * f0), t0 + h0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span, cfg.max_step)


def rk45_integrate(f: DerivativeFn, y0, sample_times, cfg: IntegratorConfig | None = None) -> Trajectory:
    """
    Dormand-Prince 5(4) with error control on max(rtol * |y|, atol) and dense output at sample_times

    Args:
        f (callable): f(t, y) -> dy/dt
        y0 (array): state at sample_times[0]
        sample_times (array): strictly increasing output times
        cfg (IntegratorConfig): tolerances and step limits

    Returns:
        Trajectory sampled at sample_times
    """
    cfg = cfg or IntegratorConfig()
    times = np.asarray(sample_times, dtype=np.float64)
    if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) <= 0):
        raise ContractError('sample_times must be a non-empty, strictly increasing vector')

    y = np.array(y0, dtype=np.float64)
    t = float(times[0])
    t_end = float(times[-1])
    out = [y.copy()]
    if len(times) == 1:
        return Trajectory(times, np.array(out))

    fy = _checked(f(t, y), t)
    h = cfg.first_step if cfg.first_step is not None else _initial_step(f, t, y, fy, cfg, t_end - t)
    stages = np.zeros((7, len(y)))
    next_sample = 1
    steps = 0

    while next_sample < len(times):
        if steps >= cfg.max_steps:
            raise IntegrationError(f'RK45 exceeded {cfg.max_steps} steps at t={t}')
        h = min(h, cfg.max_step)
        final = t + h >= t_end - 4 * np.finfo(float).eps * max(abs(t_end), 1.0)
        if final:
            h = t_end - t
        if h <= 10 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError(f'RK45 step size underflow at t={t}')

        stages[0] = fy
        for i in range(1, 6):
            increment = stages[:i].T @ RK45_A[i]
            stages[i] = _checked(f(t + RK45_C[i] * h, y + h * increment), t + RK45_C[i] * h)
        y_new = y + h * (stages[:6].T @ RK45_B)
        t_new = t_end if final else t + h
        f_new = _checked(f(t_new, y_new), t_new)
        stages[6] = f_new

        scale = np.maximum(cfg.rtol * np.maximum(np.abs(y), np.abs(y_new)), cfg.atol)
        error = _rms(h * (stages.T @ RK45_E) / scale)
        steps += 1

        if error <= 1.0:
            while next_sample < len(times) and times[next_sample] <= t_new:
                if times[next_sample] == t_new:
                    out.append(y_new.copy())
                else:
                    theta = (times[next_sample] - t) / h
                    out.append(y + h * (stages.T @ (RK45_P @ np.array([theta, theta**2, theta**3, theta**4]))))
                next_sample += 1
            factor = MAX_FACTOR if error == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * error**ERROR_EXPONENT))
            t, y, fy = t_new, y_new, f_new
            h *= factor
        else:
            h *= max(MIN_FACTOR, SAFETY * error**ERROR_EXPONENT)

    return Trajectory(times, np.array(out))


def euler_integrate(f: DerivativeFn, y0, dt: float, n_steps: int, t0: float = 0.0) -> Trajectory:
    """
    forward Euler, y_{k+1} = y_k + dt f(t_k, y_k)
    """
    return integrate_with_contact(f, y0, dt, n_steps, rho=None, t0=t0)


def leapfrog_step(q, p, grad_v: Callable, grad_k: Callable, dt: float):
    """
    one kick-drift-kick step; works on arrays and on graph nodes alike
    """
    p_half = p - (0.5 * dt) * grad_v(q)
    q_next = q + dt * grad_k(p_half)
    p_next = p_half - (0.5 * dt) * grad_v(q_next)
    return q_next, p_next


def leapfrog_integrate(
    grad_v: Callable[[np.ndarray], np.ndarray],
    grad_k: Callable[[np.ndarray], np.ndarray],
    z0,
    dt: float,
    n_steps: int,
    t0: float = 0.0,
) -> Trajectory:
    """
    leapfrog for a separable Hamiltonian, recording (q, p) at whole steps

    Args:
        grad_v (callable): q -> dV/dq
        grad_k (callable): p -> dK/dp
        z0 (array): initial (q, p)
        dt (float): step, non-zero; a negative step runs backwards in time
        n_steps (int): number of steps, 0 returns z0 only
        t0 (float): initial time
    """
    if dt == 0 or not np.isfinite(dt):
        raise ContractError(f'Leapfrog dt must be finite and non-zero, got {dt}')
    z0 = np.array(z0, dtype=np.float64)
    n = len(z0) // 2
    q, p = z0[:n], z0[n:]
    states = [z0]
    for _ in range(n_steps):
        q, p = leapfrog_step(q, p, grad_v, grad_k, dt)
        state = np.concatenate([q, p])
        if not np.all(np.isfinite(state)):
            raise NumericError(f'Leapfrog produced a non-finite state after {len(states)} steps')
        states.append(state)
    return Trajectory(t0 + dt * np.arange(n_steps + 1), np.array(states))


def integrate_with_contact(
    f: DerivativeFn,
    y0,
    dt: float,
    n_steps: int,
    rho: float | None,
    t0: float = 0.0,
) -> Trajectory:
    """
    forward Euler; with a restitution, any step ending at q <= 0 moving downwards is followed by ground contact

    Args:
        f (callable): f(t, y) -> dy/dt
        y0 (array): (q, p) or (q, qdot) of the ball
        dt (float): fixed step
        n_steps (int): number of steps
        rho (float | None): coefficient of restitution, None disables contact
        t0 (float): initial time
    """
    if dt <= 0:
        raise ContractError('Euler dt must be strictly positive')
    y = np.array(y0, dtype=np.float64)
    times = t0 + dt * np.arange(n_steps + 1)
    states = [y]
    for step in range(n_steps):
        y = y + dt * _checked(f(times[step], y), times[step])
        if rho is not None and y[0] <= 0 and y[1] < 0:
            y = apply_contact(y, rho)
        if not np.all(np.isfinite(y)):
            raise NumericError(f'Euler produced a non-finite state at t={times[step + 1]}')
        states.append(y)
    return Trajectory(times, np.array(states))
