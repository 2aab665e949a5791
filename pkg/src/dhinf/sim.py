"""Fixed-step simulation of reduced closed loops with weighted energy
accumulation, CSV export and plot-script generation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .descriptor import LinearSystem
from .errors import DivergedError, InputError

OVERFLOW = 1e12
DEFAULT_STEP = 1e-3
STABLE_STEP = 2.5  # rho * step bound, inside the RK4 real-axis limit 2.785
STIFF_STEP = 0.05  # rho * step for stiff loops, keeps the trapezoid integrals accurate


class UnsettledWarning(RuntimeWarning):
    """The output still carries energy at the end of the horizon."""


@dataclass(frozen=True)
class Disturbance:
    """``w = K x`` (``gain``), ``w = f(t)`` (``signal``) or zero."""

    gain: np.ndarray | None = None
    signal: Callable[[float], np.ndarray] | None = None

    @classmethod
    def zero(cls) -> "Disturbance":
        return cls()

    @classmethod
    def from_gain(cls, K) -> "Disturbance":
        return cls(gain=np.atleast_2d(np.asarray(K, float)))

    @classmethod
    def from_signal(cls, f: Callable[[float], np.ndarray]) -> "Disturbance":
        return cls(signal=f)

    @classmethod
    def from_samples(cls, times, values) -> "Disturbance":
        """Piecewise-linear interpolation of samples (``len(times) x s``),
        held constant outside the sampled range."""
        t = np.asarray(times, float)
        v = np.asarray(values, float).reshape(t.size, -1)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise InputError("sample times must be strictly increasing")
        return cls(signal=lambda s: np.array([np.interp(s, t, v[:, j]) for j in range(v.shape[1])]))

    def __call__(self, t: float, x: np.ndarray, s: int) -> np.ndarray:
        if self.gain is not None:
            return self.gain @ x
        if self.signal is not None:
            return np.asarray(self.signal(t), float).reshape(s)
        return np.zeros(s)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    z: np.ndarray
    w: np.ndarray
    int_zQz: np.ndarray
    int_wPw: np.ndarray
    state_labels: tuple[str, ...] = ()

    def __post_init__(self):
        N = self.times.size
        for name in ("states", "z", "w", "int_zQz", "int_wPw"):
            if getattr(self, name).shape[0] != N:
                raise InputError(f"trajectory field {name} has inconsistent length")
        if not self.state_labels:
            self.state_labels = tuple(f"xi_{i + 1}" for i in range(self.states.shape[1]))

    @property
    def header(self) -> list[str]:
        return (["t"] + list(self.state_labels)
                + [f"z_{i + 1}" for i in range(self.z.shape[1])]
                + [f"w_{i + 1}" for i in range(self.w.shape[1])]
                + ["int_zQz", "int_wPw"])

    def rows(self) -> np.ndarray:
        return np.column_stack([self.times, self.states, self.z, self.w, self.int_zQz, self.int_wPw])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header)
            for row in self.rows():
                writer.writerow([repr(float(v)) for v in row])
        return path


def _as_system(closedloop) -> LinearSystem:
    if isinstance(closedloop, LinearSystem):
        return closedloop
    system = getattr(closedloop, "system", None)
    if isinstance(system, LinearSystem):
        return system
    raise InputError("simulate needs a LinearSystem or a ClosedLoop")


def default_horizon(A: np.ndarray) -> float:
    """``8 / |Re lambda_slowest|``."""
    if A.size == 0:
        return 1.0
    slow = np.max(np.linalg.eigvals(A).real)
    if slow >= 0:
        raise InputError("default horizon needs a Hurwitz matrix; pass horizon explicitly")
    return 8.0 / abs(slow)


def simulate(closedloop, weights, disturbance: Disturbance | None = None, x_init=None,
             horizon: float | None = None, step: float | None = None) -> Trajectory:
    """RK4 integration of ``x' = A x + B w``, ``z = C x + D w`` with
    trapezoid-accumulated ``int z^T Q z`` and ``int w^T P w``.

    The default step is ``min(1e-3, 0.05 / rho)`` with ``rho`` the spectral
    radius of the (gain-closed) loop; explicit steps beyond the RK4
    stability limit are rejected."""
    sys = _as_system(closedloop)
    disturbance = disturbance or Disturbance.zero()
    n, s = sys.order, sys.B.shape[1]
    x = np.zeros(n) if x_init is None else np.asarray(x_init, float).reshape(-1)
    if x.size != n:
        raise InputError(f"x_init must have {n} entries, got {x.size}")
    if disturbance.gain is not None and disturbance.gain.shape != (s, n):
        raise InputError(f"disturbance gain must be {s}x{n}, got {disturbance.gain.shape}")
    Aeff = sys.A + sys.B @ disturbance.gain if disturbance.gain is not None else sys.A
    rho = float(np.max(np.abs(np.linalg.eigvals(Aeff)))) if n else 0.0
    if step is None:
        step = DEFAULT_STEP if rho * DEFAULT_STEP <= STIFF_STEP else STIFF_STEP / rho
    elif rho * step > STABLE_STEP:
        raise InputError(f"step {step:g} exceeds the RK4 stability limit for the fastest mode "
                         f"(|lambda| = {rho:.3g}); use step <= {0.5 / rho:.3g}")
    if horizon is None:
        horizon = default_horizon(Aeff)
    if not (horizon > 0 and step > 0):
        raise InputError("horizon and step must be positive")
    N = max(int(round(horizon / step)), 1)
    times = np.arange(N + 1) * step
    P, Q = np.atleast_2d(weights.P), np.atleast_2d(weights.Q)
    A, B = sys.A, sys.B

    def f(t, xv):
        return A @ xv + B @ disturbance(t, xv, s)

    states = np.empty((N + 1, n))
    states[0] = x
    for i in range(N):
        t = times[i]
        k1 = f(t, x)
        k2 = f(t + 0.5 * step, x + 0.5 * step * k1)
        k3 = f(t + 0.5 * step, x + 0.5 * step * k2)
        k4 = f(t + step, x + step * k3)
        x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > OVERFLOW:
            raise DivergedError(f"state norm exceeded {OVERFLOW:g} at t={times[i + 1]:g}; loop is unstable")
        states[i + 1] = x
    w = np.array([disturbance(t, xv, s) for t, xv in zip(times, states)]).reshape(N + 1, s)
    z = states @ sys.C.T + w @ sys.D.T
    zq = np.einsum("ij,jk,ik->i", z, Q, z)
    wp = np.einsum("ij,jk,ik->i", w, P, w)
    labels = None
    if sys.G is not None and sys.G.shape[1] < n:
        r = sys.G.shape[1]
        labels = tuple(f"xi_{i + 1}" for i in range(r)) + tuple(f"eta_{i + 1}" for i in range(n - r))
    return Trajectory(
        times, states, z, w,
        cumulative_trapezoid(zq, times, initial=0.0),
        cumulative_trapezoid(wp, times, initial=0.0),
        labels or (),
    )


def achieved_ratio(traj: Trajectory, x0_energy: float = 0.0, weights=None,
                   settle_tol: float = 1e-4) -> float:
    """``||z||_Q / sqrt(||w||_P^2 + x0_energy)`` over the simulated horizon.

    With ``weights`` the integrals are recomputed from the samples. Warns
    with :class:`UnsettledWarning` when the last 10% of the horizon carries
    more than ``settle_tol`` of the output energy.
    """
    if weights is not None:
        P, Q = np.atleast_2d(weights.P), np.atleast_2d(weights.Q)
        zq = cumulative_trapezoid(np.einsum("ij,jk,ik->i", traj.z, Q, traj.z), traj.times, initial=0.0)
        wp = cumulative_trapezoid(np.einsum("ij,jk,ik->i", traj.w, P, traj.w), traj.times, initial=0.0)
    else:
        zq, wp = traj.int_zQz, traj.int_wPw
    denom = float(wp[-1]) + float(x0_energy)
    if not denom > 0:
        raise InputError("zero denominator: ||w||_P^2 + x0 energy must be positive")
    total = float(zq[-1])
    cut = np.searchsorted(traj.times, traj.times[0] + 0.9 * (traj.times[-1] - traj.times[0]))
    tail = total - float(zq[cut])
    if total > 0 and tail > settle_tol * total:
        warnings.warn(
            f"trajectory not settled: last 10% of the horizon holds {tail / total:.2e} of the "
            "output energy; extend the horizon", UnsettledWarning, stacklevel=2)
    return float(np.sqrt(total / denom))


_PLOT_TEMPLATE = '''"""Plot a dhinf trajectory CSV: states and disturbance over time."""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = {csv!r}
OUT = {out!r}

with open(CSV, newline="", encoding="utf-8") as fh:
    reader = csv.reader(fh)
    header = next(reader)
    data = [[float(v) for v in row] for row in reader]
cols = {{name: [row[i] for row in data] for i, name in enumerate(header)}}
t = cols["t"]
states = [h for h in header if h.startswith(("xi_", "eta_"))]
dist = [h for h in header if h.startswith("w_")]
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for name in states:
    ax1.plot(t, cols[name], label=name)
ax1.set_xlabel("t")
ax1.set_title("closed-loop states")
ax1.legend()
for name in dist:
    ax2.plot(t, cols[name], label=name)
ax2.set_xlabel("t")
ax2.set_title("disturbance")
ax2.legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else OUT, dpi=150)
'''


def plot_script(csv_path, out_png=None) -> str:
    csv_path = str(csv_path)
    out_png = str(out_png) if out_png else str(Path(csv_path).with_suffix(".png"))
    return _PLOT_TEMPLATE.format(csv=csv_path, out=out_png)


def write_plot_script(path, csv_path, out_png=None) -> Path:
    path = Path(path)
    path.write_text(plot_script(csv_path, out_png), encoding="utf-8")
    return path
