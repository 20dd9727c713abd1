"""Piecewise-constant drive envelopes and the dCRAB update basis.

A pulse is sampled on a uniform grid; sample ``k`` covers
``[k*dt, (k+1)*dt)`` and basis functions are evaluated at its midpoint.
Amplitudes are angular Rabi rates in rad/s for the two rotating-frame
quadratures (x and y drive components).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

NS = 1e-9
DEFAULT_DT = 0.25 * NS
GUESS_DURATION = 30 * NS
REFERENCE_DURATION = 14 * NS
MAX_OSCILLATIONS = 4


@dataclass(frozen=True, eq=False)
class PulseShape:
    dt: float
    ax: np.ndarray
    ay: np.ndarray

    def __post_init__(self):
        ax = np.array(self.ax, dtype=float)
        ay = np.array(self.ay, dtype=float)
        if ax.ndim != 1 or ax.shape != ay.shape or ax.size < 1:
            raise ValidationError("ax and ay must be equal-length 1-D arrays with >= 1 sample")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        ax.setflags(write=False)
        ay.setflags(write=False)
        object.__setattr__(self, "ax", ax)
        object.__setattr__(self, "ay", ay)

    @property
    def n_samples(self) -> int:
        return self.ax.size

    @property
    def duration(self) -> float:
        return self.dt * self.ax.size

    @property
    def times(self) -> np.ndarray:
        """Sample midpoints in seconds."""
        return (np.arange(self.ax.size) + 0.5) * self.dt

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.ax, self.ay)

    def __eq__(self, other):
        if not isinstance(other, PulseShape):
            return NotImplemented
        return (
            self.dt == other.dt
            and np.array_equal(self.ax, other.ax)
            and np.array_equal(self.ay, other.ay)
        )

    __hash__ = None


def n_samples_for(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1 or duration < dt * (1 - 1e-9):
        raise ValidationError(f"duration {duration:g} s is shorter than dt {dt:g} s")
    return n


def rectangular(amplitude: float, duration: float, dt: float = DEFAULT_DT, phase: float = 0.0) -> PulseShape:
    """Constant-envelope pulse; ``phase`` rotates the drive axis in the xy plane.

    ``duration`` is rounded to the nearest whole number of samples.
    """
    if amplitude < 0:
        raise ValidationError("amplitude must be non-negative; use phase for the drive direction")
    n = n_samples_for(duration, dt)
    ax = np.full(n, amplitude * np.cos(phase))
    ay = np.full(n, amplitude * np.sin(phase))
    # exact zeros keep axis-aligned pulses free of cos(pi/2) residue
    ax[np.abs(ax) < 1e-15 * max(amplitude, 1.0)] = 0.0
    ay[np.abs(ay) < 1e-15 * max(amplitude, 1.0)] = 0.0
    return PulseShape(dt, ax, ay)


def calibrated_amplitude(angle: float, duration: float) -> float:
    """Amplitude giving rotation ``angle`` in ``duration`` for a resonant nominal spin."""
    return abs(angle) / duration


def max_amplitude(reference_duration: float = REFERENCE_DURATION) -> float:
    """The drive bound: the amplitude of the shortest rectangular pi/2 pulse."""
    return calibrated_amplitude(np.pi / 2, reference_duration)


@dataclass(frozen=True, eq=False)
class DcrabBasis:
    """Random-frequency Fourier basis for one super-iteration.

    ``frequencies`` has shape (2, n): row 0 drives ``ax``, row 1 ``ay``. Each
    frequency contributes a cosine and a sine function, so a pulse expansion
    takes ``4 * n`` coefficients ordered per quadrature as
    ``[cos w0, sin w0, cos w1, sin w1, ...]`` for ``ax`` then ``ay``.
    """

    frequencies: np.ndarray
    duration: float

    @property
    def n_coeffs(self) -> int:
        return 2 * self.frequencies.size

    @property
    def vectors_per_pulse(self) -> int:
        return self.frequencies.shape[1]

    def functions(self, times) -> np.ndarray:
        """Basis values, shape (2, 2n, len(times))."""
        t = np.asarray(times, dtype=float)
        wt = self.frequencies[:, :, None] * t[None, None, :]
        out = np.empty((2, 2 * self.vectors_per_pulse, t.size))
        out[:, 0::2] = np.cos(wt)
        out[:, 1::2] = np.sin(wt)
        return out


def frequency_bound(duration: float, n_max: int = MAX_OSCILLATIONS) -> float:
    return 2 * np.pi * n_max / duration


def sample_basis(
    rng: np.random.Generator,
    duration: float,
    vectors_per_pulse: int = 2,
    n_max: int = MAX_OSCILLATIONS,
) -> DcrabBasis:
    if not duration > 0:
        raise ValidationError("basis duration must be positive")
    freqs = rng.uniform(0.0, frequency_bound(duration, n_max), size=(2, vectors_per_pulse))
    freqs.setflags(write=False)
    return DcrabBasis(freqs, duration)


def expand(base: PulseShape, basis: DcrabBasis, coeffs) -> PulseShape:
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis.n_coeffs,):
        raise ValidationError(f"expected {basis.n_coeffs} coefficients, got shape {c.shape}")
    if not c.any():
        return base
    f = basis.functions(base.times)
    c = c.reshape(2, -1)
    dx = c[0] @ f[0]
    dy = c[1] @ f[1]
    return PulseShape(base.dt, base.ax + dx, base.ay + dy)


def clip(pulse: PulseShape, a_max: float) -> PulseShape:
    """Radial clamp of the drive magnitude; the drive phase of each sample is kept."""
    if not a_max > 0:
        raise ValidationError("a_max must be positive")
    mag = pulse.magnitude
    over = mag > a_max
    if not over.any():
        return pulse
    scale = np.ones_like(mag)
    scale[over] = a_max / mag[over]
    ax = pulse.ax * scale
    ay = pulse.ay * scale
    # rounding may leave a sample a few ulps above the bound
    mag2 = np.hypot(ax, ay)
    still = mag2 > a_max
    while still.any():
        ax[still] = np.nextafter(ax[still], 0.0)
        ay[still] = np.nextafter(ay[still], 0.0)
        still = np.hypot(ax, ay) > a_max
    return PulseShape(pulse.dt, ax, ay)


def fluence(pulse: PulseShape) -> float:
    """Integrated squared envelope, in rad^2/s."""
    return float(np.sum(pulse.ax**2 + pulse.ay**2) * pulse.dt)


PULSE_HEADER = ("t_ns", "ax_rad_per_s", "ay_rad_per_s")


def write_pulse_csv(path, pulse: PulseShape) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PULSE_HEADER)
        for t, x, y in zip(pulse.times / NS, pulse.ax, pulse.ay):
            w.writerow([f"{t:.17g}", f"{x:.17g}", f"{y:.17g}"])


def read_pulse_csv(path) -> PulseShape:
    """Inverse of :func:`write_pulse_csv`. Raises ValidationError on malformed files."""
    try:
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError(f"cannot read pulse file {path}: {exc}") from exc
    if not rows or tuple(c.strip() for c in rows[0]) != PULSE_HEADER:
        raise ValidationError(f"{path}: header must be {','.join(PULSE_HEADER)}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != 3:
        raise ValidationError(f"{path}: expected at least one row of three columns")
    t = data[:, 0] * NS
    dt = 2 * t[0]
    if not dt > 0 or not np.allclose(t, (np.arange(t.size) + 0.5) * dt, rtol=1e-9, atol=1e-21):
        raise ValidationError(f"{path}: sample times are not a uniform midpoint grid")
    return PulseShape(dt, data[:, 1], data[:, 2])
