"""Parametric synthesis of power-quality disturbance waveforms.

Sixteen classes: an undisturbed sinusoid plus 15 disturbance types (9
simple, 6 composite). Every synthesized record keeps its clean reference,
its exact disturbance component and the additive noise separately, so the
ground-truth disturbance mask can be computed by thresholding the
disturbance component alone.

Time is indexed 0..N-1; the reference is ``A*sin(omega*n + phase)`` with
``omega = 2*pi*cycles/n_samples`` radians per sample.
"""

from dataclasses import dataclass, field, fields
import math

import numpy as np

CLASS_NAMES = (
    "normal",
    "sag",
    "swell",
    "interruption",
    "harmonics",
    "flicker",
    "oscillatory_transient",
    "impulsive_transient",
    "notch",
    "spike",
    "flicker_harmonics",
    "flicker_sag",
    "flicker_swell",
    "interruption_harmonics",
    "sag_harmonics",
    "swell_harmonics",
)
N_CLASSES = len(CLASS_NAMES)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}
NORMAL = CLASS_IDS["normal"]

# Composite classes are superpositions of simple disturbance components.
COMPOSITE_PARTS = {
    CLASS_IDS["flicker_harmonics"]: ("flicker", "harmonics"),
    CLASS_IDS["flicker_sag"]: ("flicker", "sag"),
    CLASS_IDS["flicker_swell"]: ("flicker", "swell"),
    CLASS_IDS["interruption_harmonics"]: ("interruption", "harmonics"),
    CLASS_IDS["sag_harmonics"]: ("sag", "harmonics"),
    CLASS_IDS["swell_harmonics"]: ("swell", "harmonics"),
}

# Uniform sampling ranges for disturbance parameters (amplitudes in per
# unit of the nominal amplitude, durations in cycles).
SAG_DEPTH = (0.1, 0.9)
SWELL_MAGNITUDE = (0.1, 0.8)
INTERRUPTION_DEPTH = (0.9, 1.0)
HARMONIC_AMPLITUDE = (0.05, 0.15)
FLICKER_AMPLITUDE = (0.08, 0.2)
FLICKER_FREQ_RATIO = (0.1, 0.3)
TRANSIENT_AMPLITUDE = (0.5, 0.9)
RING_FREQ_RATIO = (6.0, 12.0)
EVENT_CYCLES = (1.0, 9.0)
OSC_CYCLES = (0.25, 3.0)
IMPULSE_WIDTH = (2, 8)
PULSE_COUNT = (1, 6)
PULSE_WIDTH = (2, 8)
PULSE_DEPTH = (0.1, 0.4)


class ConfigurationError(ValueError):
    """Invalid signal configuration or class id."""


@dataclass(frozen=True)
class SignalConfig:
    """Global waveform geometry and synthesis settings."""

    n_samples: int = 640
    cycles: int = 10
    amplitude: float = 1.0
    phase: float = 0.0
    snr_db: float = 40.0
    epsilon: float = 1e-4
    random_phase: bool = True

    def __post_init__(self):
        if self.n_samples <= 0 or self.cycles <= 0:
            raise ConfigurationError("n_samples and cycles must be positive")
        if self.n_samples % self.cycles != 0:
            raise ConfigurationError(
                f"n_samples ({self.n_samples}) must be an integer multiple of "
                f"cycles ({self.cycles})"
            )
        if self.amplitude <= 0:
            raise ConfigurationError("amplitude must be positive")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if not math.isfinite(self.snr_db):
            raise ConfigurationError("snr_db must be finite")

    @property
    def samples_per_cycle(self) -> int:
        return self.n_samples // self.cycles

    @property
    def omega(self) -> float:
        """Angular frequency in radians per sample."""
        return 2.0 * math.pi * self.cycles / self.n_samples


@dataclass
class DisturbanceParams:
    """Fixed-slot parameter record; unused slots stay at zero.

    ``alpha`` is the event depth/magnitude for sag/swell/interruption and
    the amplitude of transients; ``t1``/``t2`` delimit the event interval
    (half-open, in samples). Composite classes fill the slots of both
    constituents (their slot sets are disjoint).
    """

    phase: float = 0.0
    alpha: float = 0.0
    t1: int = 0
    t2: int = 0
    alpha3: float = 0.0
    alpha5: float = 0.0
    alpha7: float = 0.0
    flicker_amp: float = 0.0
    flicker_beta: float = 0.0
    flicker_phase: float = 0.0
    tau: float = 0.0
    ring_omega: float = 0.0
    pulse_count: int = 0
    pulse_width: int = 0
    pulse_depth: float = 0.0
    pulse_sign: float = 0.0

    def to_slots(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float32)

    @classmethod
    def from_slots(cls, slots) -> "DisturbanceParams":
        kwargs = {}
        for f, v in zip(fields(cls), slots):
            kwargs[f.name] = int(round(float(v))) if f.type is int else float(v)
        return cls(**kwargs)


N_PARAM_SLOTS = len(fields(DisturbanceParams))


@dataclass
class Waveform:
    """One synthesized record: observed signal and its exact addends."""

    x: np.ndarray
    x0: np.ndarray
    d: np.ndarray
    class_id: int
    params: DisturbanceParams
    split_id: int = 0

    @property
    def noise(self) -> np.ndarray:
        return self.x - self.x0 - self.d


@dataclass
class GroundTruthMask:
    """Binary disturbance mask with its index set."""

    mask: np.ndarray
    indices: np.ndarray
    length: int


def reference_signal(config: SignalConfig, phase: float | None = None) -> np.ndarray:
    """Clean sinusoidal reference, ``A*sin(omega*n + phase)`` for n=0..N-1."""
    n = np.arange(config.n_samples, dtype=np.float64)
    p = config.phase if phase is None else phase
    return config.amplitude * np.sin(config.omega * n + p)


def _interval(params: DisturbanceParams, n: int) -> np.ndarray:
    ind = np.zeros(n, dtype=np.float64)
    ind[params.t1 : params.t2] = 1.0
    return ind


def _harmonic_sum(params: DisturbanceParams, config: SignalConfig) -> np.ndarray:
    # Harmonics are phase-locked to the fundamental.
    n = np.arange(config.n_samples, dtype=np.float64)
    base = config.omega * n + params.phase
    return (
        params.alpha3 * np.sin(3.0 * base)
        + params.alpha5 * np.sin(5.0 * base)
        + params.alpha7 * np.sin(7.0 * base)
    ) * config.amplitude


def _component(kind: str, params: DisturbanceParams, config: SignalConfig) -> np.ndarray:
    n_samp = config.n_samples
    x0 = reference_signal(config, params.phase)
    n = np.arange(n_samp, dtype=np.float64)
    if kind == "sag" or kind == "interruption":
        return -params.alpha * x0 * _interval(params, n_samp)
    if kind == "swell":
        return params.alpha * x0 * _interval(params, n_samp)
    if kind == "harmonics":
        return _harmonic_sum(params, config)
    if kind == "flicker":
        envelope = params.flicker_amp * np.sin(
            params.flicker_beta * config.omega * n + params.flicker_phase
        )
        return envelope * x0
    if kind == "oscillatory_transient":
        rel = n - params.t1
        ring = params.alpha * np.exp(-rel / params.tau) * np.sin(params.ring_omega * rel)
        return config.amplitude * ring * _interval(params, n_samp)
    if kind == "impulsive_transient":
        rel = n - params.t1
        width = max(params.pulse_width, 1)
        pulse = params.pulse_sign * params.alpha * np.exp(-3.0 * rel / width)
        return config.amplitude * pulse * _interval(params, n_samp)
    if kind == "notch" or kind == "spike":
        sign = -1.0 if kind == "notch" else 1.0
        spc = config.samples_per_cycle
        d = np.zeros(n_samp)
        for j in range(params.pulse_count):
            start = params.t1 + j * spc
            stop = min(start + params.pulse_width, n_samp)
            d[start:stop] = 1.0
        return sign * params.pulse_depth * config.amplitude * np.sign(x0) * d
    raise ConfigurationError(f"unknown disturbance component {kind!r}")


def disturbance_component(
    class_id: int, params: DisturbanceParams, config: SignalConfig
) -> np.ndarray:
    """Exact disturbance component d for a class; zero vector for normal."""
    if not 0 <= class_id < N_CLASSES:
        raise ConfigurationError(f"invalid class id {class_id}")
    if class_id == NORMAL:
        return np.zeros(config.n_samples, dtype=np.float64)
    name = CLASS_NAMES[class_id]
    if class_id in COMPOSITE_PARTS:
        parts = COMPOSITE_PARTS[class_id]
        return sum(_component(p, params, config) for p in parts)
    return _component(name, params, config)


def _sample_event_interval(rng, config: SignalConfig, cycles_range) -> tuple[int, int]:
    spc = config.samples_per_cycle
    lo = max(2, int(round(cycles_range[0] * spc)))
    hi = int(round(cycles_range[1] * spc))
    duration = int(rng.integers(lo, hi + 1))
    t1 = int(rng.integers(0, config.n_samples - duration + 1))
    return t1, t1 + duration


def sample_params(class_id: int, config: SignalConfig, rng) -> DisturbanceParams:
    """Draw disturbance parameters uniformly from the declared ranges."""
    if not 0 <= class_id < N_CLASSES:
        raise ConfigurationError(f"invalid class id {class_id}")
    p = DisturbanceParams()
    p.phase = float(rng.uniform(0.0, 2.0 * math.pi)) if config.random_phase else config.phase
    if class_id == NORMAL:
        return p
    name = CLASS_NAMES[class_id]
    parts = COMPOSITE_PARTS.get(class_id, (name,))
    for part in parts:
        if part == "sag":
            p.alpha = float(rng.uniform(*SAG_DEPTH))
            p.t1, p.t2 = _sample_event_interval(rng, config, EVENT_CYCLES)
        elif part == "swell":
            p.alpha = float(rng.uniform(*SWELL_MAGNITUDE))
            p.t1, p.t2 = _sample_event_interval(rng, config, EVENT_CYCLES)
        elif part == "interruption":
            p.alpha = float(rng.uniform(*INTERRUPTION_DEPTH))
            p.t1, p.t2 = _sample_event_interval(rng, config, EVENT_CYCLES)
        elif part == "harmonics":
            p.alpha3 = float(rng.uniform(*HARMONIC_AMPLITUDE))
            p.alpha5 = float(rng.uniform(*HARMONIC_AMPLITUDE))
            p.alpha7 = float(rng.uniform(*HARMONIC_AMPLITUDE))
        elif part == "flicker":
            p.flicker_amp = float(rng.uniform(*FLICKER_AMPLITUDE))
            p.flicker_beta = float(rng.uniform(*FLICKER_FREQ_RATIO))
            p.flicker_phase = float(rng.uniform(0.0, 2.0 * math.pi))
        elif part == "oscillatory_transient":
            p.alpha = float(rng.uniform(*TRANSIENT_AMPLITUDE))
            p.t1, p.t2 = _sample_event_interval(rng, config, OSC_CYCLES)
            p.tau = float(rng.uniform((p.t2 - p.t1) / 8.0, (p.t2 - p.t1) / 3.0))
            p.ring_omega = float(rng.uniform(*RING_FREQ_RATIO)) * config.omega
        elif part == "impulsive_transient":
            p.alpha = float(rng.uniform(*TRANSIENT_AMPLITUDE))
            p.pulse_width = int(rng.integers(IMPULSE_WIDTH[0], IMPULSE_WIDTH[1] + 1))
            p.t1 = int(rng.integers(0, config.n_samples - p.pulse_width + 1))
            p.t2 = p.t1 + p.pulse_width
            p.pulse_sign = 1.0 if rng.uniform() < 0.5 else -1.0
        elif part in ("notch", "spike"):
            spc = config.samples_per_cycle
            p.pulse_count = int(rng.integers(PULSE_COUNT[0], PULSE_COUNT[1] + 1))
            p.pulse_width = int(rng.integers(PULSE_WIDTH[0], PULSE_WIDTH[1] + 1))
            p.pulse_depth = float(rng.uniform(*PULSE_DEPTH))
            start_cycle = int(rng.integers(0, config.cycles - p.pulse_count + 1))
            offset = int(rng.integers(0, spc - p.pulse_width + 1))
            p.t1 = start_cycle * spc + offset
            p.t2 = p.t1 + (p.pulse_count - 1) * spc + p.pulse_width
        else:
            raise ConfigurationError(f"unknown component {part!r}")
    return p


def synthesize(
    class_id: int, params: DisturbanceParams, config: SignalConfig, rng
) -> Waveform:
    """Build a waveform: x = x0 + d + gaussian noise at the configured SNR.

    The noise level is set relative to the clean reference power
    ``A^2/2``; the stored addends satisfy ``x == x0 + d + noise`` exactly.
    """
    x0 = reference_signal(config, params.phase)
    d = disturbance_component(class_id, params, config)
    sigma = config.amplitude / math.sqrt(2.0) * 10.0 ** (-config.snr_db / 20.0)
    noise = rng.normal(0.0, sigma, config.n_samples)
    return Waveform(x=x0 + d + noise, x0=x0, d=d, class_id=class_id, params=params)


def synthesize_random(class_id: int, config: SignalConfig, rng) -> Waveform:
    """Sample parameters, then synthesize."""
    return synthesize(class_id, sample_params(class_id, config, rng), config, rng)


def ground_truth_mask(waveform: Waveform, epsilon: float) -> GroundTruthMask:
    """Mask of indices where the disturbance component exceeds epsilon.

    Independent of noise and of any model: it thresholds |d| only.
    """
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    mask = np.abs(waveform.d) > epsilon
    indices = np.flatnonzero(mask)
    return GroundTruthMask(mask=mask.astype(np.uint8), indices=indices, length=int(indices.size))
