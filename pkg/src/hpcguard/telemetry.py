"""Counter telemetry: samples, traces, scaling, windowing, synthesis.

Every trace carries five hardware event channels in a fixed order:
instructions, cache_references, cache_misses, branches, branch_misses.
Samples arrive at a fixed cadence (10 ms by default), either parsed from
interval-mode ``perf stat`` text or synthesized for repeatable experiments.

The synthesized regimes model four workload behaviors on top of a common
noise floor: quiet baseline, ransomware-like repeated encryption (strictly
periodic bursts), sustained high-compute load (elevated but aperiodic), and
a whole-disk encryptor (periodic bursts with a fixed, recognizable shape,
running with administrator privilege).
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

import numpy as np

CHANNELS = (
    "instructions",
    "cache_references",
    "cache_misses",
    "branches",
    "branch_misses",
)
N_CHANNELS = len(CHANNELS)
DEFAULT_INTERVAL_MS = 10

# perf prints event names with hyphens; accept both spellings.
_EVENT_ALIASES = {name.replace("_", "-"): name for name in CHANNELS}
_EVENT_ALIASES.update({name: name for name in CHANNELS})


class Privilege(enum.Enum):
    USER = "User"
    ADMINISTRATOR = "Administrator"


class Regime(enum.Enum):
    BASELINE = "Baseline"
    REPEATED_ENCRYPTION = "RepeatedEncryption"
    HIGH_COMPUTE = "HighCompute"
    DISK_ENCRYPTION = "DiskEncryption"
    UNKNOWN = "Unknown"


class TelemetryError(Exception):
    """Base class for telemetry parsing and preparation failures."""


class MalformedLine(TelemetryError):
    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: cannot parse {line!r}")


class UnsupportedEvent(TelemetryError):
    def __init__(self, line_no: int, event: str):
        self.line_no = line_no
        self.event = event
        super().__init__(f"line {line_no}: unsupported event {event!r}")


class IncompleteGroup(TelemetryError):
    def __init__(self, elapsed_s: float, missing: tuple[str, ...]):
        self.elapsed_s = elapsed_s
        self.missing = missing
        super().__init__(f"group at {elapsed_s}s missing events {missing}")


class NonMonotonicTime(TelemetryError):
    def __init__(self, line_no: int, elapsed_s: float):
        self.line_no = line_no
        self.elapsed_s = elapsed_s
        super().__init__(f"line {line_no}: elapsed time {elapsed_s}s does not increase")


class EmptyCorpus(TelemetryError):
    """No samples were available to fit a scaler."""


class UnknownProfile(TelemetryError):
    def __init__(self, profile: object):
        super().__init__(f"no synthesis profile for {profile!r}")


@dataclass(frozen=True)
class CounterSample:
    """One sampling interval: five event counts captured together."""

    tick: int
    elapsed_ms: int
    counts: tuple[int, int, int, int, int]


@dataclass(eq=False)
class Trace:
    """Ordered counter samples plus capture context."""

    samples: list[CounterSample]
    interval_ms: int = DEFAULT_INTERVAL_MS
    privilege: Privilege = Privilege.USER
    regime: Regime = Regime.UNKNOWN

    def __len__(self) -> int:
        return len(self.samples)

    def counts_matrix(self) -> np.ndarray:
        """Samples as a float64 matrix of shape (n_samples, 5)."""
        if not self.samples:
            return np.zeros((0, N_CHANNELS), dtype=np.float64)
        return np.array([s.counts for s in self.samples], dtype=np.float64)

    def same_samples(self, other: "Trace") -> bool:
        return self.interval_ms == other.interval_ms and self.samples == other.samples


# ---------------------------------------------------------------------------
# perf stat interval-mode text


_VALUE_RE = re.compile(r"^\d{1,3}(,\d{3})*$|^\d+$")


def parse_perf_interval_output(text: str) -> Trace:
    """Parse interval-mode ``perf stat`` text into a Trace.

    Each data line carries elapsed seconds, a counter value (optionally with
    thousands separators, or the token ``<not counted>`` meaning zero) and an
    event name. Lines of one elapsed timestamp form a group; a group must
    supply all five supported events exactly once. Blank lines and lines
    starting with ``#`` are ignored, as are extra trailing fields.
    """
    groups: list[tuple[float, dict[str, int]]] = []
    current_time: float | None = None
    current: dict[str, int] = {}

    def close_group() -> None:
        if current_time is None:
            return
        missing = tuple(name for name in CHANNELS if name not in current)
        if missing:
            raise IncompleteGroup(current_time, missing)
        groups.append((current_time, dict(current)))

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3:
            raise MalformedLine(line_no, raw)
        try:
            elapsed_s = float(fields[0])
        except ValueError:
            raise MalformedLine(line_no, raw) from None
        # "<not counted>" splits into two tokens.
        if fields[1] == "<not" and fields[2] == "counted>":
            if len(fields) < 4:
                raise MalformedLine(line_no, raw)
            value = 0
            event_field = fields[3]
        else:
            if not _VALUE_RE.match(fields[1]):
                raise MalformedLine(line_no, raw)
            value = int(fields[1].replace(",", ""))
            event_field = fields[2]
        event = _EVENT_ALIASES.get(event_field)
        if event is None:
            raise UnsupportedEvent(line_no, event_field)
        if current_time is not None and elapsed_s == current_time:
            if event in current:
                raise MalformedLine(line_no, raw)
            current[event] = value
        else:
            close_group()
            if current_time is not None and elapsed_s <= current_time:
                raise NonMonotonicTime(line_no, elapsed_s)
            current_time = elapsed_s
            current = {event: value}
    close_group()

    samples = []
    for tick, (elapsed_s, counts) in enumerate(groups):
        samples.append(
            CounterSample(
                tick=tick,
                elapsed_ms=round(elapsed_s * 1000.0),
                counts=tuple(counts[name] for name in CHANNELS),
            )
        )
    if len(samples) >= 2:
        interval_ms = samples[1].elapsed_ms - samples[0].elapsed_ms
    elif samples:
        interval_ms = samples[0].elapsed_ms or DEFAULT_INTERVAL_MS
    else:
        interval_ms = DEFAULT_INTERVAL_MS
    return Trace(samples=samples, interval_ms=interval_ms)


def format_perf_interval_output(trace: Trace) -> str:
    """Serialize a trace back to perf-style interval text.

    Inverse of :func:`parse_perf_interval_output` up to sample equality.
    """
    out = ["#           time             counts event"]
    for sample in trace.samples:
        elapsed = sample.elapsed_ms / 1000.0
        for name, value in zip(CHANNELS, sample.counts):
            out.append(f"{elapsed:>16.9f} {value:>18,} {name.replace('_', '-')}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# trace files

_HEADER_RE = re.compile(
    r"^# interval_ms=(\d+) privilege=(User|Administrator) regime=(\w+)$"
)


def save_trace(path, trace: Trace) -> None:
    """Write a trace to a self-describing CSV file. Round-trips bit-exactly."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(
            f"# interval_ms={trace.interval_ms} "
            f"privilege={trace.privilege.value} regime={trace.regime.value}\n"
        )
        for s in trace.samples:
            row = ",".join(str(v) for v in s.counts)
            fh.write(f"{s.tick},{s.elapsed_ms},{row}\n")


def load_trace(path) -> Trace:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        match = _HEADER_RE.match(header)
        if not match:
            raise MalformedLine(1, header)
        interval_ms = int(match.group(1))
        privilege = Privilege(match.group(2))
        try:
            regime = Regime(match.group(3))
        except ValueError:
            raise MalformedLine(1, header) from None
        samples = []
        for line_no, raw in enumerate(fh, start=2):
            fields = raw.rstrip("\n").split(",")
            if len(fields) != 2 + N_CHANNELS:
                raise MalformedLine(line_no, raw)
            try:
                numbers = [int(v) for v in fields]
            except ValueError:
                raise MalformedLine(line_no, raw) from None
            samples.append(
                CounterSample(
                    tick=numbers[0],
                    elapsed_ms=numbers[1],
                    counts=tuple(numbers[2:]),
                )
            )
    return Trace(samples=samples, interval_ms=interval_ms, privilege=privilege, regime=regime)


# ---------------------------------------------------------------------------
# scaling and windowing


@dataclass
class Scaler:
    """Per-channel standardization fitted on normal traces.

    Channels with zero spread record std = 1 so transform stays total.
    """

    mean: np.ndarray
    std: np.ndarray

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=np.float64) * self.std + self.mean

    @classmethod
    def fit_rows(cls, rows: np.ndarray) -> "Scaler":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.size == 0:
            raise EmptyCorpus("cannot fit a scaler on zero samples")
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)  # population std
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean=mean, std=std)


def fit_scaler(traces: list[Trace]) -> Scaler:
    """Fit per-channel mean/std over every sample of the given traces."""
    matrices = [t.counts_matrix() for t in traces if len(t)]
    if not matrices:
        raise EmptyCorpus("cannot fit a scaler on zero samples")
    return Scaler.fit_rows(np.concatenate(matrices, axis=0))


@dataclass(eq=False)
class Window:
    """A contiguous slice of scaled samples, window_len rows by 5 channels."""

    start_tick: int
    values: np.ndarray


def window_count(n_samples: int, window_len: int, stride: int) -> int:
    """Number of sliding windows over n_samples."""
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be positive")
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // stride + 1


def windowize(
    trace: Trace,
    scaler: Scaler,
    window_len: int = 100,
    stride: int = 1,
) -> list[Window]:
    """Slice a trace into scaled, overlapping windows.

    Returns floor((n - window_len) / stride) + 1 windows for n >= window_len,
    otherwise an empty list. Window values are the scaler-transformed counts.
    """
    count = window_count(len(trace), window_len, stride)
    if count == 0:
        return []
    scaled = scaler.transform(trace.counts_matrix())
    windows = []
    for i in range(count):
        start = i * stride
        windows.append(Window(start_tick=start, values=scaled[start : start + window_len].copy()))
    return windows


# ---------------------------------------------------------------------------
# synthetic regimes

# Plausible per-10ms magnitudes for a busy desktop core.
_BASE_RATES = np.array([2.0e6, 3.0e5, 4.0e4, 4.0e5, 2.0e4])
_NOISE_STD = np.array([5.0e4, 1.0e4, 2.5e3, 1.2e4, 1.2e3])

# Baseline is white noise whose amplitude breathes on one slow machine-wide
# cycle, plus a small bank of fixed-period oscillations. The periods are
# machine characteristics; phases are drawn per trace, and a window sees
# less than one full period of any component, so every local arc shape
# recurs many times inside a single trace and a model trained on a handful
# of traces has seen the whole family. The breathing noise floor sweeps a
# bounded band end to end in every trace, so reconstruction error lives on
# a fully explored bounded band instead of a thin statistical tail.
_COMPONENT_PERIODS = (197.0, 263.0, 359.0)
_COMPONENT_AMPS = (0.80, 0.70, 0.60)
_NOISE_LFO_PERIOD = 1597.0
_NOISE_LFO_BETA = 0.45

# Repeated encryption: strictly periodic rectangular bursts on all channels.
BURST_PERIOD_TICKS = 50
_BURST_WIDTH = 12
_BURST_AMP = 8.0

# High compute: episodes of heavy sustained load. Each episode rises
# smoothly, holds, and falls away, and a faint drift built from
# incommensurate slow waves with freshly drawn phases rides on it, so the
# added structure is aperiodic and never repeats, in contrast with either
# encryptor's strict periodicity. Episodes park on the quietest stretches
# of the noise-floor cycle, widely separated.
_HC_ELEVATION = 2.5
_HC_RAMP_TICKS = 300
_HC_HOLD_TICKS = 130
_HC_EPISODE_COUNT = 3
_HC_EPISODE_GAP_MIN = 900
_HC_DRIFT_AMP = 0.12
_HC_DRIFT_PERIODS = (233.0, 377.0, 610.0)

# Disk encryptor: a fixed triangular burst family, identical phase every
# run, so its stage-1 error pattern is a stable signature.
DISK_PERIOD_TICKS = 79
_DISK_WIDTH = 28
_DISK_AMP = 8.0

_PROFILE_CODE = {
    Regime.BASELINE: 0,
    Regime.REPEATED_ENCRYPTION: 1,
    Regime.HIGH_COMPUTE: 2,
    Regime.DISK_ENCRYPTION: 3,
}


def _component_phases(rng: np.random.Generator):
    """Per-trace phase draw: one phase per component per channel."""
    return [
        rng.uniform(0.0, 2.0 * math.pi, size=N_CHANNELS)
        for _ in _COMPONENT_PERIODS
    ]


def _noise_floor(rng: np.random.Generator, n: int) -> np.ndarray:
    """Machine-wide noise amplitude over time, shape (n,).

    One bounded slow cycle shared by all channels; a whole sweep fits in
    every trace, so the band is covered end to end regardless of seed.
    """
    phase = rng.uniform(0.0, 2.0 * math.pi)
    t = np.arange(n)
    return 1.0 + _NOISE_LFO_BETA * np.sin(
        2.0 * math.pi * t / _NOISE_LFO_PERIOD + phase
    )


def _structure_matrix(n: int, phases) -> np.ndarray:
    """The slow component bank alone, in noise-sigma units."""
    t = np.arange(n)[:, None]
    structure = np.zeros((n, N_CHANNELS))
    for (period, amp), phase in zip(
        zip(_COMPONENT_PERIODS, _COMPONENT_AMPS), phases
    ):
        structure += amp * np.sin(2.0 * math.pi * t / period + phase)
    return structure


def _episode_starts(n: int, floor: np.ndarray, span: int) -> list[int]:
    """Episode spans over the quietest stretches of the noise cycle.

    The floor is scanned with a span-length window; the lowest spans win,
    subject to a minimum start separation, so placement is a deterministic
    function of the drawn cycle phase.
    """
    if n < span:
        return []
    kernel = np.ones(span) / span
    span_floor = np.convolve(floor, kernel, mode="valid")
    order = np.argsort(span_floor)
    starts: list[int] = []
    for s in order:
        if len(starts) >= _HC_EPISODE_COUNT:
            break
        if all(abs(int(s) - prev) >= _HC_EPISODE_GAP_MIN for prev in starts):
            starts.append(int(s))
    return sorted(starts)


def _elevation_profile(rng: np.random.Generator, n: int, floor: np.ndarray) -> np.ndarray:
    """Per-channel elevation field for the high-compute regime.

    Shape (n, channels), in noise-sigma units. A trace too short for even
    one episode is elevated throughout instead.
    """
    span = 2 * _HC_RAMP_TICKS + _HC_HOLD_TICKS
    starts = _episode_starts(n, floor, span)
    gate = np.ones(n)
    if starts:
        gate = np.zeros(n)
        for s in starts:
            e = min(s + span, n)
            u = np.arange(e - s, dtype=np.float64)
            rise = np.minimum(u / _HC_RAMP_TICKS, 1.0)
            fall = np.minimum((span - 1 - u) / _HC_RAMP_TICKS, 1.0)
            shape = np.clip(np.minimum(rise, fall), 0.0, 1.0)
            # ease the corners so the load curve stays smooth
            shape = shape * shape * (3.0 - 2.0 * shape)
            gate[s:e] = np.maximum(gate[s:e], shape)
    t = np.arange(n)[:, None]
    drift = np.zeros((n, N_CHANNELS))
    for period in _HC_DRIFT_PERIODS:
        ph = rng.uniform(0.0, 2.0 * math.pi, size=N_CHANNELS)
        drift += np.sin(2.0 * math.pi * t / period + ph)
    return gate[:, None] * (_HC_ELEVATION + _HC_DRIFT_AMP * drift)


def _rect_burst(n: int, period: int, width: int, offset: int) -> np.ndarray:
    phase = (np.arange(n) - offset) % period
    return (phase < width).astype(np.float64)


def _triangular_burst(n: int, period: int, width: int) -> np.ndarray:
    # Fixed phase: the first ramp starts at tick 0.
    phase = np.arange(n) % period
    ramp = np.where(phase < width, phase / max(width - 1, 1), 0.0)
    return ramp


def generate_trace(
    profile: Regime,
    duration_ticks: int,
    seed: int,
    interval_ms: int = DEFAULT_INTERVAL_MS,
) -> Trace:
    """Synthesize a deterministic trace for one workload regime.

    The same (profile, duration_ticks, seed) always yields the identical
    trace. Disk-encryption traces report administrator privilege; all other
    regimes report user privilege.
    """
    if profile not in _PROFILE_CODE:
        raise UnknownProfile(profile)
    rng = np.random.default_rng([seed, _PROFILE_CODE[profile], duration_ticks])
    n = duration_ticks
    phases = _component_phases(rng)
    floor = _noise_floor(rng, n)
    structure = _structure_matrix(n, phases)
    noise = rng.normal(0.0, 1.0, size=(n, N_CHANNELS))
    matrix = _BASE_RATES + _NOISE_STD * (noise * floor[:, None] + structure)
    if profile is Regime.HIGH_COMPUTE:
        matrix += _NOISE_STD * _elevation_profile(rng, n, floor)

    if profile is Regime.REPEATED_ENCRYPTION:
        offset = int(rng.integers(0, BURST_PERIOD_TICKS))
        burst = _rect_burst(n, BURST_PERIOD_TICKS, _BURST_WIDTH, offset)
        matrix += _BURST_AMP * _NOISE_STD * burst[:, None]
    elif profile is Regime.DISK_ENCRYPTION:
        burst = _triangular_burst(n, DISK_PERIOD_TICKS, _DISK_WIDTH)
        matrix += _DISK_AMP * _NOISE_STD * burst[:, None]

    counts = np.maximum(np.rint(matrix), 0.0).astype(np.int64)
    privilege = (
        Privilege.ADMINISTRATOR
        if profile is Regime.DISK_ENCRYPTION
        else Privilege.USER
    )
    samples = [
        CounterSample(tick=i, elapsed_ms=(i + 1) * interval_ms, counts=tuple(row))
        for i, row in enumerate(counts.tolist())
    ]
    return Trace(
        samples=samples,
        interval_ms=interval_ms,
        privilege=privilege,
        regime=profile,
    )
