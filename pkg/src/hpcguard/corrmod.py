"""Error-pattern correlation against a stored disk-encryptor template.

Legitimate full-disk encryption produces a stable, repeatable stage-1 error
pattern. The detector keeps a cumulative Pearson correlation between the
observed error series and that stored template: values pinned near one mean
"looks exactly like the known encryptor", values pinned near zero mean "is
sustained encryption-like work but matches no known encryptor".

Correlation is computed over growing equal-length prefixes, one value per
observation from the second pair onward, and the track stops growing once
the template is exhausted. Zero-variance prefixes define a correlation of
zero. Updates run on Welford-style moment accumulators so the incremental
track matches a textbook two-pass computation to high precision.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import seqae
from .telemetry import Privilege, Scaler, Trace, windowize


class CorrelationError(Exception):
    pass


class TraceTooShort(CorrelationError):
    pass


class BadPolicy(CorrelationError):
    pass


class TemplateFormatError(CorrelationError):
    pass


class Verdict(enum.Enum):
    UNDECIDED = "Undecided"
    RANSOMWARE = "Ransomware"
    DISK_ENCRYPTION = "DiskEncryption"


@dataclass
class CorrelationPolicy:
    """Decision rule over the most recent stretch of the track."""

    rho_high: float = 0.8
    rho_low: float = 0.3
    m_consecutive: int = 100

    def validate(self) -> None:
        if self.m_consecutive < 1:
            raise BadPolicy(f"m_consecutive must be >= 1, got {self.m_consecutive}")
        if self.rho_low > self.rho_high:
            raise BadPolicy(
                f"rho_low {self.rho_low} exceeds rho_high {self.rho_high}"
            )


@dataclass(eq=False)
class ErrorTemplate:
    """Stage-1 error series of a known-benign encryptor run."""

    label: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) < 2:
            raise TemplateFormatError("a template needs at least two values")
        if not np.all(np.isfinite(self.values)):
            raise TemplateFormatError("template values must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class CorrelationTrack:
    """Correlation values for prefix lengths 2, 3, ... in order."""

    rho: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rho)


@dataclass
class CumulativePearson:
    """Streaming prefix correlation of observations against a template."""

    template: np.ndarray
    count: int = 0
    mean_x: float = 0.0
    mean_y: float = 0.0
    c_xx: float = 0.0
    c_yy: float = 0.0
    c_xy: float = 0.0
    track: CorrelationTrack = field(default_factory=CorrelationTrack)

    @classmethod
    def for_template(cls, template: ErrorTemplate) -> "CumulativePearson":
        return cls(template=np.asarray(template.values, dtype=np.float64))

    def advanced(self, value: float) -> "CumulativePearson":
        """Pure update: returns a new accumulator including this observation."""
        if self.count >= len(self.template):
            return self  # template exhausted, the track is frozen
        x = float(self.template[self.count])
        y = float(value)
        n = self.count + 1
        dx = x - self.mean_x
        dy = y - self.mean_y
        mean_x = self.mean_x + dx / n
        mean_y = self.mean_y + dy / n
        c_xx = self.c_xx + dx * (x - mean_x)
        c_yy = self.c_yy + dy * (y - mean_y)
        c_xy = self.c_xy + dx * (y - mean_y)
        rho = list(self.track.rho)
        if n >= 2:
            denom = c_xx * c_yy
            rho.append(c_xy / math.sqrt(denom) if denom > 0.0 else 0.0)
        return CumulativePearson(
            template=self.template,
            count=n,
            mean_x=mean_x,
            mean_y=mean_y,
            c_xx=c_xx,
            c_yy=c_yy,
            c_xy=c_xy,
            track=CorrelationTrack(rho=rho),
        )


def cumulative_pearson(template, observed_values) -> CorrelationTrack:
    """Prefix correlation track of two series, one value per prefix length.

    Accepts an ErrorTemplate or a bare value sequence as the template side.
    """
    values = template.values if isinstance(template, ErrorTemplate) else template
    observed = [float(v) for v in observed_values]
    if len(observed) < 2:
        raise TraceTooShort("need at least two observations to correlate")
    acc = CumulativePearson(template=np.asarray(values, dtype=np.float64))
    for value in observed:
        acc = acc.advanced(value)
    return acc.track


def classify(track: CorrelationTrack, policy: CorrelationPolicy) -> Verdict:
    """Decide from the last m_consecutive track values.

    Disk encryption is checked first: every recent value at or above
    rho_high. Ransomware requires every recent value at or below rho_low.
    Anything else, including a track still shorter than m_consecutive, is
    undecided.
    """
    policy.validate()
    values = track.rho
    if len(values) < policy.m_consecutive:
        return Verdict.UNDECIDED
    recent = values[-policy.m_consecutive :]
    if all(v >= policy.rho_high for v in recent):
        return Verdict.DISK_ENCRYPTION
    if all(v <= policy.rho_low for v in recent):
        return Verdict.RANSOMWARE
    return Verdict.UNDECIDED


def privilege_check(trace: Trace) -> bool:
    """True when the traced workload runs with administrator privilege."""
    return trace.privilege is Privilege.ADMINISTRATOR


def build_template(
    model: seqae.SequenceAutoencoder,
    scaler: Scaler,
    trace: Trace,
    window_len: int = 100,
    stride: int = 1,
    label: str | None = None,
) -> ErrorTemplate:
    """Record the stage-1 error series of a benign encryptor trace."""
    windows = windowize(trace, scaler, window_len=window_len, stride=stride)
    if len(windows) < 2:
        raise TraceTooShort(
            f"template needs at least two windows, trace of {len(trace)} ticks "
            f"yields {len(windows)}"
        )
    errors = seqae.reconstruction_errors(model, windows)
    return ErrorTemplate(label=label or trace.regime.value, values=errors)


_TEMPLATE_HEADER_RE = re.compile(r"^# label=(.*)$")


def save_template(path, template: ErrorTemplate) -> None:
    """One float per line under a label header; round-trips bit-exactly."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# label={template.label}\n")
        for value in template.values:
            fh.write(repr(float(value)) + "\n")


def load_template(path) -> ErrorTemplate:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        match = _TEMPLATE_HEADER_RE.match(header)
        if not match:
            raise TemplateFormatError(f"bad template header {header!r}")
        values = []
        for line_no, line in enumerate(fh, start=2):
            try:
                values.append(float(line.strip()))
            except ValueError:
                raise TemplateFormatError(f"line {line_no}: not a float") from None
    return ErrorTemplate(label=match.group(1), values=np.array(values))
