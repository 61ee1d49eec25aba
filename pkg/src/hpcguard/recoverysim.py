"""Backup-based recovery simulation.

Models the pinned-memory backup strategy: every file open records a locked
copy of the file's current content digest in a bounded ledger (oldest entry
evicted beyond capacity, re-opening refreshes an entry's age). Entries
expire after a quiet quantum, but never while an alarm is active. The
default quantum covers one full detection latency at the 10 ms cadence, so
anything a fast attacker touches before the verdict still has a live backup.

An attack encrypts files in open order at a fixed rate until the detector's
verdict lands; recovery then restores every encrypted file whose digest is
still in the ledger and reports the rest as lost.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

DEFAULT_INTERVAL_MS = 10
# One detection latency of headroom at the default cadence.
DEFAULT_DETECTION_LATENCY_MS = 5313.0203
DEFAULT_QUANTUM_TICKS = math.ceil(DEFAULT_DETECTION_LATENCY_MS / DEFAULT_INTERVAL_MS)


class SimError(Exception):
    pass


class BadRate(SimError, ValueError):
    pass


class FileState(enum.Enum):
    PLAIN = "Plain"
    ENCRYPTED = "Encrypted"
    RECOVERED = "Recovered"


def _plain_digest(file_id: str, size_bytes: int) -> str:
    return hashlib.sha256(f"plain:{file_id}:{size_bytes}".encode()).hexdigest()


def _encrypted_digest(file_id: str, old_digest: str) -> str:
    return hashlib.sha256(f"enc:{file_id}:{old_digest}".encode()).hexdigest()


@dataclass
class SimFile:
    file_id: str
    size_bytes: int
    digest: str
    state: FileState = FileState.PLAIN

    @classmethod
    def new(cls, file_id: str, size_bytes: int = 21) -> "SimFile":
        return cls(
            file_id=file_id,
            size_bytes=size_bytes,
            digest=_plain_digest(file_id, size_bytes),
        )

    def encrypt(self) -> None:
        """Attacker write: digest changes exactly on Plain -> Encrypted."""
        if self.state is not FileState.PLAIN:
            raise SimError(f"{self.file_id} is {self.state.value}, cannot encrypt")
        self.digest = _encrypted_digest(self.file_id, self.digest)
        self.state = FileState.ENCRYPTED


@dataclass
class BackupEntry:
    file_id: str
    digest: str
    created_tick: int
    seq: int  # insertion order, breaks created_tick ties
    locked: bool = True


@dataclass
class BackupLedger:
    """Bounded, age-evicting store of locked content digests."""

    capacity_n: int
    quantum_ticks: int = DEFAULT_QUANTUM_TICKS
    entries: dict[str, BackupEntry] = field(default_factory=dict)
    _seq: int = 0

    def __post_init__(self):
        if self.capacity_n < 1:
            raise SimError(f"capacity_n must be >= 1, got {self.capacity_n}")
        if self.quantum_ticks < 1:
            raise SimError(f"quantum_ticks must be >= 1, got {self.quantum_ticks}")

    def __len__(self) -> int:
        return len(self.entries)


def record_open(ledger: BackupLedger, sim_file: SimFile, tick: int) -> BackupLedger:
    """Back up a plain file's digest; refreshes age if already present."""
    if sim_file.state is not FileState.PLAIN:
        raise SimError(
            f"{sim_file.file_id} is {sim_file.state.value}; only plain files are backed up"
        )
    ledger._seq += 1
    ledger.entries[sim_file.file_id] = BackupEntry(
        file_id=sim_file.file_id,
        digest=sim_file.digest,
        created_tick=tick,
        seq=ledger._seq,
    )
    while len(ledger.entries) > ledger.capacity_n:
        oldest = min(ledger.entries.values(), key=lambda e: (e.created_tick, e.seq))
        del ledger.entries[oldest.file_id]
    return ledger


def purge_expired(ledger: BackupLedger, tick: int, alarm_active: bool) -> BackupLedger:
    """Drop entries older than the quiet quantum; a live alarm pins everything."""
    if alarm_active:
        return ledger
    expired = [
        fid
        for fid, entry in ledger.entries.items()
        if tick - entry.created_tick >= ledger.quantum_ticks
    ]
    for fid in expired:
        del ledger.entries[fid]
    return ledger


def simulate_attack(
    ledger: BackupLedger,
    files: list[SimFile],
    rate_files_per_s: float,
    latency_ms: float,
    interval_ms: int = DEFAULT_INTERVAL_MS,
) -> list[SimFile]:
    """Encrypt the first floor(rate * latency) files in open order.

    The attacker opens each file before rewriting it, so the open hook backs
    the file up on the way; purge runs at each open tick with no alarm yet
    active (the verdict has not landed until latency_ms elapses).
    """
    if rate_files_per_s <= 0 or latency_ms < 0:
        raise BadRate("rate must be positive and latency non-negative")
    count = min(int(math.floor(rate_files_per_s * latency_ms / 1000.0)), len(files))
    encrypted = []
    for i in range(count):
        tick = int(math.floor((i / rate_files_per_s) * 1000.0 / interval_ms))
        purge_expired(ledger, tick, alarm_active=False)
        record_open(ledger, files[i], tick)
        files[i].encrypt()
        encrypted.append(files[i])
    return encrypted


@dataclass
class RecoveryReport:
    recovered: list[str]
    lost: list[str]

    @property
    def total_encrypted(self) -> int:
        return len(self.recovered) + len(self.lost)


def recover(ledger: BackupLedger, files: list[SimFile]) -> RecoveryReport:
    """Restore every encrypted file with a ledger entry; report the rest lost."""
    recovered = []
    lost = []
    for sim_file in files:
        if sim_file.state is not FileState.ENCRYPTED:
            continue
        entry = ledger.entries.get(sim_file.file_id)
        if entry is None:
            lost.append(sim_file.file_id)
            continue
        sim_file.digest = entry.digest
        sim_file.state = FileState.RECOVERED
        recovered.append(sim_file.file_id)
    return RecoveryReport(recovered=recovered, lost=lost)


# ---------------------------------------------------------------------------
# scenario files: CSV rows of (tick, action, file_id)

_ACTIONS = ("open", "encrypt", "verdict")


def parse_scenario(text: str) -> list[tuple[int, str, str]]:
    """Parse scenario CSV: tick,action,file_id with open/encrypt/verdict actions."""
    rows = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise SimError(f"scenario line {line_no}: expected tick,action,file_id")
        try:
            tick = int(parts[0])
        except ValueError:
            raise SimError(f"scenario line {line_no}: bad tick {parts[0]!r}") from None
        action = parts[1]
        if action not in _ACTIONS:
            raise SimError(f"scenario line {line_no}: unknown action {action!r}")
        rows.append((tick, action, parts[2]))
    ticks = [r[0] for r in rows]
    if ticks != sorted(ticks):
        raise SimError("scenario ticks must be non-decreasing")
    return rows


@dataclass
class ScenarioResult:
    files: dict[str, SimFile]
    ledger: BackupLedger
    report: RecoveryReport
    alarm_tick: int | None


def run_scenario(
    rows: list[tuple[int, str, str]],
    capacity_n: int,
    quantum_ticks: int = DEFAULT_QUANTUM_TICKS,
    file_size_bytes: int = 21,
) -> ScenarioResult:
    """Replay a scenario and recover at the end.

    Files spring into existence on first mention. Expiry is evaluated at
    every row's tick; the verdict action raises the alarm, pinning backups.
    """
    ledger = BackupLedger(capacity_n=capacity_n, quantum_ticks=quantum_ticks)
    files: dict[str, SimFile] = {}
    alarm_tick: int | None = None
    for tick, action, file_id in rows:
        purge_expired(ledger, tick, alarm_active=alarm_tick is not None)
        if action == "verdict":
            alarm_tick = tick
            continue
        sim_file = files.get(file_id)
        if sim_file is None:
            sim_file = SimFile.new(file_id, file_size_bytes)
            files[file_id] = sim_file
        if action == "open":
            record_open(ledger, sim_file, tick)
        elif action == "encrypt":
            sim_file.encrypt()
    report = recover(ledger, list(files.values()))
    return ScenarioResult(files=files, ledger=ledger, report=report, alarm_tick=alarm_tick)
