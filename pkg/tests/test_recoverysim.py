"""Backup ledger and attack recovery simulation."""

import itertools
import math

import pytest

from hpcguard.recoverysim import (
    DEFAULT_QUANTUM_TICKS,
    BackupLedger,
    BadRate,
    FileState,
    SimError,
    SimFile,
    parse_scenario,
    purge_expired,
    record_open,
    recover,
    run_scenario,
    simulate_attack,
)


def make_files(n):
    return [SimFile.new(f"f{i}") for i in range(n)]


# independent ledger model used as a replay oracle: dict of file_id -> tick,
# evicting the smallest (tick, insertion) pair beyond capacity
def survivors(ops, capacity):
    entries = {}
    order = []
    for tick, fid in ops:
        if fid in order:
            order.remove(fid)
        entries[fid] = tick
        order.append(fid)
        if len(entries) > capacity:
            oldest = min(order, key=lambda f: (entries[f], order.index(f)))
            del entries[oldest]
            order.remove(oldest)
    return set(entries)


# ---------------------------------------------------------------------------
# record_open


def test_open_four_files_locks_four_entries():
    ledger = BackupLedger(capacity_n=4)
    for tick, f in enumerate(make_files(4)):
        record_open(ledger, f, tick)
    assert len(ledger) == 4
    assert all(entry.locked for entry in ledger.entries.values())


def test_capacity_two_evicts_the_oldest():
    ledger = BackupLedger(capacity_n=2)
    for tick, f in enumerate(make_files(3)):
        record_open(ledger, f, tick)
    assert set(ledger.entries) == {"f1", "f2"}


def test_same_tick_eviction_follows_insertion_order():
    ledger = BackupLedger(capacity_n=2)
    for f in make_files(3):
        record_open(ledger, f, 0)
    assert set(ledger.entries) == {"f1", "f2"}


def test_reopen_refreshes_entry_age():
    # reopened file must outlive one opened later but never refreshed
    ops = [(0, "a"), (1, "b"), (2, "a"), (3, "c")]
    files = {fid: SimFile.new(fid) for fid in "abc"}
    ledger = BackupLedger(capacity_n=2)
    for tick, fid in ops:
        record_open(ledger, files[fid], tick)

    assert set(ledger.entries) == survivors(ops, 2) == {"a", "c"}
    assert ledger.entries["a"].created_tick == 2


def test_replay_oracle_over_scripted_sequences():
    scripts = [
        [(0, "a"), (0, "b"), (0, "c"), (1, "a"), (2, "d")],
        [(5, "x"), (5, "x"), (6, "y"), (7, "z"), (8, "x")],
        [(i, f"f{i % 4}") for i in range(12)],
    ]
    for capacity in (1, 2, 3):
        for ops in scripts:
            ledger = BackupLedger(capacity_n=capacity)
            files = {fid: SimFile.new(fid) for _, fid in ops}
            for tick, fid in ops:
                record_open(ledger, files[fid], tick)
                assert len(ledger) <= capacity
            assert set(ledger.entries) == survivors(ops, capacity)


def test_open_rejects_non_plain_files():
    ledger = BackupLedger(capacity_n=2)
    f = SimFile.new("f0")
    f.encrypt()
    with pytest.raises(SimError):
        record_open(ledger, f, 0)


def test_ledger_validates_its_bounds():
    with pytest.raises(SimError):
        BackupLedger(capacity_n=0)
    with pytest.raises(SimError):
        BackupLedger(capacity_n=4, quantum_ticks=0)


# ---------------------------------------------------------------------------
# purge_expired


def test_purge_empties_a_stale_ledger():
    ledger = BackupLedger(capacity_n=4, quantum_ticks=10)
    for f in make_files(3):
        record_open(ledger, f, 0)
    purge_expired(ledger, 10, alarm_active=False)
    assert len(ledger) == 0


def test_alarm_pins_every_entry():
    ledger = BackupLedger(capacity_n=4, quantum_ticks=10)
    for f in make_files(3):
        record_open(ledger, f, 0)
    purge_expired(ledger, 1000, alarm_active=True)
    assert len(ledger) == 3


def test_purge_removes_exactly_the_stale_subset():
    quantum = 20
    ages = {"f0": 0, "f1": 5, "f2": 19, "f3": 30, "f4": 49}
    ledger = BackupLedger(capacity_n=10, quantum_ticks=quantum)
    for fid, tick in ages.items():
        record_open(ledger, SimFile.new(fid), tick)

    now = 49
    stale = {fid for fid, tick in ages.items() if now - tick >= quantum}
    purge_expired(ledger, now, alarm_active=False)
    assert set(ledger.entries) == set(ages) - stale
    assert stale == {"f0", "f1", "f2"}


# ---------------------------------------------------------------------------
# simulate_attack


def test_zero_latency_encrypts_nothing():
    ledger = BackupLedger(capacity_n=4)
    files = make_files(10)
    assert simulate_attack(ledger, files, 100.0, 0.0) == []
    assert all(f.state is FileState.PLAIN for f in files)


def test_floor_arithmetic_on_the_rate():
    ledger = BackupLedger(capacity_n=16)
    files = make_files(10)
    encrypted = simulate_attack(ledger, files, 2.0, 2500.0)
    assert len(encrypted) == 5
    assert [f.file_id for f in encrypted] == [f"f{i}" for i in range(5)]


def test_bad_rate_is_rejected():
    ledger = BackupLedger(capacity_n=4)
    for rate, latency in ((0.0, 100.0), (-1.0, 100.0), (2.0, -1.0)):
        with pytest.raises(BadRate):
            simulate_attack(ledger, make_files(3), rate, latency)


def test_attack_cannot_encrypt_more_than_the_corpus():
    ledger = BackupLedger(capacity_n=4)
    files = make_files(3)
    encrypted = simulate_attack(ledger, files, 1000.0, 60_000.0)
    assert len(encrypted) == 3


def test_default_quantum_covers_one_detection_latency():
    assert DEFAULT_QUANTUM_TICKS == math.ceil(5313.0203 / 10) == 532


def test_measured_latency_scenario_encrypts_68_and_loses_none():
    # rate back-derived so that floor(rate * latency / 1000) lands on 68
    rate = 68 / 5313.0203 * 1000.0
    ledger = BackupLedger(capacity_n=128)
    files = [SimFile.new(f"file-{i:05d}", size_bytes=21) for i in range(10_000)]
    encrypted = simulate_attack(ledger, files, rate, 5313.0203)
    assert len(encrypted) == 68

    report = recover(ledger, files)
    assert len(report.recovered) == 68
    assert report.lost == []
    assert report.total_encrypted == 68
    assert all(f.state is FileState.RECOVERED for f in files[:68])
    assert all(f.state is FileState.PLAIN for f in files[68:])


def test_slow_attack_outruns_a_short_quantum():
    # replay oracle: purge fires at each open tick before the backup lands
    rate, latency, quantum = 1.0, 5000.0, 150
    ledger = BackupLedger(capacity_n=16, quantum_ticks=quantum)
    files = make_files(8)
    encrypted = simulate_attack(ledger, files, rate, latency)
    assert len(encrypted) == 5

    entries = {}
    for i in range(5):
        tick = int(math.floor((i / rate) * 100.0))
        entries = {f: t for f, t in entries.items() if tick - t < quantum}
        entries[f"f{i}"] = tick
    report = recover(ledger, files)
    assert set(report.recovered) == set(entries)
    assert set(report.lost) == {f.file_id for f in encrypted} - set(entries)
    assert report.lost != []


# ---------------------------------------------------------------------------
# recover


def test_backed_up_corpus_recovers_every_encrypted_file():
    # four files backed up, three encrypted, all three come back
    ledger = BackupLedger(capacity_n=4)
    files = make_files(4)
    originals = {f.file_id: f.digest for f in files}
    for tick, f in enumerate(files):
        record_open(ledger, f, tick)
    for f in files[:3]:
        f.encrypt()
        assert f.digest != originals[f.file_id]

    report = recover(ledger, files)
    assert sorted(report.recovered) == ["f0", "f1", "f2"]
    assert report.lost == []
    for f in files[:3]:
        assert f.state is FileState.RECOVERED
        assert f.digest == originals[f.file_id]
    assert files[3].state is FileState.PLAIN


def test_never_opened_file_is_lost():
    ledger = BackupLedger(capacity_n=4)
    files = make_files(2)
    record_open(ledger, files[0], 0)
    for f in files:
        f.encrypt()
    report = recover(ledger, files)
    assert report.recovered == ["f0"]
    assert report.lost == ["f1"]


def test_encrypt_twice_is_rejected():
    f = SimFile.new("f0")
    f.encrypt()
    with pytest.raises(SimError):
        f.encrypt()


# every interleaving of n opens and n encrypts with each open before its
# encrypt, FIFO file assignment; shapes are Dyck prefixes so this is
# exhaustive over open/encrypt orderings
def dyck_interleavings(n):
    def extend(seq, opens, encs):
        if opens == n and encs == n:
            yield seq
            return
        if opens < n:
            yield from extend(seq + [("open", opens)], opens + 1, encs)
        if encs < opens:
            yield from extend(seq + [("encrypt", encs)], opens, encs + 1)

    yield from extend([], 0, 0)


def run_interleaving(seq, n, capacity):
    ledger = BackupLedger(capacity_n=capacity, quantum_ticks=10_000)
    files = make_files(n)
    for tick, (action, i) in enumerate(seq):
        if action == "open":
            record_open(ledger, files[i], tick)
        else:
            files[i].encrypt()
        assert len(ledger) <= capacity
    encrypted = {f.file_id for f in files if f.state is FileState.ENCRYPTED}
    return recover(ledger, files), encrypted


def test_zero_loss_when_capacity_covers_the_attack():
    # exhaustive over interleaving shapes for up to six files
    for n in range(1, 7):
        for seq in dyck_interleavings(n):
            report, encrypted = run_interleaving(seq, n, capacity=n)
            assert report.lost == []
            assert set(report.recovered) == encrypted


def test_recovery_partitions_the_encrypted_set():
    # labeled-file exhaustive enumeration at n=3, tight capacity
    n = 3
    events = [("open", i) for i in range(n)] + [("encrypt", i) for i in range(n)]
    for perm in itertools.permutations(range(len(events))):
        seq = [events[i] for i in perm]
        positions = {e: i for i, e in enumerate(seq)}
        if any(positions[("open", i)] > positions[("encrypt", i)] for i in range(n)):
            continue
        for capacity in (1, 2, 3):
            report, encrypted = run_interleaving(seq, n, capacity)
            got_recovered = set(report.recovered)
            got_lost = set(report.lost)
            assert got_recovered | got_lost == encrypted
            assert got_recovered & got_lost == set()


# ---------------------------------------------------------------------------
# scenario files


FIG_SCENARIO = """\
# four opens, three encrypts, then the verdict
0,open,alpha
1,open,beta
2,open,gamma
3,open,delta
4,encrypt,alpha
5,encrypt,beta
6,encrypt,gamma
7,verdict,-
"""


def test_scenario_round_trip_recovers_three():
    rows = parse_scenario(FIG_SCENARIO)
    assert rows[0] == (0, "open", "alpha")
    result = run_scenario(rows, capacity_n=4)
    assert result.alarm_tick == 7
    assert sorted(result.report.recovered) == ["alpha", "beta", "gamma"]
    assert result.report.lost == []
    assert result.files["delta"].state is FileState.PLAIN


def test_verdict_pins_stale_backups():
    text = "0,open,a\n1,encrypt,a\n2,verdict,-\n900,open,b\n901,encrypt,b\n"
    result = run_scenario(parse_scenario(text), capacity_n=4, quantum_ticks=100)
    # entry for a is 900 ticks old at the second open, but the alarm holds it
    assert sorted(result.report.recovered) == ["a", "b"]
    assert result.report.lost == []


def test_quiet_expiry_loses_the_stale_file():
    text = "0,open,a\n1,encrypt,a\n900,open,b\n901,encrypt,b\n902,verdict,-\n"
    result = run_scenario(parse_scenario(text), capacity_n=4, quantum_ticks=100)
    assert result.report.recovered == ["b"]
    assert result.report.lost == ["a"]


def test_scenario_parser_rejects_malformed_rows():
    for text in (
        "0,open\n",
        "x,open,a\n",
        "0,shred,a\n",
        "5,open,a\n1,open,b\n",
    ):
        with pytest.raises(SimError):
            parse_scenario(text)


def test_scenario_parser_skips_blanks_and_comments():
    rows = parse_scenario("\n# note\n0,open,a\n\n1,encrypt,a\n")
    assert rows == [(0, "open", "a"), (1, "encrypt", "a")]
