"""Manifest handling, timestamp pairing, 1 Hz subsampling and per-environment stats."""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .thermalproc import FfcEvent, filter_ffc, validate_ffc_events

SCHEMA_VERSION = 1
NS_PER_S = 1_000_000_000
ENVIRONMENTS = ("indoor", "offroad", "aerial", "urban-drive", "urban-park")
POSITION_KINDS = ("geographic", "odometric", "none")
# positions farther than this outside the recorded span are not extrapolated
POSITION_SLACK_NS = 500_000_000
PAIR_TOL_SYNCED_NS = 10_000_000
PAIR_TOL_UNSYNCED_NS = 50_000_000


@dataclass(frozen=True)
class FramePair:
    rgb_index: int
    thermal_index: int
    dt_ns: int


@dataclass
class SequenceRecord:
    name: str
    environment: str
    rgb: list = field(default_factory=list)  # [(path, t_ns)]
    thermal: list = field(default_factory=list)
    depth: list = field(default_factory=list)  # optional, index-aligned with rgb
    ffc: list = field(default_factory=list)  # [FfcEvent]
    positions: list = field(default_factory=list)  # [(t_ns, x, y, z)]
    position_kind: str = "none"
    synced: bool = True

    @property
    def rgb_ts(self):
        return [t for _, t in self.rgb]

    @property
    def thermal_ts(self):
        return [t for _, t in self.thermal]

    def validate(self):
        if self.environment not in ENVIRONMENTS:
            raise ValidationError(f"{self.name}: unknown environment {self.environment!r}")
        if self.position_kind not in POSITION_KINDS:
            raise ValidationError(f"{self.name}: unknown position kind {self.position_kind!r}")
        for label, stream in (("rgb", self.rgb), ("thermal", self.thermal), ("depth", self.depth)):
            _check_increasing([t for _, t in stream], f"{self.name}/{label}")
        if self.depth and len(self.depth) != len(self.rgb):
            raise ValidationError(f"{self.name}: depth stream must be index-aligned with rgb")
        _check_increasing([p[0] for p in self.positions], f"{self.name}/positions", strict=False)
        validate_ffc_events(self.ffc)


@dataclass
class DatasetManifest:
    name: str
    sequences: list
    root: Path = Path(".")

    def validate(self, check_files: bool = False):
        names = [s.name for s in self.sequences]
        if len(set(names)) != len(names):
            raise ValidationError("sequence names must be unique")
        for seq in self.sequences:
            seq.validate()
            if check_files:
                for path, _ in seq.rgb + seq.thermal + seq.depth:
                    if not (self.root / path).is_file():
                        raise ValidationError(f"{seq.name}: missing file {path}")
        return self

    def sequence(self, name: str) -> SequenceRecord:
        for s in self.sequences:
            if s.name == name:
                return s
        raise ValidationError(f"no sequence named {name!r}")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "sequences": [{
                "name": s.name,
                "environment": s.environment,
                "synced": s.synced,
                "rgb": [{"path": p, "t_ns": t} for p, t in s.rgb],
                "thermal": [{"path": p, "t_ns": t} for p, t in s.thermal],
                "depth": [{"path": p, "t_ns": t} for p, t in s.depth],
                "ffc": [{"start_ns": e.start_ns, "end_ns": e.end_ns} for e in s.ffc],
                "position_kind": s.position_kind,
                "positions": [{"t_ns": t, "x": x, "y": y, "z": z} for t, x, y, z in s.positions],
            } for s in self.sequences],
        }


def _check_increasing(ts, label, strict=True):
    for a, b in zip(ts, ts[1:]):
        if b < a or (strict and b == a):
            raise ValidationError(f"{label}: timestamps not {'strictly ' if strict else ''}increasing")


def _frames(entries):
    return [(e["path"], int(e["t_ns"])) for e in entries]


def manifest_from_dict(d: dict, root=".") -> DatasetManifest:
    if d.get("schema") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported manifest schema {d.get('schema')!r}")
    try:
        seqs = [SequenceRecord(
            name=s["name"],
            environment=s["environment"],
            rgb=_frames(s.get("rgb", [])),
            thermal=_frames(s.get("thermal", [])),
            depth=_frames(s.get("depth", [])),
            ffc=[FfcEvent(int(e["start_ns"]), int(e["end_ns"])) for e in s.get("ffc", [])],
            positions=[(int(p["t_ns"]), float(p["x"]), float(p["y"]), float(p["z"]))
                       for p in s.get("positions", [])],
            position_kind=s.get("position_kind", "none"),
            synced=bool(s.get("synced", True)),
        ) for s in d.get("sequences", [])]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed manifest entry: {e}") from None
    return DatasetManifest(d.get("name", ""), seqs, Path(root))


def load_manifest(path, check_files: bool = False) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    return manifest_from_dict(d, path.parent).validate(check_files)


def save_manifest(manifest: DatasetManifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def pair_by_timestamp(rgb_ts: Sequence[int], thr_ts: Sequence[int], tol_ns: int) -> list:
    """Greedy nearest-timestamp matching, each frame used at most once.

    Candidate pairs are accepted in order of increasing |dt| (ties by the sum of
    the two timestamps), which makes the result symmetric in its arguments.
    """
    _check_increasing(list(rgb_ts), "rgb")
    _check_increasing(list(thr_ts), "thermal")
    if tol_ns < 0:
        raise ValidationError("pairing tolerance must be non-negative")
    cands = []
    for i, t in enumerate(rgb_ts):
        lo = bisect_left(thr_ts, t - tol_ns)
        hi = bisect_right(thr_ts, t + tol_ns)
        for j in range(lo, hi):
            cands.append((abs(t - thr_ts[j]), t + thr_ts[j], i, j))
    cands.sort()
    used_r, used_t = set(), set()
    pairs = []
    for dt, _, i, j in cands:
        if i in used_r or j in used_t:
            continue
        used_r.add(i)
        used_t.add(j)
        pairs.append(FramePair(i, j, dt))
    pairs.sort(key=lambda p: p.rgb_index)
    return pairs


def subsample_1hz(frames: Sequence, period_ns: int = NS_PER_S) -> list:
    """Keep the frame nearest each grid point t0 + k * period (ties go to the earlier frame).

    ``frames`` holds ``(path, t_ns)`` tuples or bare timestamps.
    """
    if not frames:
        return []
    ts = [f[1] if isinstance(f, (tuple, list)) else f for f in frames]
    _check_increasing(ts, "frames")
    t0 = ts[0]
    chosen = []
    for k in range((ts[-1] - t0) // period_ns + 1):
        g = t0 + k * period_ns
        j = bisect_left(ts, g)
        if j == len(ts) or (j > 0 and g - ts[j - 1] <= ts[j] - g):
            j -= 1
        if not chosen or chosen[-1] != j:
            chosen.append(j)
    return [frames[j] for j in chosen]


def default_tol_ns(seq: SequenceRecord) -> int:
    """Pairing tolerance: tight for hardware-triggered rigs, looser for free-running ones."""
    return PAIR_TOL_SYNCED_NS if seq.synced else PAIR_TOL_UNSYNCED_NS


def sequence_pairs(seq: SequenceRecord, tol_ns: Optional[int] = None,
                   guard_ns: int = 100_000_000) -> list:
    """1 Hz, FFC-free RGB-T pairs of one sequence.

    The thermal stream is subsampled and cleaned first, then matched against
    the full RGB stream.
    """
    if tol_ns is None:
        tol_ns = default_tol_ns(seq)
    thr = subsample_1hz(seq.thermal_ts)
    kept = set(filter_ffc(thr, seq.ffc, guard_ns))
    idx = [i for i, t in enumerate(seq.thermal_ts) if t in kept]
    sub_pairs = pair_by_timestamp(seq.rgb_ts, [seq.thermal_ts[i] for i in idx], tol_ns)
    return [FramePair(p.rgb_index, idx[p.thermal_index], p.dt_ns) for p in sub_pairs]


def dataset_stats(manifest: DatasetManifest, tol_ns: Optional[int] = None,
                  guard_ns: int = 100_000_000) -> dict:
    counts = {env: 0 for env in ENVIRONMENTS}
    per_seq = {}
    for seq in manifest.sequences:
        n = len(sequence_pairs(seq, tol_ns, guard_ns))
        per_seq[seq.name] = n
        counts[seq.environment] += n
    total = sum(counts.values())
    return {
        "per_environment": counts,
        "per_sequence": per_seq,
        "total": total,
        "fractions": {k: (v / total if total else 0.0) for k, v in counts.items()},
    }


def format_stats_table(stats: dict) -> str:
    rows = [("environment", "pairs", "fraction")]
    for env in ENVIRONMENTS:
        rows.append((env, str(stats["per_environment"][env]), f"{stats['fractions'][env]:.4f}"))
    rows.append(("total", str(stats["total"]), "1.0000" if stats["total"] else "0.0000"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join(f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows) + "\n"


def position_at(seq: SequenceRecord, t_ns: int) -> Optional[np.ndarray]:
    """Piecewise-linear position at ``t_ns``; None when unknown."""
    if not seq.positions:
        return None
    ts = [p[0] for p in seq.positions]
    if t_ns < ts[0] - POSITION_SLACK_NS or t_ns > ts[-1] + POSITION_SLACK_NS:
        return None
    xyz = np.array([p[1:] for p in seq.positions], dtype=np.float64)
    if t_ns <= ts[0]:
        return xyz[0].copy()
    if t_ns >= ts[-1]:
        return xyz[-1].copy()
    j = bisect_right(ts, t_ns)
    t0, t1 = ts[j - 1], ts[j]
    if t0 == t_ns:
        return xyz[j - 1].copy()
    a = (t_ns - t0) / (t1 - t0)
    return (1 - a) * xyz[j - 1] + a * xyz[j]
