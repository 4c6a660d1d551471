"""Skeleton sequence ingestion: NTU-style .skeleton text files, an internal
line-delimited JSON dataset format, a deterministic synthetic benchmark of
deliberately confusable classes, and preprocessing."""

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptySequenceError,
    ParseError,
    TruncatedFileError,
    VersionMismatchError,
)

DATASET_FORMAT_VERSION = 1

NTU_JOINT_FIELDS = 12  # x y z, 2 depth, 2 color, 4 orientation, tracking state


@dataclass
class SkeletonSequence:
    frames: np.ndarray  # (T, N, 3)
    label: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ParseError("frames must be (T, N, 3), got %s" % (self.frames.shape,))

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_joints(self):
        return self.frames.shape[1]


# -- NTU .skeleton text format ------------------------------------------


class _Lines:
    def __init__(self, text):
        self.lines = text.split("\n")
        self.pos = 0

    def next(self, expect):
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line, self.pos
        raise TruncatedFileError("unexpected end of file, expected %s" % expect, line=self.pos)


def _parse_int(line, lineno, expect, lo, hi):
    try:
        v = int(line.split()[0])
    except ValueError:
        raise ParseError("expected %s (integer), got %r" % (expect, line[:40]), line=lineno) from None
    if not (lo <= v <= hi):
        raise ParseError("%s %d outside [%d, %d]" % (expect, v, lo, hi), line=lineno)
    return v


def parse_ntu_skeleton(data, label=-1, source=""):
    """Parse one .skeleton text stream into per-body sequences.

    Layout: frame count; per frame a body count; per body a header line
    (body id + 9 tracking fields), a joint-count line, and one 12-field
    line per joint of which only x, y, z are retained.  Bodies present in
    fewer than half of the frames are dropped.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    rdr = _Lines(data)
    line, no = rdr.next("frame count")
    n_frames = _parse_int(line, no, "frame count", 0, 100000)
    bodies = {}  # body id -> list of (frame index, joints array)
    for f in range(n_frames):
        line, no = rdr.next("body count for frame %d" % f)
        n_bodies = _parse_int(line, no, "body count", 0, 100)
        for _ in range(n_bodies):
            line, no = rdr.next("body header")
            fields = line.split()
            if len(fields) != 10:
                raise ParseError(
                    "expected body header with 10 fields, got %d" % len(fields), line=no
                )
            body_id = fields[0]
            line, no = rdr.next("joint count")
            n_joints = _parse_int(line, no, "joint count", 1, 1000)
            joints = np.empty((n_joints, 3))
            for j in range(n_joints):
                line, no = rdr.next("joint record %d" % j)
                fields = line.split()
                if len(fields) != NTU_JOINT_FIELDS:
                    raise ParseError(
                        "expected joint record with %d fields, got %d"
                        % (NTU_JOINT_FIELDS, len(fields)),
                        line=no,
                    )
                try:
                    xyz = [float(v) for v in fields[:3]]
                    [float(v) for v in fields[3:]]  # validate the discarded tail
                except ValueError:
                    raise ParseError("non-numeric joint field", line=no) from None
                if not all(np.isfinite(xyz)):
                    raise ParseError("non-finite joint coordinate", line=no)
                joints[j] = xyz
            entry = bodies.setdefault(body_id, [])
            if entry and entry[-1][1].shape != joints.shape:
                raise ParseError("joint count changed for body %s" % body_id, line=no)
            entry.append((f, joints))

    sequences = []
    for body_id in sorted(bodies):
        entries = bodies[body_id]
        if n_frames > 0 and len(entries) * 2 < n_frames:
            continue
        frames = np.stack([joints for _, joints in entries])
        sequences.append(
            SkeletonSequence(
                frames=frames,
                label=label,
                meta={"source": source, "subject": "", "body": body_id},
            )
        )
    return sequences


def label_from_ntu_filename(name):
    """NTU filenames encode the 1-based action id as A###."""
    m = re.search(r"A(\d{3})", name)
    return int(m.group(1)) - 1 if m else -1


# -- synthetic ambiguous-action benchmark -------------------------------


@dataclass
class SynthConfig:
    n_classes: int
    samples_per_class: int
    n_frames: int
    skeleton: object  # SkeletonGraph
    noise_std: float = 0.05
    ambiguity: float = 0.0
    seed: int = 0


def limb_partition(g):
    """Chains hanging off the highest-degree joint, one list per limb."""
    nbr = g.neighbors()
    root = int(np.argmax([len(n) for n in nbr]))
    limbs = []
    for start in sorted(nbr[root]):
        seen = {root, start}
        limb = [start]
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in nbr[u]:
                    if v not in seen:
                        seen.add(v)
                        limb.append(v)
                        nxt.append(v)
            frontier = nxt
        limbs.append(sorted(limb))
    return root, limbs


def generate_synthetic(cfg):
    """Deterministic benchmark: classes share a base motion and differ only
    in which limb carries a distinguishing oscillation, whose amplitude
    shrinks as ambiguity grows."""
    rng = np.random.default_rng(cfg.seed)
    g = cfg.skeleton
    n = g.n_joints
    t_grid = np.linspace(0.0, 2.0 * np.pi, cfg.n_frames)
    root, limbs = limb_partition(g)

    base_pose = rng.normal(scale=0.5, size=(n, 3))
    base_pose[root] = 0.0

    class_limb = [limbs[k % len(limbs)] for k in range(cfg.n_classes)]
    class_dir = rng.normal(size=(cfg.n_classes, 3))
    class_dir /= np.linalg.norm(class_dir, axis=1, keepdims=True)
    class_freq = 2.0 + np.arange(cfg.n_classes)
    class_phase = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_classes)

    # base motion: one realization per subject index, shared by every class.
    # Each limb sways with nuisance frequency/phase/direction, so the only
    # class cue is which limb carries the structured wave below.
    bases = []
    for _ in range(cfg.samples_per_class):
        base = np.broadcast_to(base_pose[None], (cfg.n_frames, n, 3)).copy()
        for limb in limbs:
            freq = rng.uniform(1.0, 6.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            sway = rng.uniform(0.15, 0.35) * np.sin(freq * t_grid + phase)
            for j in limb:
                base[:, j, :] += sway[:, None] * direction
        bases.append(base)

    amp = 0.5 * (1.0 - cfg.ambiguity)
    sequences = []
    for k in range(cfg.n_classes):
        signal = np.zeros((cfg.n_frames, n, 3))
        wave = amp * np.sin(class_freq[k] * t_grid + class_phase[k])
        for j in class_limb[k]:
            signal[:, j, :] = wave[:, None] * class_dir[k]
        for s in range(cfg.samples_per_class):
            noise = rng.normal(scale=cfg.noise_std, size=signal.shape) if cfg.noise_std > 0 else 0.0
            sequences.append(
                SkeletonSequence(
                    frames=bases[s] + signal + noise,
                    label=k,
                    meta={"source": "synthetic", "subject": str(s), "body": "0"},
                )
            )
    return sequences


# -- preprocessing -------------------------------------------------------


def preprocess(seq, target_frames, center_joint=0):
    """Center on the reference joint's first-frame position, then resample
    to target_frames by linear interpolation (frame i maps to source
    position i * T / target, clamped)."""
    if seq.n_frames < 1:
        raise EmptySequenceError("sequence has no frames")
    frames = seq.frames - seq.frames[0, center_joint]
    t = seq.n_frames
    pos = np.minimum(np.arange(target_frames) * (t / target_frames), t - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, t - 1)
    w = (pos - lo)[:, None, None]
    resampled = frames[lo] * (1.0 - w) + frames[hi] * w
    return SkeletonSequence(frames=resampled, label=seq.label, meta=dict(seq.meta))


# -- internal dataset format --------------------------------------------


def write_dataset(sequences, path):
    with open(path, "w") as f:
        f.write(json.dumps({"format_version": DATASET_FORMAT_VERSION}) + "\n")
        for seq in sequences:
            rec = {
                "frames": seq.frames.tolist(),
                "label": int(seq.label),
                "meta": seq.meta,
            }
            f.write(json.dumps(rec) + "\n")


def read_dataset(path):
    sequences = []
    with open(path) as f:
        header_line = f.readline()
        if not header_line:
            raise TruncatedFileError("empty dataset file", line=1)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise ParseError("bad header: %s" % e, line=1) from None
        version = header.get("format_version")
        if version != DATASET_FORMAT_VERSION:
            raise VersionMismatchError(
                "dataset format_version %r, expected %d" % (version, DATASET_FORMAT_VERSION)
            )
        for no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = SkeletonSequence(
                    frames=np.asarray(rec["frames"], dtype=np.float64),
                    label=int(rec["label"]),
                    meta=dict(rec.get("meta", {})),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError("bad record: %s" % e, line=no) from None
            sequences.append(seq)
    return sequences
