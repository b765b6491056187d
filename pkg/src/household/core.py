"""Domain types and TSV persistence for embeddings and household protocols.

Embedding file::

    #dim=<d>
    <utt_id> <speaker_id or ?> <v_1> ... <v_d>

Protocol directory::

    households.tsv   household_id  role(member|guest)  speaker_id
    enroll.tsv       household_id  model_id  utt_id
    adapt.tsv        household_id  utt_id            (stream order)
    trials.tsv       household_id  model_id  test_utt_id  label
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

UNLABELED = "?"

TARGET = "target"
KNOWN_NONTARGET = "known_nontarget"
UNKNOWN_NONTARGET = "unknown_nontarget"
TRIAL_LABELS = (TARGET, KNOWN_NONTARGET, UNKNOWN_NONTARGET)

EMBEDDINGS_FILE = "embeddings.tsv"
HOUSEHOLDS_FILE = "households.tsv"
ENROLL_FILE = "enroll.tsv"
ADAPT_FILE = "adapt.tsv"
TRIALS_FILE = "trials.tsv"


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


class ProtocolError(ValueError):
    """Protocol violates referential integrity or labeling rules."""


@dataclass(frozen=True, eq=False)
class Embedding:
    utt_id: str
    speaker_id: str | None
    vector: np.ndarray

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"{self.utt_id}: embedding must be a 1-D vector")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.utt_id}: embedding has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return (
            self.utt_id == other.utt_id
            and self.speaker_id == other.speaker_id
            and np.array_equal(self.vector, other.vector)
        )

    def __hash__(self):
        return hash((self.utt_id, self.speaker_id))


@dataclass(frozen=True, eq=False)
class SpeakerModel:
    """One enrolled speaker: a centroid plus its zero-order statistic.

    ``raw_set`` keeps the member vectors (rows) for set-based scoring such as
    cosine score averaging; ``member_ids`` names them when known.
    """

    model_id: str
    centroid: np.ndarray
    effective_count: float
    raw_set: np.ndarray | None = None
    member_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        c = np.array(self.centroid, dtype=np.float64)
        c.setflags(write=False)
        object.__setattr__(self, "centroid", c)
        if not self.effective_count > 0:
            raise ValueError(f"{self.model_id}: effective_count must be positive")
        if self.raw_set is not None:
            r = np.array(self.raw_set, dtype=np.float64).reshape(-1, c.shape[0])
            r.setflags(write=False)
            object.__setattr__(self, "raw_set", r)

    @property
    def dim(self) -> int:
        return self.centroid.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SpeakerModel):
            return NotImplemented
        same_raw = (self.raw_set is None and other.raw_set is None) or (
            self.raw_set is not None
            and other.raw_set is not None
            and np.array_equal(self.raw_set, other.raw_set)
        )
        return (
            self.model_id == other.model_id
            and np.array_equal(self.centroid, other.centroid)
            and self.effective_count == other.effective_count
            and same_raw
            and self.member_ids == other.member_ids
        )

    __hash__ = None


@dataclass(frozen=True)
class Household:
    household_id: str
    member_ids: tuple[str, ...]
    guest_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "member_ids", tuple(self.member_ids))
        object.__setattr__(self, "guest_ids", tuple(self.guest_ids))
        if len(self.member_ids) < 2:
            raise ProtocolError(f"household {self.household_id} needs at least 2 members")
        if set(self.member_ids) & set(self.guest_ids):
            raise ProtocolError(f"household {self.household_id}: members and guests overlap")

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class Trial:
    model_id: str
    test_utt_id: str
    label: str

    def __post_init__(self):
        if self.label not in TRIAL_LABELS:
            raise ProtocolError(f"unknown trial label {self.label!r}")


@dataclass(frozen=True)
class TrialScore:
    household_id: str
    model_id: str
    test_utt_id: str
    label: str
    score: float

    def __post_init__(self):
        if self.label not in TRIAL_LABELS:
            raise ProtocolError(f"unknown trial label {self.label!r}")
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite score for trial {self.model_id}/{self.test_utt_id}")


@dataclass(frozen=True)
class HouseholdProtocol:
    household: Household
    enroll: Mapping[str, tuple[str, ...]]
    adaptation_stream: tuple[str, ...] = ()
    trials: tuple[Trial, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "enroll", {k: tuple(v) for k, v in self.enroll.items()}
        )
        object.__setattr__(self, "adaptation_stream", tuple(self.adaptation_stream))
        object.__setattr__(self, "trials", tuple(self.trials))
        for m in self.household.member_ids:
            if not self.enroll.get(m):
                raise ProtocolError(
                    f"household {self.household_id}: member {m} has no enrollment utterances"
                )
        extra = set(self.enroll) - set(self.household.member_ids)
        if extra:
            raise ProtocolError(
                f"household {self.household_id}: enroll models {sorted(extra)} are not members"
            )
        for t in self.trials:
            if t.model_id not in self.enroll:
                raise ProtocolError(
                    f"household {self.household_id}: trial model {t.model_id} not enrolled"
                )

    @property
    def household_id(self) -> str:
        return self.household.household_id

    def utt_ids(self) -> set[str]:
        ids = set(self.adaptation_stream)
        for utts in self.enroll.values():
            ids.update(utts)
        ids.update(t.test_utt_id for t in self.trials)
        return ids

    def test_utt_ids(self) -> list[str]:
        """Distinct test utterances in first-appearance order."""
        return list(dict.fromkeys(t.test_utt_id for t in self.trials))


def trial_label(model_speaker: str, test_speaker: str, household: Household) -> str:
    if test_speaker == model_speaker:
        return TARGET
    if test_speaker in household.member_ids:
        return KNOWN_NONTARGET
    if test_speaker in household.guest_ids:
        return UNKNOWN_NONTARGET
    raise ProtocolError(
        f"speaker {test_speaker} is neither member nor guest of {household.household_id}"
    )


def as_matrix(embeddings: Sequence[Embedding]) -> np.ndarray:
    return np.stack([e.vector for e in embeddings]) if embeddings else np.zeros((0, 0))


def index_embeddings(embeddings: Iterable[Embedding]) -> dict[str, Embedding]:
    index: dict[str, Embedding] = {}
    for e in embeddings:
        if e.utt_id in index:
            raise FormatError(f"duplicate utterance id {e.utt_id}")
        index[e.utt_id] = e
    return index


# ---------------------------------------------------------------------------
# Embedding TSV


def _parse_dim(line: str, path) -> int:
    key, sep, value = line.lstrip("#").strip().partition("=")
    if not sep or key.strip() not in ("dim", "d"):
        raise FormatError(f"{path}:1: expected header '#dim=<d>', got {line.strip()!r}")
    try:
        d = int(value)
    except ValueError:
        raise FormatError(f"{path}:1: bad dimension {value!r}") from None
    if d < 1:
        raise FormatError(f"{path}:1: dimension must be positive")
    return d


def read_embeddings(path: str | os.PathLike) -> list[Embedding]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    d = _parse_dim(lines[0], path)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != d + 2:
            raise FormatError(
                f"{path}:{lineno}: dimension mismatch, expected {d} values, got {len(fields) - 2}"
            )
        try:
            vec = np.array([float(v) for v in fields[2:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: parse error: {exc}") from None
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        spk = None if fields[1] == UNLABELED else fields[1]
        out.append(Embedding(fields[0], spk, vec))
    return out


def write_embeddings(embeddings: Sequence[Embedding], path: str | os.PathLike) -> None:
    if not embeddings:
        raise ValueError("cannot write an empty embedding list")
    d = embeddings[0].dim
    for e in embeddings:
        if e.dim != d:
            raise ValueError(f"{e.utt_id}: dimension {e.dim} differs from {d}")
    rows = [f"#dim={d}"]
    for e in embeddings:
        spk = UNLABELED if e.speaker_id is None else e.speaker_id
        # repr() of a Python float is the shortest string that round-trips exactly
        rows.append("\t".join([e.utt_id, spk, *(repr(float(v)) for v in e.vector)]))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(rows) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Protocol directory


def _rows(path: Path, ncols: int) -> list[list[str]]:
    if not path.exists():
        raise FormatError(f"missing protocol file {path}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != ncols:
                raise FormatError(f"{path}:{lineno}: expected {ncols} columns, got {len(fields)}")
            rows.append(fields)
    return rows


def write_protocol(protocols: Sequence[HouseholdProtocol], directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hh, enroll, adapt, trials = [], [], [], []
    for p in protocols:
        hid = p.household_id
        hh += [f"{hid}\tmember\t{s}" for s in p.household.member_ids]
        hh += [f"{hid}\tguest\t{s}" for s in p.household.guest_ids]
        for model_id, utts in p.enroll.items():
            enroll += [f"{hid}\t{model_id}\t{u}" for u in utts]
        adapt += [f"{hid}\t{u}" for u in p.adaptation_stream]
        trials += [f"{hid}\t{t.model_id}\t{t.test_utt_id}\t{t.label}" for t in p.trials]
    for name, rows in (
        (HOUSEHOLDS_FILE, hh),
        (ENROLL_FILE, enroll),
        (ADAPT_FILE, adapt),
        (TRIALS_FILE, trials),
    ):
        with open(directory / name, "w", encoding="utf-8", newline="\n") as f:
            f.write("".join(r + "\n" for r in rows))


def read_protocol(
    directory: str | os.PathLike, embeddings: Sequence[Embedding] | None = None
) -> list[HouseholdProtocol]:
    """Read all households of a protocol directory.

    If ``embeddings`` is not given and the directory holds an embeddings file,
    that file is used to check referential integrity and trial labels.
    """
    directory = Path(directory)
    members: dict[str, list[str]] = {}
    guests: dict[str, list[str]] = {}
    for hid, role, spk in _rows(directory / HOUSEHOLDS_FILE, 3):
        if role == "member":
            members.setdefault(hid, []).append(spk)
            guests.setdefault(hid, [])
        elif role == "guest":
            guests.setdefault(hid, []).append(spk)
            members.setdefault(hid, [])
        else:
            raise FormatError(f"{directory / HOUSEHOLDS_FILE}: unknown role {role!r}")

    enroll: dict[str, dict[str, list[str]]] = {h: {} for h in members}
    for hid, model_id, utt in _rows(directory / ENROLL_FILE, 3):
        if hid not in members:
            raise ProtocolError(f"enroll.tsv: unknown household {hid}")
        enroll[hid].setdefault(model_id, []).append(utt)

    adapt: dict[str, list[str]] = {h: [] for h in members}
    for hid, utt in _rows(directory / ADAPT_FILE, 2):
        if hid not in members:
            raise ProtocolError(f"adapt.tsv: unknown household {hid}")
        adapt[hid].append(utt)

    trials: dict[str, list[Trial]] = {h: [] for h in members}
    for hid, model_id, utt, label in _rows(directory / TRIALS_FILE, 4):
        if hid not in members:
            raise ProtocolError(f"trials.tsv: unknown household {hid}")
        if model_id not in enroll[hid]:
            raise ProtocolError(
                f"trials.tsv: model {model_id} of household {hid} is absent from enroll.tsv"
            )
        trials[hid].append(Trial(model_id, utt, label))

    protocols = [
        HouseholdProtocol(
            household=Household(hid, tuple(members[hid]), tuple(guests[hid])),
            enroll=enroll[hid],
            adaptation_stream=tuple(adapt[hid]),
            trials=tuple(trials[hid]),
        )
        for hid in members
    ]

    if embeddings is None and (directory / EMBEDDINGS_FILE).exists():
        embeddings = read_embeddings(directory / EMBEDDINGS_FILE)
    if embeddings is not None:
        validate_protocols(protocols, embeddings)
    return protocols


def validate_protocols(
    protocols: Sequence[HouseholdProtocol], embeddings: Sequence[Embedding] | Mapping[str, Embedding]
) -> None:
    """Check referential integrity and, where speakers are known, label consistency."""
    index = embeddings if isinstance(embeddings, Mapping) else index_embeddings(embeddings)
    dims = {e.dim for e in index.values()}
    if len(dims) > 1:
        raise FormatError(f"embeddings have mixed dimensions {sorted(dims)}")
    for p in protocols:
        missing = sorted(u for u in p.utt_ids() if u not in index)
        if missing:
            raise ProtocolError(
                f"household {p.household_id}: unknown utterance ids {missing[:5]}"
            )
        for model_id, utts in p.enroll.items():
            for u in utts:
                spk = index[u].speaker_id
                if spk is not None and spk != model_id:
                    raise ProtocolError(
                        f"household {p.household_id}: enroll utterance {u} belongs to {spk}, "
                        f"not {model_id}"
                    )
        for t in p.trials:
            spk = index[t.test_utt_id].speaker_id
            if spk is None:
                continue
            expected = trial_label(t.model_id, spk, p.household)
            if expected != t.label:
                raise ProtocolError(
                    f"household {p.household_id}: trial {t.model_id}/{t.test_utt_id} "
                    f"labeled {t.label}, expected {expected}"
                )


# ---------------------------------------------------------------------------
# Score files


def write_scores(scores: Sequence[TrialScore], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in scores:
            f.write(f"{s.household_id}\t{s.model_id}\t{s.test_utt_id}\t{s.label}\t{float(s.score)!r}\n")


def read_scores(path: str | os.PathLike) -> list[TrialScore]:
    out = []
    for hid, model_id, utt, label, score in _rows(Path(path), 5):
        try:
            value = float(score)
        except ValueError:
            raise FormatError(f"{path}: bad score {score!r}") from None
        out.append(TrialScore(hid, model_id, utt, label, value))
    return out


def sort_scores(scores: Iterable[TrialScore]) -> list[TrialScore]:
    return sorted(scores, key=lambda s: (s.household_id, s.model_id, s.test_utt_id))


@dataclass
class Assignment:
    household_id: str
    utt_id: str
    label: str
    score: float = float("nan")


def write_assignments(rows: Sequence[Assignment], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rows:
            f.write(f"{r.household_id}\t{r.utt_id}\t{r.label}\t{float(r.score)!r}\n")


def read_assignments(path: str | os.PathLike) -> list[Assignment]:
    return [Assignment(h, u, lab, float(s)) for h, u, lab, s in _rows(Path(path), 4)]
