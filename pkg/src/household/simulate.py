"""Synthetic household protocols sampled from the two-covariance model.

Randomness: numpy's PCG64 bit generator. Household ``h`` draws from
``np.random.default_rng(np.random.SeedSequence([seed, h]))``, so every
household is reproducible on its own and generation order does not matter.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Embedding, Household, HouseholdProtocol, Trial, trial_label


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """``n_guests_per_household=None`` gives each household as many guests as
    members. Guests put ``n_adapt_per_member`` utterances into the stream."""

    seed: int = 0
    d: int = 32
    sigma_b2: float = 1.0
    sigma_w2: float = 0.3
    n_households: int = 100
    household_sizes: tuple[int, ...] = (4, 6, 8, 10)
    n_enroll: int = 3
    n_adapt_per_member: int = 10
    n_test_per_member: int = 5
    n_guests_per_household: int | None = None
    n_test_per_guest: int = 5
    shuffle_stream: bool = True
    two_populations: bool = False

    def __post_init__(self):
        object.__setattr__(self, "household_sizes", tuple(int(s) for s in self.household_sizes))
        for name in ("d", "n_households", "n_enroll", "n_test_per_member", "n_test_per_guest"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_adapt_per_member < 0:
            raise ConfigError("n_adapt_per_member must be >= 0")
        if self.n_guests_per_household is not None and self.n_guests_per_household < 0:
            raise ConfigError("n_guests_per_household must be >= 0")
        if not self.household_sizes or min(self.household_sizes) < 2:
            raise ConfigError("household sizes must be >= 2")
        if self.sigma_b2 < 0 or not self.sigma_w2 > 0:
            raise ConfigError("sigma_b2 must be >= 0 and sigma_w2 > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def household_size(self, h: int) -> int:
        return self.household_sizes[h % len(self.household_sizes)]

    def n_guests(self, h: int) -> int:
        if self.n_guests_per_household is None:
            return self.household_size(h)
        return self.n_guests_per_household


def load_config(path: str | os.PathLike) -> SimConfig:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    raw = raw.get("simulate", raw)
    names = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    try:
        return SimConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def household_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def sample_speaker(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Latent speaker offset y ~ N(0, sigma_b2 I)."""
    return rng.standard_normal(config.d) * np.sqrt(config.sigma_b2)


def sample_utterance(
    y: np.ndarray, config: SimConfig, rng: np.random.Generator, mu: np.ndarray | None = None
) -> np.ndarray:
    """x = mu + y + e with e ~ N(0, sigma_w2 I)."""
    x = y + rng.standard_normal(config.d) * np.sqrt(config.sigma_w2)
    return x if mu is None else mu + x


def _population_means(config: SimConfig) -> list[np.ndarray]:
    if not config.two_populations:
        return [np.zeros(config.d)]
    # fixed, seed-independent offsets along the first axis
    shift = np.zeros(config.d)
    shift[0] = 2.0 * np.sqrt(config.sigma_b2 + config.sigma_w2)
    return [shift, -shift]


def generate_household(config: SimConfig, h: int) -> tuple[list[Embedding], HouseholdProtocol]:
    rng = household_rng(config.seed, h)
    hid = f"h{h:04d}"
    K, G = config.household_size(h), config.n_guests(h)
    pops = _population_means(config)
    members = [f"{hid}_m{k:02d}" for k in range(K)]
    guests = [f"{hid}_g{g:02d}" for g in range(G)]
    population = {s: pops[i % len(pops)] for i, s in enumerate(members)}
    population.update({s: pops[i % len(pops)] for i, s in enumerate(guests)})

    embeddings: list[Embedding] = []
    enroll: dict[str, list[str]] = {}
    stream: list[str] = []
    tests: list[tuple[str, str]] = []

    def emit(spk, y, tag, n):
        ids = []
        for j in range(n):
            uid = f"{spk}_{tag}{j:02d}"
            embeddings.append(Embedding(uid, spk, sample_utterance(y, config, rng, population[spk])))
            ids.append(uid)
        return ids

    for spk in members:
        y = sample_speaker(config, rng)
        enroll[spk] = emit(spk, y, "e", config.n_enroll)
        stream += emit(spk, y, "a", config.n_adapt_per_member)
        tests += [(u, spk) for u in emit(spk, y, "t", config.n_test_per_member)]
    for spk in guests:
        y = sample_speaker(config, rng)
        stream += emit(spk, y, "a", config.n_adapt_per_member)
        tests += [(u, spk) for u in emit(spk, y, "t", config.n_test_per_guest)]

    if config.shuffle_stream and stream:
        stream = [stream[i] for i in rng.permutation(len(stream))]

    household = Household(hid, tuple(members), tuple(guests))
    trials = [
        Trial(m, u, trial_label(m, spk, household))
        for u, spk in tests
        for m in members
        if population[m] is population[spk]
    ]
    return embeddings, HouseholdProtocol(household, enroll, tuple(stream), tuple(trials))


def generate_protocol(config: SimConfig) -> tuple[list[Embedding], list[HouseholdProtocol]]:
    embeddings: list[Embedding] = []
    protocols: list[HouseholdProtocol] = []
    for h in range(config.n_households):
        e, p = generate_household(config, h)
        embeddings += e
        protocols.append(p)
    return embeddings, protocols


def labeled_groups(embeddings: Sequence[Embedding]) -> dict[str, np.ndarray]:
    """Group labeled embeddings by speaker (insertion order)."""
    groups: dict[str, list[np.ndarray]] = {}
    for e in embeddings:
        if e.speaker_id is not None:
            groups.setdefault(e.speaker_id, []).append(e.vector)
    return {k: np.stack(v) for k, v in groups.items()}
