"""Valence histograms, their empirical distribution, and constrained sampling.

A valence histogram records how many atoms of each valence a molecule
contains. The generator is conditioned on these counts: sampling targets are
drawn from the empirical distribution of training-set histograms, restricted
to histograms that still dominate the atoms typed so far.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np

if TYPE_CHECKING:
    from .chemgraph import MolecularGraph


class ValenceHistogram:
    """Immutable per-valence atom counts, bucket i holding valence-i atoms (i in 1..nu)."""

    __slots__ = ("counts",)

    def __init__(self, counts: Sequence[int]):
        counts = tuple(int(c) for c in counts)
        if not counts:
            raise ValueError("histogram needs at least one valence bucket")
        if any(c < 0 for c in counts):
            raise ValueError(f"negative bucket in histogram {counts}")
        self.counts = counts

    @classmethod
    def zeros(cls, nu: int) -> "ValenceHistogram":
        if nu < 1:
            raise ValueError("nu must be >= 1")
        return cls((0,) * nu)

    @classmethod
    def from_dict(cls, buckets: dict[int, int], nu: int) -> "ValenceHistogram":
        counts = [0] * nu
        for valence, count in buckets.items():
            if not 1 <= valence <= nu:
                raise ValueError(f"valence {valence} outside 1..{nu}")
            counts[valence - 1] = count
        return cls(counts)

    @property
    def nu(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def count(self, valence: int) -> int:
        if not 1 <= valence <= self.nu:
            raise ValueError(f"valence {valence} outside 1..{self.nu}")
        return self.counts[valence - 1]

    def _check_same_nu(self, other: "ValenceHistogram") -> None:
        if self.nu != other.nu:
            raise ValueError(f"histogram size mismatch: {self.nu} vs {other.nu}")

    def is_compatible_with(self, other: "ValenceHistogram") -> bool:
        """True iff every bucket of `other` is at least as large as in `self`."""
        self._check_same_nu(other)
        return all(b >= a for a, b in zip(self.counts, other.counts))

    def subtract(self, used: "ValenceHistogram") -> "ValenceHistogram":
        """Bucket-wise difference; `used` must be compatible with `self`."""
        self._check_same_nu(used)
        diff = [a - b for a, b in zip(self.counts, used.counts)]
        if any(d < 0 for d in diff):
            raise ValueError(f"cannot subtract {used.counts} from {self.counts}")
        return ValenceHistogram(diff)

    def clamped_difference(self, used: "ValenceHistogram") -> "ValenceHistogram":
        """Bucket-wise difference floored at zero (used after a sampling fallback)."""
        self._check_same_nu(used)
        return ValenceHistogram(max(a - b, 0) for a, b in zip(self.counts, used.counts))

    def with_valence(self, valence: int) -> "ValenceHistogram":
        """Return a copy with the bucket for `valence` incremented by one."""
        if not 1 <= valence <= self.nu:
            raise ValueError(f"valence {valence} outside 1..{self.nu}")
        counts = list(self.counts)
        counts[valence - 1] += 1
        return ValenceHistogram(counts)

    def as_dict(self) -> dict[int, int]:
        return {i + 1: c for i, c in enumerate(self.counts) if c}

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float32)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ValenceHistogram) and self.counts == other.counts

    def __hash__(self) -> int:
        return hash(self.counts)

    def __repr__(self) -> str:
        return f"ValenceHistogram({self.as_dict()}, nu={self.nu})"


class HistogramDistribution:
    """Empirical distribution over the distinct valence histograms of a corpus."""

    def __init__(self, entries: Iterable[tuple[ValenceHistogram, float]]):
        entries = sorted(entries, key=lambda e: e[0].counts)
        if not entries:
            raise ValueError("empty histogram distribution")
        nu = entries[0][0].nu
        seen = set()
        for hist, weight in entries:
            if hist.nu != nu:
                raise ValueError("histograms in a distribution must share nu")
            if weight <= 0:
                raise ValueError(f"non-positive weight {weight} for {hist}")
            if hist in seen:
                raise ValueError(f"duplicate histogram {hist}")
            seen.add(hist)
        self.entries: tuple[tuple[ValenceHistogram, float], ...] = tuple(entries)
        self._weights = np.array([w for _, w in entries], dtype=np.float64)
        self._cum = np.cumsum(self._weights)
        self.total_weight = float(self._cum[-1])

    @property
    def nu(self) -> int:
        return self.entries[0][0].nu

    @classmethod
    def from_graphs(cls, corpus: "Sequence[MolecularGraph]") -> "HistogramDistribution":
        """Count occurrences of each heavy-atom valence histogram in the corpus."""
        if not corpus:
            raise ValueError("cannot build a distribution from an empty corpus")
        counts: dict[ValenceHistogram, int] = {}
        for graph in corpus:
            hist = graph.valence_histogram(include_hydrogens=False)
            counts[hist] = counts.get(hist, 0) + 1
        return cls(counts.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[ValenceHistogram, float]]:
        return iter(self.entries)

    def weight_of(self, hist: ValenceHistogram) -> float:
        for entry, weight in self.entries:
            if entry == hist:
                return weight
        return 0.0

    def sample(self, rng: np.random.Generator) -> ValenceHistogram:
        """Draw a histogram with probability proportional to its weight."""
        r = rng.random() * self.total_weight
        idx = int(np.searchsorted(self._cum, r, side="right"))
        return self.entries[min(idx, len(self.entries) - 1)][0]

    def sample_initial(self, rng: np.random.Generator) -> tuple[ValenceHistogram, int]:
        """Draw a generation target; the atom count is the histogram's own total."""
        hist = self.sample(rng)
        return hist, hist.total

    def sample_compatible(
        self,
        used: ValenceHistogram,
        min_atoms: int,
        rng: np.random.Generator,
    ) -> tuple[ValenceHistogram, bool]:
        """Draw among entries dominating `used` with at least `min_atoms` atoms.

        When no entry qualifies, falls back to an unconstrained draw and flags
        it in the second return value.
        """
        if min_atoms < 1:
            raise ValueError("min_atoms must be >= 1")
        pool = [
            (hist, weight)
            for hist, weight in self.entries
            if hist.total >= min_atoms and used.is_compatible_with(hist)
        ]
        if not pool:
            return self.sample(rng), True
        cum = np.cumsum([w for _, w in pool])
        r = rng.random() * cum[-1]
        idx = int(np.searchsorted(cum, r, side="right"))
        return pool[min(idx, len(pool) - 1)][0], False

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    def serialize(self) -> str:
        lines = [f"nu={self.nu}"]
        for hist, weight in self.entries:
            w = int(weight) if float(weight).is_integer() else weight
            lines.append(" ".join(str(c) for c in hist.counts) + f"\t{w}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path: str) -> "HistogramDistribution":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.deserialize(fh.read())

    @classmethod
    def deserialize(cls, text: str) -> "HistogramDistribution":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("nu="):
            raise ValueError("distribution file must start with a nu=<value> header")
        nu = int(lines[0][3:])
        entries = []
        for ln in lines[1:]:
            counts_part, _, weight_part = ln.partition("\t")
            counts = [int(c) for c in counts_part.split()]
            if len(counts) != nu:
                raise ValueError(f"entry {counts} does not match nu={nu}")
            entries.append((ValenceHistogram(counts), float(weight_part)))
        return cls(entries)
