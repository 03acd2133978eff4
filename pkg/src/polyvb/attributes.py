"""Attribute combinatorics: profiles, Q-matrices and G-matrices.

Profiles are enumerated in canonical lexicographic order with the last
attribute varying fastest, so profile ``l`` is the mixed-radix number whose
digits are the attribute levels. Every downstream index (mixing proportions,
responsibilities, MAP profiles) uses this order.

A G-matrix maps each of the ``L`` global profiles onto one item-specific
pattern. It is stored as a length-``L`` lookup (profile -> pattern row),
which is what the estimators use; the dense binary form is derived on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray

Flavor = Literal["collapsed", "reduced"]
FLAVORS: tuple[str, ...] = ("collapsed", "reduced")


def _check_levels(levels: Sequence[int]) -> NDArray[np.int64]:
    levels = np.asarray(levels, dtype=np.int64).ravel()
    if levels.size == 0:
        raise ValueError("at least one attribute is required")
    if np.any(levels < 2):
        raise ValueError(f"every attribute needs >= 2 mastery levels, got {levels.tolist()}")
    return levels


def _check_flavor(flavor: str) -> str:
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}, got {flavor!r}")
    return flavor


def mixed_radix_index(digits: NDArray[np.integer], levels: NDArray[np.integer]) -> NDArray[np.int64]:
    """Canonical index of each row of ``digits`` (last column fastest)."""
    digits = np.asarray(digits, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    weights = np.ones(levels.size, dtype=np.int64)
    if levels.size > 1:
        weights[:-1] = np.cumprod(levels[::-1])[:-1][::-1]
    return digits @ weights


@dataclass(frozen=True)
class QMatrix:
    """Item-by-attribute matrix of required mastery levels.

    Parameters
    ----------
    entries : (J, K) int array
        ``entries[j, k]`` is the minimum level of attribute ``k`` needed by
        item ``j``; 0 means the attribute is irrelevant to the item.
    levels : (K,) int array
        Number of mastery levels ``M_k`` of each attribute.
    """

    entries: NDArray[np.int64]
    levels: NDArray[np.int64]

    def __post_init__(self):
        entries = np.atleast_2d(np.asarray(self.entries, dtype=np.int64))
        levels = _check_levels(self.levels)
        if entries.shape[1] != levels.size:
            raise ValueError(
                f"Q-matrix has {entries.shape[1]} columns but {levels.size} levels were given"
            )
        if np.any(entries < 0) or np.any(entries > levels - 1):
            raise ValueError("Q-matrix entries must lie in 0..M_k-1")
        if np.any(entries.max(axis=1) == 0):
            bad = np.flatnonzero(entries.max(axis=1) == 0).tolist()
            raise ValueError(f"items {bad} measure no attribute")
        entries.setflags(write=False)
        levels.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def uniform(cls, entries, n_levels: int) -> "QMatrix":
        entries = np.atleast_2d(np.asarray(entries, dtype=np.int64))
        return cls(entries, np.full(entries.shape[1], n_levels, dtype=np.int64))

    @property
    def n_items(self) -> int:
        return self.entries.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.entries.shape[1]

    def k_star(self) -> NDArray[np.int64]:
        """Number of relevant attributes of every item."""
        return (self.entries > 0).sum(axis=1)

    def stacked(self, times: int = 2) -> "QMatrix":
        return QMatrix(np.vstack([self.entries] * times), self.levels)


@dataclass(frozen=True)
class ProfileSpace:
    """All ``L = prod(M_k)`` attribute mastery profiles in canonical order."""

    levels: NDArray[np.int64]
    profiles: NDArray[np.int64] = field(repr=False)

    @property
    def n_profiles(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.levels.size

    def index_of(self, profiles):
        """Canonical index of each profile row; a single profile gives an int."""
        profiles = np.asarray(profiles)
        idx = mixed_radix_index(np.atleast_2d(profiles), self.levels)
        return int(idx[0]) if profiles.ndim == 1 else idx


def enumerate_profiles(levels: Sequence[int]) -> ProfileSpace:
    """Enumerate every profile for the given levels, last attribute fastest.

    >>> enumerate_profiles([2, 3]).profiles.tolist()
    [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]
    """
    levels = _check_levels(levels)
    grids = np.meshgrid(*[np.arange(m) for m in levels], indexing="ij")
    profiles = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    profiles.setflags(write=False)
    levels.setflags(write=False)
    return ProfileSpace(levels, profiles)


def k_star(q_row) -> int:
    """Number of attributes an item measures."""
    return int(np.count_nonzero(np.asarray(q_row) > 0))


def reduce_profile(profile, q_row) -> NDArray[np.int64]:
    """Keep the entries of ``profile`` at the attributes the item measures."""
    profile = np.asarray(profile, dtype=np.int64)
    q_row = np.asarray(q_row)
    return profile[..., q_row > 0]


def collapse_profile(reduced, q_row) -> NDArray[np.int64]:
    """Binarize a reduced profile against the item's required levels."""
    q_row = np.asarray(q_row, dtype=np.int64)
    required = q_row[q_row > 0]
    reduced = np.asarray(reduced, dtype=np.int64)
    if reduced.shape[-1] != required.size:
        raise ValueError(
            f"reduced vector has length {reduced.shape[-1]}, item measures {required.size} attributes"
        )
    return (reduced >= required).astype(np.int64)


@dataclass(frozen=True)
class GMatrix:
    """Map from global profiles to the patterns one item can distinguish.

    Attributes
    ----------
    item : int
        Item index ``j``.
    flavor : {"collapsed", "reduced"}
    attributes : (K*,) int array
        Indices of the attributes the item measures.
    patterns : (L*, K*) int array
        Item-specific patterns, sorted lexicographically.
    lookup : (L,) int array
        ``lookup[l]`` is the pattern row that profile ``l`` falls into.
    """

    item: int
    flavor: str
    attributes: NDArray[np.int64]
    patterns: NDArray[np.int64]
    lookup: NDArray[np.int64]

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_profiles(self) -> int:
        return self.lookup.size

    @cached_property
    def rows(self) -> NDArray[np.int8]:
        """Dense ``L* x L`` binary matrix ``g[l*, l]``."""
        dense = np.zeros((self.n_patterns, self.n_profiles), dtype=np.int8)
        dense[self.lookup, np.arange(self.n_profiles)] = 1
        return dense

    def item_indicator(self, z) -> NDArray:
        """Item-specific indicator ``G z`` for a profile indicator vector ``z``."""
        return self.rows @ np.asarray(z)


def build_gmatrix(q_row, space: ProfileSpace, flavor: Flavor = "collapsed", item: int = 0) -> GMatrix:
    """Build the G-matrix of one item.

    Collapsed flavor has ``2**K*`` patterns; reduced flavor has one pattern
    per combination of levels of the measured attributes.
    """
    _check_flavor(flavor)
    q_row = np.asarray(q_row, dtype=np.int64).ravel()
    if q_row.size != space.n_attributes:
        raise ValueError("Q-matrix row and profile space disagree on K")
    attributes = np.flatnonzero(q_row > 0)
    if attributes.size == 0:
        raise ValueError(f"item {item} measures no attribute")
    reduced = reduce_profile(space.profiles, q_row)
    if flavor == "collapsed":
        pattern_levels = np.full(attributes.size, 2, dtype=np.int64)
        mapped = collapse_profile(reduced, q_row)
    else:
        pattern_levels = space.levels[attributes]
        mapped = reduced
    patterns = enumerate_profiles(pattern_levels).profiles
    lookup = mixed_radix_index(mapped, pattern_levels)
    lookup.setflags(write=False)
    attributes.setflags(write=False)
    return GMatrix(int(item), flavor, attributes, patterns, lookup)


def build_gmatrices(qmatrix: QMatrix, space: ProfileSpace | None = None,
                    flavor: Flavor = "collapsed") -> list[GMatrix]:
    if space is None:
        space = enumerate_profiles(qmatrix.levels)
    elif not np.array_equal(space.levels, qmatrix.levels):
        raise ValueError("profile space was built from different levels than the Q-matrix")
    return [build_gmatrix(row, space, flavor, item=j) for j, row in enumerate(qmatrix.entries)]


def stack_lookups(gmatrices: Sequence[GMatrix]) -> NDArray[np.int64]:
    """``(J, L)`` array of pattern indices, the form used by the kernels."""
    if not gmatrices:
        return np.zeros((0, 0), dtype=np.int64)
    return np.ascontiguousarray(np.stack([g.lookup for g in gmatrices]).astype(np.int64))
