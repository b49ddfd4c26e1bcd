"""Finite time-reflection-symmetric lattices.

Sites carry a nonzero integer time coordinate in -T..-1, 1..T together with
d periodic spatial coordinates. Time zero is excluded, so the reflection
(t, x) -> (-t, x) is a fixed-point-free involution that splits the site set
into the positive-time half and its mirror image. The reflection plane sits
on the link between t = -1 and t = +1 ("link reflection").

Site ordering is lexicographic in (t, x1, ..., xd) with t ascending
-T..-1, 1..T, so every matrix and report built on top of a lattice is
reproducible byte for byte.
"""

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """Immutable lattice geometry; safe for concurrent shared reads."""

    time_extent: int
    spatial_extents: tuple
    coords: np.ndarray      # (N, 1+d) int array, row i = (t, x) of site i
    theta_perm: np.ndarray  # site index of the time-reflected partner
    plus_sites: np.ndarray  # indices with t >= 1, in canonical order
    minus_sites: np.ndarray
    half_of: np.ndarray     # position within plus_sites, -1 on the minus half

    @property
    def site_count(self):
        return self.coords.shape[0]

    @property
    def n_plus(self):
        return self.plus_sites.shape[0]

    def index_of(self, coord):
        """Map a (t, x1, ..., xd) coordinate tuple to its site index."""
        t = int(coord[0])
        T = self.time_extent
        if t == 0 or t < -T or t > T:
            raise ValueError(f"time coordinate {t} outside -{T}..-1, 1..{T}")
        if len(coord) != 1 + len(self.spatial_extents):
            raise ValueError(
                f"coordinate has {len(coord)} entries, lattice needs {1 + len(self.spatial_extents)}"
            )
        time_rank = t + T if t < 0 else T + t - 1
        idx = time_rank
        for x, extent in zip(coord[1:], self.spatial_extents):
            x = int(x)
            if not 0 <= x < extent:
                raise ValueError(f"spatial coordinate {x} outside 0..{extent - 1}")
            idx = idx * extent + x
        # interleaving above is (time_rank * volume + spatial_rank) in disguise
        return idx


def build_lattice(time_extent, spatial_extents=()):
    """Construct the lattice with 2*T time slices and periodic spatial torus."""
    T = int(time_extent)
    if T < 1:
        raise ValueError(f"time_extent must be >= 1, got {time_extent}")
    extents = tuple(int(L) for L in spatial_extents)
    if any(L < 1 for L in extents):
        raise ValueError(f"spatial extents must be >= 1, got {spatial_extents}")

    times = list(range(-T, 0)) + list(range(1, T + 1))
    spatial = list(itertools.product(*[range(L) for L in extents]))
    coords = np.array(
        [(t,) + x for t in times for x in spatial], dtype=np.int64
    ).reshape(len(times) * len(spatial), 1 + len(extents))

    lookup = {tuple(c): i for i, c in enumerate(coords.tolist())}
    theta = np.empty(len(coords), dtype=np.int64)
    for i, c in enumerate(coords.tolist()):
        theta[i] = lookup[(-c[0],) + tuple(c[1:])]

    plus = np.flatnonzero(coords[:, 0] >= 1)
    minus = np.flatnonzero(coords[:, 0] <= -1)
    half_of = np.full(len(coords), -1, dtype=np.int64)
    half_of[plus] = np.arange(len(plus))

    return Lattice(
        time_extent=T,
        spatial_extents=extents,
        coords=coords,
        theta_perm=theta,
        plus_sites=plus,
        minus_sites=minus,
        half_of=half_of,
    )


def _as_site_vector(lattice, v):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (lattice.site_count,):
        raise ValueError(
            f"vector has shape {arr.shape}, lattice has {lattice.site_count} sites"
        )
    return arr


def reflect(lattice, v):
    """Apply time reflection to a site vector: out[i] = v[theta(i)].

    A pure permutation, so applying it twice returns the input bit-exactly.
    """
    return _as_site_vector(lattice, v)[lattice.theta_perm]


def restrict_plus(lattice, v):
    """Entries of v on the positive-time half, in canonical half ordering."""
    return _as_site_vector(lattice, v)[lattice.plus_sites]


def embed_plus(lattice, h):
    """Zero-extend a half vector to the full lattice (section of restrict_plus)."""
    arr = np.asarray(h, dtype=np.float64)
    if arr.shape != (lattice.n_plus,):
        raise ValueError(f"half vector has shape {arr.shape}, expected ({lattice.n_plus},)")
    out = np.zeros(lattice.site_count, dtype=np.float64)
    out[lattice.plus_sites] = arr
    return out


def positive_support(lattice, v):
    """True iff every entry at a negative-time site is exactly zero.

    Exact zero, not a tolerance: test functions are user-specified inputs,
    not computed quantities.
    """
    arr = _as_site_vector(lattice, v)
    return bool(np.all(arr[lattice.minus_sites] == 0.0))
