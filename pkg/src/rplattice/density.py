"""Polynomial interaction densities and the splitting decision.

A density is a polynomial in the field values at lattice sites, stored in a
canonical form (merged monomials, sorted factor lists, constant kept apart).
The central operation decides whether a density F can be written as

    F = G(positive half of the field) + G(positive half of the reflected field)

for a single polynomial G on the positive-time half, and produces G when it
exists. Coefficients are combined symbolically: all identities certified
here hold exactly, never up to a numerical tolerance.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class Term:
    """One monomial: coefficient times a product of site powers."""

    coefficient: float
    factors: tuple  # ((site, power), ...) sorted by site, distinct sites

    def __post_init__(self):
        factors = tuple(sorted((int(s), int(p)) for s, p in self.factors))
        sites = [s for s, _ in factors]
        if len(set(sites)) != len(sites):
            raise ValueError(f"repeated site in term factors: {self.factors}")
        if any(p < 1 for _, p in factors):
            raise ValueError(f"zero or negative power in term factors: {self.factors}")
        if any(s < 0 for s in sites):
            raise ValueError(f"negative site index in term factors: {self.factors}")
        object.__setattr__(self, "coefficient", float(self.coefficient))
        object.__setattr__(self, "factors", factors)


@dataclass(frozen=True)
class Potential:
    """Canonical sum of monomials plus a separate constant."""

    terms: tuple = ()
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "constant", float(self.constant))


ZERO_POTENTIAL = Potential()


def canonicalize(p):
    """Merge like terms, drop exact zeros, sort by factor list. Idempotent."""
    merged = {}
    constant = p.constant
    for t in p.terms:
        if not t.factors:
            constant += t.coefficient
            continue
        merged[t.factors] = merged.get(t.factors, 0.0) + t.coefficient
    terms = tuple(
        Term(c, f) for f, c in sorted(merged.items()) if c != 0.0
    )
    return Potential(terms, constant)


def add_potentials(p, q):
    return canonicalize(Potential(p.terms + q.terms, p.constant + q.constant))


def negate_potential(p):
    return Potential(tuple(Term(-t.coefficient, t.factors) for t in p.terms), -p.constant)


def eval_potential(p, values):
    """Evaluate at one configuration (full or half vector, as indexed)."""
    arr = np.asarray(values, dtype=np.float64)
    total = p.constant
    for t in p.terms:
        prod = t.coefficient
        for site, power in t.factors:
            if site >= arr.shape[0]:
                raise ValueError(
                    f"site index {site} out of range for vector of length {arr.shape[0]}"
                )
            # sequential multiply, matching eval_potential_batch bit for bit
            v = float(arr[site])
            for _ in range(power):
                prod *= v
        total += prod
    return float(total)


def eval_potential_batch(p, configs):
    """Evaluate at many configurations at once; configs has shape (n, dim).

    Same factor order and multiplication scheme as eval_potential, so both
    entry points agree bit for bit.
    """
    configs = np.asarray(configs, dtype=np.float64)
    out = np.full(configs.shape[0], p.constant, dtype=np.float64)
    for t in p.terms:
        prod = np.full(configs.shape[0], t.coefficient, dtype=np.float64)
        for site, power in t.factors:
            if site >= configs.shape[1]:
                raise ValueError(
                    f"site index {site} out of range for configs of width {configs.shape[1]}"
                )
            col = configs[:, site]
            for _ in range(power):
                prod = prod * col
        out += prod
    return out


def eval_potential_exact(p, values):
    """Evaluate in exact dyadic-rational arithmetic; returns a Fraction.

    Field values and coefficients are binary floats, hence dyadic rationals,
    so sums and products carry no rounding here. This is the reference
    evaluator for the identities certified by split_check: whenever the
    witness identity holds at the term level it holds exactly under this
    evaluation, independent of term order or grouping.
    """
    arr = np.asarray(values, dtype=np.float64)
    total = Fraction(p.constant)
    for t in p.terms:
        prod = Fraction(t.coefficient)
        for site, power in t.factors:
            if site >= arr.shape[0]:
                raise ValueError(
                    f"site index {site} out of range for vector of length {arr.shape[0]}"
                )
            prod *= Fraction(float(arr[site])) ** power
        total += prod
    return total


def reflect_potential(lattice, p):
    """Substitute site -> theta(site) in every factor. An exact involution."""
    theta = lattice.theta_perm
    terms = []
    for t in p.terms:
        for site, _ in t.factors:
            if site >= lattice.site_count:
                raise ValueError(f"site index {site} out of range for lattice of {lattice.site_count} sites")
        terms.append(Term(t.coefficient, tuple((int(theta[s]), pw) for s, pw in t.factors)))
    return canonicalize(Potential(tuple(terms), p.constant))


MIXED_SUPPORT = "mixed-support"
UNMATCHED_MIRROR = "unmatched-mirror"


@dataclass(frozen=True)
class Violation:
    term: Term
    reason: str


@dataclass(frozen=True)
class SplitResult:
    is_splitting: bool
    witness_g: Potential | None   # over half indices 0..N/2-1 when splitting
    violations: tuple = ()


def _support_class(lattice, term):
    sites = [s for s, _ in term.factors]
    on_plus = [lattice.half_of[s] >= 0 for s in sites]
    if all(on_plus):
        return "plus"
    if not any(on_plus):
        return "minus"
    return "mixed"


def _lift_half(lattice, g, to_minus):
    """Rewrite a half-index potential over full-lattice sites (mirrored if asked)."""
    plus = lattice.plus_sites
    theta = lattice.theta_perm
    terms = []
    for t in g.terms:
        mapped = []
        for h, pw in t.factors:
            site = int(plus[h])
            mapped.append((int(theta[site]) if to_minus else site, pw))
        terms.append(Term(t.coefficient, tuple(sorted(mapped))))
    return Potential(tuple(terms), g.constant)


def split_check(lattice, f):
    """Decide whether f splits across the reflection plane and extract a witness.

    Decision: a term touching both halves kills splitting outright; otherwise
    the positive-half terms must mirror the negative-half terms coefficient
    for coefficient. The witness G carries the positive-half terms rewritten
    over half indices, with half of f's constant, so that

        f(T) = G(restrict_plus(T)) + G(restrict_plus(reflect(T)))

    holds as an identity of polynomials. The identity is re-derived in term
    algebra before returning; failure there is an internal error.
    """
    f = canonicalize(f)

    mixed = [t for t in f.terms if _support_class(lattice, t) == "mixed"]
    if mixed:
        return SplitResult(False, None, tuple(Violation(t, MIXED_SUPPORT) for t in mixed))

    plus_terms = tuple(t for t in f.terms if _support_class(lattice, t) == "plus")
    minus_terms = tuple(t for t in f.terms if _support_class(lattice, t) == "minus")
    f_plus = Potential(plus_terms, 0.0)
    mirror = reflect_potential(lattice, Potential(minus_terms, 0.0))

    residual = add_potentials(f_plus, negate_potential(mirror))
    if residual.terms:
        return SplitResult(
            False, None, tuple(Violation(t, UNMATCHED_MIRROR) for t in residual.terms)
        )

    half_of = lattice.half_of
    g_terms = tuple(
        Term(t.coefficient, tuple((int(half_of[s]), pw) for s, pw in t.factors))
        for t in plus_terms
    )
    witness = canonicalize(Potential(g_terms, f.constant / 2.0))

    rebuilt = add_potentials(
        _lift_half(lattice, witness, to_minus=False),
        _lift_half(lattice, witness, to_minus=True),
    )
    if rebuilt != f:
        raise AssertionError("witness reconstruction failed to reproduce the density exactly")
    return SplitResult(True, witness, ())


def phi4(lattice, coupling):
    """Quartic density -coupling * sum over sites of field^4.

    Bounded above by zero, so its exponential is integrable against any
    Gaussian base measure.
    """
    lam = float(coupling)
    if lam <= 0:
        raise ValueError(f"coupling must be positive, got {coupling}")
    terms = tuple(Term(-lam, ((site, 4),)) for site in range(lattice.site_count))
    return canonicalize(Potential(terms, 0.0))


def _coeff_repr(c):
    # integers written as integers so round-trips preserve what the user typed
    return int(c) if float(c).is_integer() and abs(c) < 2**53 else float(c)


def potential_to_obj(lattice, p, half=False):
    """Wire form: terms with site coordinates, suitable for JSON."""
    terms = []
    for t in p.terms:
        factors = []
        for site, power in t.factors:
            full = int(lattice.plus_sites[site]) if half else int(site)
            factors.append(
                {"site": [int(x) for x in lattice.coords[full]], "power": int(power)}
            )
        terms.append({"coefficient": _coeff_repr(t.coefficient), "factors": factors})
    return {"terms": terms, "constant": _coeff_repr(p.constant)}


def potential_from_obj(lattice, obj):
    """Parse the wire form back into a canonical full-lattice potential."""
    if not isinstance(obj, dict):
        raise ValueError("potential must be an object with 'terms' and 'constant'")
    terms = []
    for entry in obj.get("terms", []):
        factors = tuple(
            (lattice.index_of(f["site"]), int(f["power"])) for f in entry["factors"]
        )
        terms.append(Term(float(entry["coefficient"]), factors))
    return canonicalize(Potential(tuple(terms), float(obj.get("constant", 0.0))))
