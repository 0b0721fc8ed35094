"""Coordinate permutations that preserve BCH codes.

A primitive narrow-sense BCH code of length n = 2^m - 1 is invariant under
the cyclic shift of its coordinates and under the doubling map i -> 2i mod n
(codeword positions are field exponents, and squaring permutes the roots of
the generator polynomial). Those two permutations generate a large group;
:class:`PermutationReservoir` draws pseudo-uniform elements from it with the
product-replacement random walk.

Convention: a permutation moves the value at position i to position
``map[i]``, so ``apply(x)[map[i]] == x[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from permbp.codes import CodeError, CodeSpec, syndrome

__all__ = [
    "PermutationElement",
    "PermutationReservoir",
    "identity",
    "cyclic_shift",
    "frobenius_doubling",
    "generators",
    "product_replacement_init",
    "compose_inverse_chain",
    "dump_reservoir",
    "parse_reservoir",
]


@dataclass(eq=False)
class PermutationElement:
    """A permutation of n coordinates, stored as its destination map."""

    map: np.ndarray

    def __post_init__(self) -> None:
        self.map = np.asarray(self.map, dtype=np.int64)
        if self.map.ndim != 1:
            raise CodeError("permutation map must be one-dimensional")
        if not np.array_equal(np.sort(self.map), np.arange(self.map.size)):
            raise CodeError("map is not a permutation of 0..n-1")
        self.map.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.map.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Permute the last axis: out[..., map[i]] = x[..., i]."""
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise CodeError(f"operand length {x.shape[-1]} does not match n={self.n}")
        out = np.empty_like(x)
        out[..., self.map] = x
        return out

    def compose(self, other: "PermutationElement") -> "PermutationElement":
        """self after other: compose(a, b).apply(x) == a.apply(b.apply(x))."""
        if other.n != self.n:
            raise CodeError("cannot compose permutations of different sizes")
        return PermutationElement(self.map[other.map])

    def inverse(self) -> "PermutationElement":
        inv = np.empty(self.n, dtype=np.int64)
        inv[self.map] = np.arange(self.n)
        return PermutationElement(inv)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.n)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PermutationElement):
            return NotImplemented
        return bool(np.array_equal(self.map, other.map))

    def __hash__(self) -> int:
        return hash(self.map.tobytes())


def identity(n: int) -> PermutationElement:
    return PermutationElement(np.arange(n))


def cyclic_shift(n: int, s: int = 1) -> PermutationElement:
    """Shift coefficient positions by s: position i moves to (i + s) mod n."""
    return PermutationElement((np.arange(n) + s) % n)


def frobenius_doubling(n: int) -> PermutationElement:
    """Position i moves to 2i mod n; a bijection because n is odd."""
    if n % 2 == 0:
        raise CodeError(f"doubling map needs odd length, got n={n}")
    return PermutationElement((2 * np.arange(n)) % n)


def _preserves_code(perm: PermutationElement, code: CodeSpec) -> bool:
    return not np.any(syndrome(code, perm.apply(code.generator)))


def generators(code: CodeSpec) -> list[PermutationElement]:
    """The cyclic-shift and doubling generators for a BCH code.

    Refused unless the code carries BCH provenance (``bch_m`` set), and the
    claim is verified by checking that both maps send every generator-matrix
    row to a codeword.
    """
    if code.bch_m is None:
        raise CodeError(
            "automorphism generators need BCH provenance; construct the code "
            "with build_bch_code or pass bch_m to load_parity_matrix"
        )
    if code.n != (1 << code.bch_m) - 1:
        raise CodeError(f"n={code.n} is not 2^{code.bch_m} - 1")
    gens = [cyclic_shift(code.n), frobenius_doubling(code.n)]
    for g in gens:
        if not _preserves_code(g, code):
            raise CodeError(
                f"claimed BCH code {code.name} is not invariant under its "
                "automorphism generators; the bch_m assertion looks wrong"
            )
    return gens


def compose_inverse_chain(perms: list[PermutationElement]) -> PermutationElement:
    """The permutation undoing perms applied in order.

    If a frame has been carried through p1 then p2 ... then pj, applying the
    returned permutation brings it back to the original coordinate order.
    """
    if not perms:
        raise CodeError("empty permutation chain")
    acc = identity(perms[0].n)
    for p in perms:
        acc = acc.compose(p.inverse())
    return acc


class PermutationReservoir:
    """Product-replacement sampler over the group the generators span.

    Slots are seeded by cycling the generators and stirred with ``k_pr``
    burn-in steps ("right multiplication, random inverse" variant). Each
    :meth:`sample` performs one more step (replace a random slot s with its
    product by another slot t or t's inverse) and returns the new slot
    value. Determinism comes entirely from the seed; reservoir dumps are
    for inspection, not replay.
    """

    def __init__(self, gens: list[PermutationElement], n_pr: int, k_pr: int,
                 seed: int | np.random.Generator = 0):
        if not gens:
            raise CodeError("need at least one generator")
        if n_pr < 2:
            raise CodeError(f"reservoir needs at least 2 slots, got {n_pr}")
        if k_pr < 0:
            raise CodeError(f"burn-in count must not be negative, got {k_pr}")
        self.n = gens[0].n
        self.n_pr = n_pr
        self.rng_seed = seed if isinstance(seed, int) else None
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)
        self.elements = [gens[i % len(gens)] for i in range(n_pr)]
        self.k_pr_done = 0
        for _ in range(k_pr):
            self._step()

    @classmethod
    def for_code(cls, code: CodeSpec, n_pr: int, k_pr: int,
                 seed: int | np.random.Generator = 0) -> "PermutationReservoir":
        return cls(generators(code), n_pr, k_pr, seed)

    def _step(self) -> int:
        s, t = self.rng.choice(self.n_pr, size=2, replace=False)
        other = self.elements[t]
        if self.rng.integers(0, 2):
            other = other.inverse()
        self.elements[s] = self.elements[s].compose(other)
        self.k_pr_done += 1
        return int(s)

    def sample(self) -> PermutationElement:
        return self.elements[self._step()]

    def sample_chain(self, count: int) -> list[PermutationElement]:
        return [self.sample() for _ in range(count)]


def product_replacement_init(gens: list[PermutationElement], n_pr: int,
                             k_pr: int, seed: int | np.random.Generator = 0
                             ) -> PermutationReservoir:
    return PermutationReservoir(gens, n_pr, k_pr, seed)


def dump_reservoir(res: PermutationReservoir) -> str:
    lines = [f"permbp-reservoir v1", f"n {res.n} slots {res.n_pr}"]
    lines.extend(" ".join(str(v) for v in e.map) for e in res.elements)
    return "\n".join(lines) + "\n"


def parse_reservoir(text: str) -> list[PermutationElement]:
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines or lines[0] != "permbp-reservoir v1":
        raise CodeError("not a reservoir dump (missing header)")
    head = lines[1].split()
    if len(head) != 4 or head[0] != "n" or head[2] != "slots":
        raise CodeError(f"bad reservoir size line: {lines[1]!r}")
    n, slots = int(head[1]), int(head[3])
    if len(lines) != 2 + slots:
        raise CodeError(f"expected {slots} slot lines, found {len(lines) - 2}")
    out = []
    for ln in lines[2:]:
        vals = np.array([int(tok) for tok in ln.split()], dtype=np.int64)
        if vals.size != n:
            raise CodeError(f"slot line has {vals.size} entries, expected {n}")
        out.append(PermutationElement(vals))
    return out
