"""Binary linear block codes over GF(2).

BCH construction from generator polynomials, parity-check machinery, Tanner
graph adjacency, syndrome computation, and alist-format interchange.

Position convention: bit i of a length-n word is the coefficient of x^i in
the code polynomial. For a primitive BCH code of length n = 2^m - 1 this
makes the position index the exponent of the primitive field element, which
is what the coordinate automorphisms in :mod:`permbp.autgroup` act on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PRIMITIVE_POLYS",
    "CodeError",
    "AlistFormatError",
    "TannerGraph",
    "CodeSpec",
    "build_bch_code",
    "syndrome",
    "enumerate_codewords",
    "gf2_rank",
    "gf2_row_reduce",
    "gf2_nullspace",
    "parse_alist",
    "format_alist",
    "load_alist",
    "save_alist",
    "load_parity_matrix",
]

# Minimal-weight primitive polynomials over GF(2), indexed by field exponent m.
# Bit i holds the coefficient of x^i. These are the classic table defaults
# (x^2+x+1, x^3+x+1, x^4+x+1, x^5+x^2+1, x^6+x+1, x^7+x^3+1,
# x^8+x^4+x^3+x^2+1), fixed so constructed matrices are identical everywhere.
PRIMITIVE_POLYS: dict[int, int] = {
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0b100011101,
}

ENUMERATION_LIMIT = 24


class CodeError(ValueError):
    """Invalid code parameters or inconsistent code data."""


class AlistFormatError(CodeError):
    """Malformed alist text, carrying the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# GF(2)[x] polynomials, bit-packed into Python ints (bit i = coeff of x^i).

def _poly_deg(p: int) -> int:
    return p.bit_length() - 1


def _poly_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def _poly_mod(a: int, mod: int) -> int:
    dm = _poly_deg(mod)
    while _poly_deg(a) >= dm:
        a ^= mod << (_poly_deg(a) - dm)
    return a


def _gf_tables(m: int) -> tuple[list[int], dict[int, int]]:
    """Exp and log tables for GF(2^m) built on the fixed primitive polynomial."""
    n = (1 << m) - 1
    poly = PRIMITIVE_POLYS[m]
    antilog = [0] * n
    x = 1
    for i in range(n):
        antilog[i] = x
        x <<= 1
        if x >> m:
            x ^= poly
    log = {antilog[i]: i for i in range(n)}
    return antilog, log


def _bch_generator_polynomial(m: int, t: int) -> int:
    """Product of the distinct minimal polynomials of the first 2t powers
    of the primitive element, as a bit-packed GF(2)[x] polynomial."""
    n = (1 << m) - 1
    antilog, log = _gf_tables(m)

    def gf_mul(a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return antilog[(log[a] + log[b]) % n]

    covered: set[int] = set()
    g = 1
    for i in range(1, 2 * t + 1):
        e = i % n
        if e in covered:
            continue
        coset = []
        j = e
        while j not in coset:
            coset.append(j)
            j = (2 * j) % n
        covered.update(coset)
        # minimal polynomial: product of (x + alpha^j) over the coset,
        # with coefficients tracked in GF(2^m)
        mp = [1]
        for j in coset:
            root = antilog[j]
            nxt = [0] * (len(mp) + 1)
            for idx, c in enumerate(mp):
                nxt[idx + 1] ^= c
                nxt[idx] ^= gf_mul(c, root)
            mp = nxt
        if any(c not in (0, 1) for c in mp):
            raise CodeError(f"minimal polynomial for coset of {e} left GF(2)")
        g = _poly_mul(g, sum(bit << idx for idx, bit in enumerate(mp)))
    return g


def _poly_bits(p: int, width: int) -> np.ndarray:
    return np.array([(p >> i) & 1 for i in range(width)], dtype=np.uint8)


# ---------------------------------------------------------------------------
# GF(2) linear algebra on dense uint8 matrices.

def gf2_row_reduce(mat: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2). Returns (rref, pivot columns)."""
    a = np.array(mat, dtype=np.uint8, copy=True) % 2
    rows, cols = a.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hit = np.flatnonzero(a[r:, c])
        if hit.size == 0:
            continue
        p = r + hit[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        others = np.flatnonzero(a[:, c])
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def gf2_rank(mat: np.ndarray) -> int:
    return len(gf2_row_reduce(mat)[1])


def gf2_nullspace(mat: np.ndarray) -> np.ndarray:
    """Basis of the right null space over GF(2), one vector per row."""
    rref, pivots = gf2_row_reduce(mat)
    cols = rref.shape[1]
    free = [c for c in range(cols) if c not in pivots]
    basis = np.zeros((len(free), cols), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        for r, p in enumerate(pivots):
            basis[i, p] = rref[r, f]
    return basis


# ---------------------------------------------------------------------------
# Tanner graph adjacency.

@dataclass(eq=False)
class TannerGraph:
    """Bipartite adjacency of a parity-check matrix.

    Edges are indexed row-major over the matrix: all edges of check 0 first
    (in increasing variable order), then check 1, and so on. Weight files and
    message arrays elsewhere in the package rely on this ordering.
    """

    n: int
    check_count: int
    edge_v: np.ndarray
    edge_c: np.ndarray
    var_edges: tuple[np.ndarray, ...]
    check_edges: tuple[np.ndarray, ...]

    @property
    def edge_count(self) -> int:
        return int(self.edge_v.size)


def tanner_graph(h: np.ndarray) -> TannerGraph:
    h = np.asarray(h, dtype=np.uint8)
    checks, n = h.shape
    ev: list[int] = []
    ec: list[int] = []
    check_edges: list[np.ndarray] = []
    for c in range(checks):
        vs = np.flatnonzero(h[c])
        start = len(ev)
        ev.extend(int(v) for v in vs)
        ec.extend([c] * vs.size)
        check_edges.append(np.arange(start, start + vs.size, dtype=np.int64))
    edge_v = np.array(ev, dtype=np.int64)
    edge_c = np.array(ec, dtype=np.int64)
    var_edges = tuple(
        np.flatnonzero(edge_v == v).astype(np.int64) for v in range(n)
    )
    for arr in (edge_v, edge_c):
        arr.setflags(write=False)
    return TannerGraph(
        n=n,
        check_count=checks,
        edge_v=edge_v,
        edge_c=edge_c,
        var_edges=var_edges,
        check_edges=tuple(check_edges),
    )


# ---------------------------------------------------------------------------
# Code container.

@dataclass(eq=False)
class CodeSpec:
    """A binary linear code with its parity-check and generator matrices.

    ``bch_m``/``bch_t`` record construction provenance; they stay ``None``
    for codes loaded from a parity-check file unless the caller asserts it.
    Arrays are made read-only at construction.
    """

    n: int
    k: int
    h: np.ndarray
    generator: np.ndarray
    name: str = ""
    bch_m: int | None = None
    bch_t: int | None = None
    graph: TannerGraph = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.h = np.ascontiguousarray(self.h, dtype=np.uint8)
        self.generator = np.ascontiguousarray(self.generator, dtype=np.uint8)
        if self.n <= 0 or self.k <= 0 or self.k >= self.n:
            raise CodeError(f"bad dimensions n={self.n}, k={self.k}")
        if self.h.ndim != 2 or self.h.shape[1] != self.n:
            raise CodeError(f"parity-check shape {self.h.shape} does not match n={self.n}")
        if self.generator.shape != (self.k, self.n):
            raise CodeError(
                f"generator shape {self.generator.shape} does not match (k={self.k}, n={self.n})"
            )
        if np.any(self.h > 1) or np.any(self.generator > 1):
            raise CodeError("matrices must be binary")
        if gf2_rank(self.h) != self.n - self.k:
            raise CodeError("parity-check rank does not equal n - k")
        if gf2_rank(self.generator) != self.k:
            raise CodeError("generator rows are linearly dependent")
        if np.any((self.generator @ self.h.T) % 2):
            raise CodeError("generator rows do not satisfy the parity checks")
        if not self.name:
            self.name = f"({self.n},{self.k})"
        self.h.setflags(write=False)
        self.generator.setflags(write=False)
        self.graph = tanner_graph(self.h)

    @property
    def h_rows(self) -> int:
        return int(self.h.shape[0])

    @property
    def rate(self) -> float:
        return self.k / self.n


def build_bch_code(m: int, t: int) -> CodeSpec:
    """Narrow-sense primitive BCH code of length 2^m - 1 correcting t errors.

    The generator matrix is systematic with message bits in the high
    positions; the parity-check matrix is the matching [I | R^T] form.
    """
    if m not in PRIMITIVE_POLYS:
        raise CodeError(f"field exponent m={m} outside supported range 2..8")
    if t < 1:
        raise CodeError(f"designed correction radius must be positive, got {t}")
    n = (1 << m) - 1
    g = _bch_generator_polynomial(m, t)
    r = _poly_deg(g)
    k = n - r
    if k <= 0:
        raise CodeError(
            f"generator polynomial degree {r} leaves no message bits for n={n} (m={m}, t={t})"
        )
    # systematic encoding of unit messages: codeword(x) = x^(r+j) + (x^(r+j) mod g)
    remainders = np.zeros((k, r), dtype=np.uint8)
    for j in range(k):
        remainders[j] = _poly_bits(_poly_mod(1 << (r + j), g), r)
    generator = np.zeros((k, n), dtype=np.uint8)
    generator[:, :r] = remainders
    generator[:, r:] = np.eye(k, dtype=np.uint8)
    h = np.zeros((r, n), dtype=np.uint8)
    h[:, :r] = np.eye(r, dtype=np.uint8)
    h[:, r:] = remainders.T
    return CodeSpec(
        n=n, k=k, h=h, generator=generator,
        name=f"BCH({n},{k})", bch_m=m, bch_t=t,
    )


def syndrome(code: CodeSpec, word: np.ndarray) -> np.ndarray:
    """Parity of each check for a hard word; accepts a single word or a batch."""
    w = np.asarray(word)
    if w.shape[-1] != code.n:
        raise CodeError(f"word length {w.shape[-1]} does not match n={code.n}")
    return (w.astype(np.int64) @ code.h.T.astype(np.int64) % 2).astype(np.uint8)


def enumerate_codewords(code: CodeSpec, chunk: int = 4096):
    """Yield all 2^k codewords exactly once, in message-counter order.

    Refused for large dimensions; ordered-statistics decoding covers those.
    """
    if code.k > ENUMERATION_LIMIT:
        raise CodeError(
            f"k={code.k} would enumerate 2^{code.k} words; "
            "use ordered-statistics decoding instead of exhaustive search"
        )
    total = 1 << code.k
    shifts = np.arange(code.k, dtype=np.uint64)
    gen = code.generator.astype(np.uint8)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        messages = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
        words = (messages @ gen) % 2
        for row in words:
            yield row


# ---------------------------------------------------------------------------
# alist interchange (1-based indices, zero-padded rows allowed).

def format_alist(h: np.ndarray) -> str:
    h = np.asarray(h, dtype=np.uint8)
    checks, n = h.shape
    col_lists = [np.flatnonzero(h[:, v]) + 1 for v in range(n)]
    row_lists = [np.flatnonzero(h[c]) + 1 for c in range(checks)]
    max_col = max((len(c) for c in col_lists), default=0)
    max_row = max((len(r) for r in row_lists), default=0)

    def pad(entries: np.ndarray, width: int) -> str:
        vals = list(entries) + [0] * (width - len(entries))
        return " ".join(str(v) for v in vals)

    lines = [
        f"{n} {checks}",
        f"{max_col} {max_row}",
        " ".join(str(len(c)) for c in col_lists),
        " ".join(str(len(r)) for r in row_lists),
    ]
    lines.extend(pad(c, max_col) for c in col_lists)
    lines.extend(pad(r, max_row) for r in row_lists)
    return "\n".join(lines) + "\n"


def _alist_ints(line: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        raise AlistFormatError(lineno, f"non-integer token in {line!r}") from None


def parse_alist(text: str) -> np.ndarray:
    """Parity-check matrix from alist text. Raises :class:`AlistFormatError`
    with a line number on any structural inconsistency. Blank lines are
    ignored; reported line numbers count the remaining lines."""
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if len(lines) < 4:
        raise AlistFormatError(len(lines) + 1, "truncated header")
    head = _alist_ints(lines[0], 1)
    if len(head) != 2 or min(head) <= 0:
        raise AlistFormatError(1, "expected two positive integers: n checks")
    n, checks = head
    maxes = _alist_ints(lines[1], 2)
    if len(maxes) != 2:
        raise AlistFormatError(2, "expected two integers: max column and row degree")
    max_col, max_row = maxes
    col_deg = _alist_ints(lines[2], 3)
    if len(col_deg) != n:
        raise AlistFormatError(3, f"expected {n} column degrees, found {len(col_deg)}")
    row_deg = _alist_ints(lines[3], 4)
    if len(row_deg) != checks:
        raise AlistFormatError(4, f"expected {checks} row degrees, found {len(row_deg)}")
    if sum(col_deg) != sum(row_deg):
        raise AlistFormatError(4, "column and row degree totals disagree")
    if max(col_deg, default=0) > max_col or max(row_deg, default=0) > max_row:
        raise AlistFormatError(3, "a declared degree exceeds the declared maximum")
    if len(lines) != 4 + n + checks:
        raise AlistFormatError(
            len(lines), f"expected {4 + n + checks} lines total, found {len(lines)}"
        )

    def entries(line: str, lineno: int, degree: int, limit: int, what: str) -> list[int]:
        vals = _alist_ints(line, lineno)
        nz = [v for v in vals if v != 0]
        tail = vals[len(nz):]
        if any(v != 0 for v in tail) or len(nz) != degree:
            raise AlistFormatError(
                lineno, f"{what} lists {len(nz)} indices but declares degree {degree}"
            )
        for v in nz:
            if not 1 <= v <= limit:
                raise AlistFormatError(lineno, f"{what} index {v} out of range 1..{limit}")
        if len(set(nz)) != len(nz):
            raise AlistFormatError(lineno, f"{what} repeats an index")
        return nz

    h = np.zeros((checks, n), dtype=np.uint8)
    for v in range(n):
        lineno = 5 + v
        for c in entries(lines[lineno - 1], lineno, col_deg[v], checks, f"column {v + 1}"):
            h[c - 1, v] = 1
    for c in range(checks):
        lineno = 5 + n + c
        nz = entries(lines[lineno - 1], lineno, row_deg[c], n, f"row {c + 1}")
        if sorted(v - 1 for v in nz) != list(np.flatnonzero(h[c])):
            raise AlistFormatError(lineno, f"row {c + 1} disagrees with the column lists")
    return h


def load_alist(path: str | Path) -> np.ndarray:
    return parse_alist(Path(path).read_text())


def save_alist(h: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(format_alist(h))


def load_parity_matrix(path: str | Path, *, name: str = "",
                       bch_m: int | None = None) -> CodeSpec:
    """CodeSpec from an alist file; k is inferred from the GF(2) rank and the
    generator is a null-space basis of the parity checks.

    ``bch_m`` lets the caller assert that the file checks a primitive BCH
    code of length 2^m - 1 (for example a sparsified variant of a
    constructed matrix), which unlocks the automorphism generators. The
    assertion is verified on first use of the generators.
    """
    h = load_alist(path)
    n = h.shape[1]
    k = n - gf2_rank(h)
    if k <= 0:
        raise CodeError("parity checks admit no nonzero codeword")
    generator = gf2_nullspace(h)
    if bch_m is not None and n != (1 << bch_m) - 1:
        raise CodeError(f"n={n} is not 2^{bch_m} - 1; BCH provenance rejected")
    return CodeSpec(
        n=n, k=k, h=h, generator=generator,
        name=name or Path(path).stem, bch_m=bch_m,
    )
