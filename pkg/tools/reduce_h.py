"""One-off generator of the reduced parity-check data files.

Searches over GF(2) row operations (which preserve the row space, hence the
code) for a parity basis with fewer short cycles and no degree-1 columns,
then writes the winner as alist. The package only ever *loads* these files.

Usage: python3 tools/reduce_h.py
"""

from __future__ import annotations

import sys
from itertools import combinations
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from permbp.codes import build_bch_code, gf2_rank, save_alist  # noqa: E402


def four_cycles(h: np.ndarray) -> int:
    total = 0
    for a, b in combinations(range(h.shape[0]), 2):
        shared = int((h[a] & h[b]).sum())
        total += shared * (shared - 1) // 2
    return total


def score(h: np.ndarray) -> tuple:
    col = h.sum(axis=0)
    return (
        int((col <= 1).sum()),      # starving variable nodes: worst offence
        four_cycles(h),
        int(h.sum()),               # fewer edges: cheaper and sparser
        int(col.max()),
    )


def reduce_rows(h: np.ndarray, rng: np.random.Generator,
                sweeps: int = 400) -> np.ndarray:
    best = h.copy()
    best_score = score(best)
    cur = best.copy()
    cur_score = best_score
    rows = h.shape[0]
    for sweep in range(sweeps):
        improved = False
        for i in range(rows):
            for j in range(rows):
                if i == j:
                    continue
                cand = cur.copy()
                cand[i] ^= cand[j]
                if not cand[i].any():
                    continue
                cand_score = score(cand)
                if cand_score < cur_score:
                    cur, cur_score = cand, cand_score
                    improved = True
        if cur_score < best_score:
            best, best_score = cur.copy(), cur_score
        if not improved:
            # random kick: apply a few arbitrary row additions and retry
            cur = best.copy()
            for _ in range(3):
                i, j = rng.choice(rows, size=2, replace=False)
                cur[i] ^= cur[j]
                if not cur[i].any():
                    cur[i] = best[i]
            cur_score = score(cur)
    return best


def main() -> None:
    out_dir = Path(__file__).resolve().parent.parent / "data"
    out_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(2024)
    for m, t in ((5, 3), (6, 3)):
        code = build_bch_code(m, t)
        h0 = code.h.astype(np.uint8)
        print(f"{code.name}: start score {score(h0)}")
        h = reduce_rows(h0, rng)
        assert gf2_rank(h) == gf2_rank(h0) == h.shape[0]
        # row spaces must agree: every reduced row is in the old row space
        stacked = np.vstack([h0, h])
        assert gf2_rank(stacked) == gf2_rank(h0)
        print(f"{code.name}: final score {score(h)}")
        path = out_dir / f"bch_{code.n}_{code.k}_reduced.alist"
        save_alist(h, path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
