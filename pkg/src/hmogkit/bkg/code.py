"""Normalized generalized Reed-Solomon codes over a prime field, decoded in
the Lee metric.

The [n, l] code over Z_p uses locators 1..n. The parity matrix rows are
H[m][i] = i^m for m = 0..n-l-1; the generator rows are G[r][i] = v_i * i^r
for r = 0..l-1 with column multipliers v_i = (prod_{j != i} (i - j))^-1,
which makes G a basis of the null space of H^T. The minimum Lee distance
is 2(n-l), so every error of Lee weight up to n-l-1 is uniquely
correctable.

Two decoders are provided: an exhaustive nearest-codeword search (the
oracle, feasible for p^l up to about 1e6) and the production decoder built
from syndrome power sums and one extended-Euclidean pass, O(n^2) field
operations per word plus the syndrome product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import (
    centered,
    inv_mod,
    is_prime,
    lee_weight_total,
    poly_deg,
    poly_divide_linear,
    poly_divmod,
    poly_eval,
    poly_mul,
    poly_scale,
    poly_sub,
    poly_trim,
)


class CodeConstructionError(ValueError):
    """Construction self-checks failed; the parameters are unusable."""


class DecodeFailure(Exception):
    """No codeword within the guaranteed correction radius."""


@dataclass(frozen=True)
class CodeParams:
    n: int
    l: int
    p: int
    generator: np.ndarray         # (l, n)
    parity: np.ndarray            # (n - l, n)
    multipliers: np.ndarray       # (n,) column multipliers v_i

    @property
    def radius(self) -> int:
        """Guaranteed Lee-metric correction radius n - l - 1."""
        return self.n - self.l - 1

    @property
    def zero_locator(self) -> bool:
        """True when n == p, where position n has locator 0 mod p."""
        return self.n == self.p


def _rank_mod_p(matrix: np.ndarray, p: int) -> int:
    m = matrix.astype(np.int64).copy() % p
    rows, cols = m.shape
    rank = 0
    for col in range(cols):
        pivot = None
        for row in range(rank, rows):
            if m[row, col] % p:
                pivot = row
                break
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        m[rank] = (m[rank] * inv_mod(int(m[rank, col]), p)) % p
        for row in range(rows):
            if row != rank and m[row, col]:
                m[row] = (m[row] - m[row, col] * m[rank]) % p
        rank += 1
        if rank == rows:
            break
    return rank


def grs_build(n: int, l: int, p: int) -> CodeParams:
    """Build the [n, l] code; aborts unless G H^T = 0 and rank(G) = l."""
    if not is_prime(p):
        raise CodeConstructionError(f"p = {p} is not prime")
    if not 1 <= l < n:
        raise CodeConstructionError(f"need 1 <= l < n, got l={l}, n={n}")
    if n > p:
        raise CodeConstructionError(f"need n <= p, got n={n}, p={p}")
    r = n - l
    parity = np.array([[pow(i, m, p) for i in range(1, n + 1)] for m in range(r)],
                      dtype=np.int64)
    multipliers = np.empty(n, dtype=np.int64)
    for i in range(1, n + 1):
        prod = 1
        for j in range(1, n + 1):
            if j != i:
                prod = (prod * (i - j)) % p
        multipliers[i - 1] = inv_mod(prod, p)
    generator = np.array([[(multipliers[i - 1] * pow(i, row, p)) % p
                           for i in range(1, n + 1)] for row in range(l)],
                         dtype=np.int64)
    if np.any((generator @ parity.T) % p):
        raise CodeConstructionError("generator rows are not in the null space of H^T")
    if _rank_mod_p(generator, p) != l:
        raise CodeConstructionError("generator matrix is rank deficient")
    return CodeParams(n=n, l=l, p=p, generator=generator, parity=parity,
                      multipliers=multipliers)


def encode(message, params: CodeParams) -> np.ndarray:
    message = np.asarray(message, dtype=np.int64) % params.p
    if message.shape != (params.l,):
        raise ValueError(f"message must have length {params.l}")
    return (message @ params.generator) % params.p


# ---------------------------------------------------------------------------
# exhaustive oracle decoder
# ---------------------------------------------------------------------------

_BRUTE_LIMIT = 1_000_000
_codebook_cache: dict[tuple[int, int, int], np.ndarray] = {}


def codebook(params: CodeParams) -> np.ndarray:
    """All p^l codewords, cached per parameter set."""
    key = (params.n, params.l, params.p)
    if key not in _codebook_cache:
        count = params.p ** params.l
        if count > _BRUTE_LIMIT:
            raise ValueError(f"codebook of {count} words is too large to enumerate")
        grids = np.meshgrid(*[np.arange(params.p)] * params.l, indexing="ij")
        messages = np.stack([g.ravel() for g in grids], axis=1)
        _codebook_cache[key] = (messages @ params.generator) % params.p
    return _codebook_cache[key]


def decode_brute(word, params: CodeParams) -> np.ndarray:
    """Nearest codeword within the correction radius by full enumeration."""
    word = np.asarray(word, dtype=np.int64) % params.p
    book = codebook(params)
    diff = (word - book) % params.p
    dist = np.minimum(diff, params.p - diff).sum(axis=1)
    best = int(np.argmin(dist))
    if int(dist[best]) > params.radius:
        raise DecodeFailure(f"no codeword within Lee radius {params.radius}")
    return book[best].copy()


# ---------------------------------------------------------------------------
# production decoder: power-sum syndromes + extended Euclidean pass
# ---------------------------------------------------------------------------

def _power_sum_series(syndromes: list[int], r: int, p: int) -> list[int]:
    """A(x) with sigma(x) = A(x) * eta(x) mod x^r for the split error
    locator polynomials, via the Newton-identity recurrence
    m*A_m = -sum_{i=1..m} S_i A_{m-i}."""
    a = [1] + [0] * (r - 1)
    for m in range(1, r):
        acc = 0
        for i in range(1, m + 1):
            acc = (acc + syndromes[i] * a[m - i]) % p
        a[m] = (-acc * inv_mod(m, p)) % p
    return poly_trim(a)


def _convergents(a_poly: list[int], r: int, p: int):
    """(remainder, cofactor) pairs of the extended Euclidean algorithm on
    (x^r, A); every minimal rational approximation of A appears here."""
    r_prev = [0] * r + [1]
    r_cur = list(a_poly)
    t_prev: list[int] = []
    t_cur: list[int] = [1]
    yield r_cur, t_cur
    while r_cur:
        q, rem = poly_divmod(r_prev, r_cur, p)
        t_next = poly_sub(t_prev, poly_mul(q, t_cur, p), p)
        r_prev, r_cur = r_cur, rem
        t_prev, t_cur = t_cur, t_next
        if r_cur:
            yield r_cur, t_cur


def _extract_multiplicities(poly: list[int], locators: list[int],
                            p: int) -> dict[int, int] | None:
    """Per-locator root multiplicities of poly; None when any root lies
    outside the locator set."""
    mults: dict[int, int] = {}
    for idx, alpha in enumerate(locators):
        x0 = inv_mod(alpha, p)
        while poly_eval(poly, x0, p) == 0:
            poly = poly_divide_linear(poly, alpha, p)
            mults[idx] = mults.get(idx, 0) + 1
    if poly_deg(poly) > 0:
        return None
    return mults


def decode(word, params: CodeParams) -> np.ndarray:
    """Correct any error of Lee weight <= n - l - 1; raise DecodeFailure
    otherwise. Never returns a non-codeword."""
    word = np.asarray(word, dtype=np.int64) % params.p
    if word.shape != (params.n,):
        raise ValueError(f"word must have length {params.n}")
    p = params.p
    r = params.n - params.l
    tau = params.radius
    syndromes = [int(s) for s in (params.parity @ word) % p]
    if not any(syndromes):
        return word.copy()

    # locators with nonzero value; when n == p the last position has
    # locator 0 and is reconstructed from S_0 afterwards
    n_loc = params.n - 1 if params.zero_locator else params.n
    locators = [(i % p) for i in range(1, n_loc + 1)]
    half = (p - 1) // 2

    a_poly = _power_sum_series(syndromes, r, p)
    for sigma, eta in _convergents(a_poly, r, p):
        if not sigma or not eta:
            continue
        if poly_deg(sigma) + poly_deg(eta) > tau:
            continue
        while sigma[0] == 0 and eta[0] == 0:
            sigma = sigma[1:]
            eta = eta[1:]
        if not sigma or not eta or sigma[0] == 0 or eta[0] == 0:
            continue
        scale = inv_mod(sigma[0], p)
        sigma = poly_scale(sigma, scale, p)
        eta = poly_scale(eta, scale, p)
        if eta[0] != 1:
            continue
        plus = _extract_multiplicities(sigma, locators, p)
        minus = _extract_multiplicities(eta, locators, p)
        if plus is None or minus is None:
            continue
        if any(m > half for m in plus.values()) or any(m > half for m in minus.values()):
            continue
        error = np.zeros(params.n, dtype=np.int64)
        signed_total = 0
        for idx, m in plus.items():
            error[idx] = (error[idx] + m) % p
            signed_total += m
        for idx, m in minus.items():
            error[idx] = (error[idx] - m) % p
            signed_total -= m
        if params.zero_locator:
            tail = centered(syndromes[0] - signed_total, p)
            error[params.n - 1] = tail % p
        if lee_weight_total(error, p) > tau:
            continue
        if np.any((params.parity @ error - np.array(syndromes)) % p):
            continue
        return (word - error) % p
    raise DecodeFailure(f"no codeword within Lee radius {tau}")
