"""Factored low-rank matrices and the linear-algebra kernels shared by all integrators.

A low-rank state is kept as Y = U S V^T with orthonormal U, V. The kernels here
(basis augmentation, tail-controlled SVD truncation, reassembly, factored
Frobenius distance) are pure functions and deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FactoredMatrix",
    "AugmentedBasis",
    "TruncationResult",
    "orthonormalize_augment",
    "truncate_svd",
    "assemble_truncated",
    "frobenius_distance",
]

# A candidate column is declared linearly dependent when its norm after
# projection falls below this fraction of ||B_new||_F.
DEPENDENCY_RTOL = 1e-12


@dataclass(frozen=True)
class FactoredMatrix:
    """Rank-factored matrix Y = U S V^T with orthonormal U (m x p) and V (n x q).

    S is p x q; p == q for every truncated state, but intermediate states with
    distinct left/right augmented ranks are allowed.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        u, s, v = map(np.asarray, (self.U, self.S, self.V))
        if u.ndim != 2 or s.ndim != 2 or v.ndim != 2:
            raise ValueError("U, S, V must be 2-D arrays")
        if u.shape[1] != s.shape[0] or v.shape[1] != s.shape[1]:
            raise ValueError(
                f"inconsistent factor shapes {u.shape}, {s.shape}, {v.shape}"
            )

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def rank(self) -> int:
        return min(self.S.shape)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def dense(self) -> np.ndarray:
        return self.U @ self.S @ self.V.T

    def norm(self) -> float:
        """Frobenius norm; equals ||S||_F because the bases are orthonormal."""
        return float(np.linalg.norm(self.S))

    def validate(self, atol: float = 1e-12) -> None:
        """Raise if the orthonormality invariants are violated beyond atol."""
        p, q = self.S.shape
        for name, b, k in (("U", self.U, p), ("V", self.V, q)):
            gram_err = np.linalg.norm(b.T @ b - np.eye(k))
            if gram_err > atol:
                raise ValueError(f"{name} not orthonormal: ||B^T B - I|| = {gram_err:.3e}")
        if not (1 <= self.rank <= min(self.m, self.n)):
            raise ValueError(f"rank {self.rank} out of range for shape {self.shape}")

    @classmethod
    def from_dense(cls, a: np.ndarray, rank: int) -> "FactoredMatrix":
        """Best rank-`rank` approximation of a dense matrix (truncated SVD)."""
        a = np.asarray(a, dtype=float)
        u, sigma, vt = np.linalg.svd(a, full_matrices=False)
        r = min(rank, sigma.size)
        return cls(u[:, :r], np.diag(sigma[:r]), vt[:r, :].T)


@dataclass(frozen=True)
class AugmentedBasis:
    """Orthonormal basis (B_old, new directions, zero padding) of width old + candidates.

    The first `old_rank` columns are the previous basis, bitwise. Columns at
    indices >= `effective_rank` are exact zeros (padding for candidates that
    were linearly dependent on the span built so far).
    """

    B_hat: np.ndarray
    old_rank: int
    effective_rank: int

    @property
    def B_tilde(self) -> np.ndarray:
        """New-direction block (includes the zero padding)."""
        return self.B_hat[:, self.old_rank:]

    @property
    def width(self) -> int:
        return self.B_hat.shape[1]


@dataclass(frozen=True)
class TruncationResult:
    """Truncated-SVD cores: U1 (p x r1), diagonal S1 (r1 x r1), V1 (q x r1)."""

    U1: np.ndarray
    S1: np.ndarray
    V1: np.ndarray
    rank: int
    discarded_tail: float

    @property
    def singular_values(self) -> np.ndarray:
        return np.diag(self.S1)


def orthonormalize_augment(b_old: np.ndarray, b_new: np.ndarray) -> AugmentedBasis:
    """Extend an orthonormal basis by the independent directions of `b_new`.

    Candidate columns are processed left to right with two projection passes
    (classical Gram-Schmidt, repeated once for orthogonality well below 1e-12).
    Each accepted column is sign-fixed so its largest-magnitude entry is
    positive, making the output deterministic. Dependent candidates become
    trailing zero columns, so the result always has width
    b_old.shape[1] + b_new.shape[1].
    """
    b_old = np.asarray(b_old, dtype=float)
    b_new = np.asarray(b_new, dtype=float)
    if b_old.ndim != 2 or b_new.ndim != 2:
        raise ValueError("expected 2-D bases")
    if b_old.shape[0] != b_new.shape[0]:
        raise ValueError(
            f"row count mismatch: {b_old.shape[0]} vs {b_new.shape[0]}"
        )
    m, r = b_old.shape
    w = b_new.shape[1]
    tol = DEPENDENCY_RTOL * np.linalg.norm(b_new)

    basis = b_old
    accepted: list[np.ndarray] = []
    for j in range(w):
        v = b_new[:, j].copy()
        for _ in range(2):
            v -= basis @ (basis.T @ v)
        nrm = np.linalg.norm(v)
        if nrm <= tol:
            continue
        v /= nrm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        accepted.append(v)
        basis = np.column_stack([basis, v])

    b_hat = np.zeros((m, r + w))
    b_hat[:, :r] = b_old
    for i, v in enumerate(accepted):
        b_hat[:, r + i] = v
    return AugmentedBasis(B_hat=b_hat, old_rank=r, effective_rank=r + len(accepted))


def truncate_svd(
    s_hat: np.ndarray,
    theta: float,
    r_floor: int = 1,
    r_cap: int | None = None,
) -> TruncationResult:
    """Truncate the SVD of a small coefficient matrix to tolerance `theta`.

    Keeps the minimal rank r1 whose discarded singular values satisfy
    (sum_{j>r1} sigma_j^2)^(1/2) <= theta, then clamps r1 to at least
    `r_floor` (and at most `r_cap`, when given). The returned cores are the
    best rank-r1 approximation of `s_hat` in the Frobenius norm, and
    `discarded_tail` is exactly the root-sum-square of the dropped values.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    if s_hat.ndim != 2:
        raise ValueError("expected a 2-D coefficient matrix")
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    k = min(s_hat.shape)
    if not (1 <= r_floor <= k):
        raise ValueError(f"r_floor {r_floor} out of range [1, {k}]")

    p, sigma, qt = np.linalg.svd(s_hat, full_matrices=False)
    # suffix[j] = sum of sigma[j:]**2, so keeping j values discards sqrt(suffix[j]).
    suffix = np.concatenate([np.cumsum(sigma[::-1] ** 2)[::-1], [0.0]])
    r1 = k
    for j in range(k + 1):
        if np.sqrt(suffix[j]) <= theta:
            r1 = j
            break
    r1 = max(r1, r_floor)
    if r_cap is not None:
        r1 = max(min(r1, r_cap), 1)
    tail = float(np.sqrt(suffix[r1]))
    return TruncationResult(
        U1=p[:, :r1],
        S1=np.diag(sigma[:r1]),
        V1=qt[:r1, :].T,
        rank=r1,
        discarded_tail=tail,
    )


def assemble_truncated(
    u_hat: AugmentedBasis, v_hat: AugmentedBasis, cores: TruncationResult
) -> FactoredMatrix:
    """Map truncation cores back through the augmented bases: U1 = U_hat P1 etc."""
    if u_hat.width != cores.U1.shape[0] or v_hat.width != cores.V1.shape[0]:
        raise ValueError(
            f"core shapes {cores.U1.shape}, {cores.V1.shape} do not match basis "
            f"widths {u_hat.width}, {v_hat.width}"
        )
    return FactoredMatrix(
        U=u_hat.B_hat @ cores.U1,
        S=cores.S1,
        V=v_hat.B_hat @ cores.V1,
    )


def frobenius_distance(a: FactoredMatrix, b: FactoredMatrix) -> float:
    """Frobenius distance ||dense(a) - dense(b)||_F without densifying.

    The difference is [Ua, Ub] blockdiag(Sa, -Sb) [Va, Vb]^T; QR-compressing the
    stacked bases reduces the norm to that of a small core, which stays accurate
    even when a and b nearly coincide.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ru = np.linalg.qr(np.column_stack([a.U, b.U]), mode="r")
    rv = np.linalg.qr(np.column_stack([a.V, b.V]), mode="r")
    pa, qa = a.S.shape
    core = np.zeros((pa + b.S.shape[0], qa + b.S.shape[1]))
    core[:pa, :qa] = a.S
    core[pa:, qa:] = -b.S
    return float(np.linalg.norm(ru @ core @ rv.T))
