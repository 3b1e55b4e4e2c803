"""Linear algebra on the constant coefficient tensor of a second-order system.

The tensor ``A[alpha, i, beta, j]`` is stored with shape ``(N, n, N, n)`` and is
identified with a symmetric ``Nn x Nn`` matrix through the flattening
``(alpha, i) -> alpha * n + i``.  Matrices ``Q`` in ``R^{N x n}`` are flattened
the same way, so ``Q.ravel()`` is the vector on which that matrix acts.

The range of the matrix (``pi_basis``) and the span of the left factors of the
rank-one matrices it contains (``sigma_basis``) decide where the data and the
solution of the degenerate problem live.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import NotCertified, ShapeMismatch, TensorValidationError

ZERO_EIG_TOL = 1e-10
SYMMETRY_TOL = 1e-12
RANK_ONE_TOL = 1e-8
POLISH_TOL = 1e-2


def _scale(matrix: np.ndarray) -> float:
    return max(1.0, float(np.linalg.norm(matrix)))


@dataclass(frozen=True)
class QuadraticForm:
    """Coefficient tensor with target dimension ``N`` and domain dimension ``n``."""

    N: int
    n: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.N, self.n, self.N, self.n):
            raise ShapeMismatch(
                f"entries have shape {entries.shape}, expected "
                f"{(self.N, self.n, self.N, self.n)}"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_array(cls, entries) -> "QuadraticForm":
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 4 or entries.shape[:2] != entries.shape[2:]:
            raise ShapeMismatch(f"cannot read shape {entries.shape} as (N, n, N, n)")
        return cls(entries.shape[0], entries.shape[1], entries)

    @classmethod
    def from_matrix(cls, matrix, N: int, n: int) -> "QuadraticForm":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (N * n, N * n):
            raise ShapeMismatch(f"matrix shape {matrix.shape} != {(N * n, N * n)}")
        return cls(N, n, matrix.reshape(N, n, N, n))

    @property
    def matrix(self) -> np.ndarray:
        return self.entries.reshape(self.N * self.n, self.N * self.n)

    def quadratic(self, Q) -> float:
        """Value of ``sum A_{aibj} Q_{ai} Q_{bj}``."""
        q = np.asarray(Q, dtype=float).ravel()
        return float(q @ self.matrix @ q)


@dataclass
class ValidationResult:
    ok: bool
    symmetry_defect: float
    min_eigenvalue: float
    violations: list = field(default_factory=list)


def validate(A: QuadraticForm) -> ValidationResult:
    """Check symmetry and positive semidefiniteness of ``A``."""
    if A.entries.shape != (A.N, A.n, A.N, A.n):
        raise ShapeMismatch(f"entries shape {A.entries.shape} inconsistent with (N, n)")
    mat = A.matrix
    defect = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    sym = 0.5 * (mat + mat.T)
    min_eig = float(np.linalg.eigvalsh(sym)[0]) if mat.size else 0.0
    violations = []
    if defect > SYMMETRY_TOL:
        violations.append(f"symmetry defect {defect:.3e} exceeds {SYMMETRY_TOL:g}")
    if min_eig < -ZERO_EIG_TOL * _scale(mat):
        violations.append(f"minimum eigenvalue {min_eig:.3e} is negative")
    return ValidationResult(not violations, defect, min_eig, violations)


def require_valid(A: QuadraticForm) -> None:
    result = validate(A)
    if not result.ok:
        raise TensorValidationError("; ".join(result.violations), result.violations)


@dataclass
class SpectralSplit:
    null_basis: np.ndarray  # (k0, Nn), orthonormal rows
    pi_basis: np.ndarray  # (k, Nn), orthonormal rows
    nu: float
    eigenvalues: np.ndarray


def spectral_split(A: QuadraticForm) -> SpectralSplit:
    """Split ``R^{Nn}`` into the nullspace of ``A`` and its orthogonal complement.

    Eigenvalues at or below ``1e-10 * max(1, |A|_F)`` are treated as zero.
    ``nu`` is the smallest eigenvalue above that threshold (0 when ``A = 0``).
    """
    mat = A.matrix
    w, V = np.linalg.eigh(0.5 * (mat + mat.T))
    positive = w > ZERO_EIG_TOL * _scale(mat)
    nu = float(w[positive].min()) if positive.any() else 0.0
    return SpectralSplit(V[:, ~positive].T.copy(), V[:, positive].T.copy(), nu, w)


def projector(basis: np.ndarray, dim: int) -> np.ndarray:
    """Orthogonal projector onto the row span of an orthonormal ``basis``."""
    basis = np.asarray(basis, dtype=float).reshape(-1, dim)
    return basis.T @ basis


def orthonormalize(vectors: np.ndarray, dim: int, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal rows spanning the rows of ``vectors``."""
    vectors = np.asarray(vectors, dtype=float).reshape(-1, dim)
    if vectors.shape[0] == 0:
        return np.zeros((0, dim))
    U, s, Vt = np.linalg.svd(vectors, full_matrices=False)
    keep = s > tol * max(1.0, s[0])
    basis = Vt[keep]
    # deterministic orientation: largest entry of each row positive
    signs = np.sign(basis[np.arange(basis.shape[0]), np.argmax(np.abs(basis), axis=1)])
    return basis * signs[:, None]


class Certification(str, enum.Enum):
    CERTIFIED = "Certified"
    UNKNOWN = "Unknown"


def _top_eigvec(M: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Top eigenvector of ``M``; within a degenerate top eigenspace, the one nearest ``current``."""
    w, V = np.linalg.eigh(M)
    top = V[:, w >= w[-1] - 1e-10 * max(1.0, abs(w[-1]))]
    v = top @ (top.T @ current)
    norm = np.linalg.norm(v)
    return v / norm if norm > 1e-8 else V[:, -1]


def _rank_one_residual(basis3: np.ndarray, eta: np.ndarray, a: np.ndarray) -> float:
    X = np.outer(eta, a)
    coeffs = np.einsum("kpq,pq->k", basis3, X)
    return float(np.linalg.norm(X - np.einsum("k,kpq->pq", coeffs, basis3)))


def _alternate(basis3, weights, eta, a, iterations, tol):
    """Maximise ``sum_k w_k (eta . B_k a)^2`` over unit ``eta``, ``a`` by alternation."""
    prev = np.inf
    for _ in range(iterations):
        Ba = np.einsum("kpq,q->kp", basis3, a)
        eta = _top_eigvec((Ba.T * weights) @ Ba, eta)
        Bt = np.einsum("kpq,p->kq", basis3, eta)
        a = _top_eigvec((Bt.T * weights) @ Bt, a)
        res = _rank_one_residual(basis3, eta, a)
        if abs(prev - res) <= tol or res <= tol:
            break
        prev = res
    return eta, a


def _polish(basis3, eta, a):
    """Gauss-Newton refinement of a near rank-one candidate towards the subspace."""
    k, N, n = basis3.shape
    B = basis3.reshape(k, N * n)

    def residual(z):
        x = np.outer(z[:N], z[N:]).ravel()
        return np.concatenate([x - B.T @ (B @ x), [z[:N] @ z[:N] - 1.0, z[N:] @ z[N:] - 1.0]])

    sol = optimize.least_squares(residual, np.concatenate([eta, a]), xtol=1e-15, ftol=1e-15,
                                 gtol=1e-15, max_nfev=200)
    return sol.x[:N], sol.x[N:]


def _canonical_sign(eta, a):
    k = int(np.argmax(np.abs(eta)))
    if eta[k] < 0:
        return -eta, -a
    return eta, a


def rank_one_certify(
    pi_basis,
    N: int,
    n: int,
    restarts: int = 32,
    iterations: int = 200,
    tol: float = 1e-12,
    seed: int = 0,
):
    """Search for rank-one matrices ``eta (x) a`` spanning the subspace ``pi_basis``.

    Coordinate pairs ``(e^alpha, e^i)`` are tried first, then ``restarts``
    random starts of an alternating maximisation of ``|P (eta (x) a)|``.  Half
    of the random starts up-weight the part of the subspace not yet covered by
    generators, which steers the search away from directions already found.

    Returns ``(generators, certification)``.  ``Certification.UNKNOWN`` means the
    search did not find a spanning family; it is not a proof that none exists.
    """
    dim = N * n
    basis = np.asarray(pi_basis, dtype=float).reshape(-1, dim)
    k = basis.shape[0]
    if k == 0:
        return [], Certification.CERTIFIED
    basis3 = basis.reshape(k, N, n)
    rng = np.random.default_rng(seed)

    generators: list[tuple[np.ndarray, np.ndarray]] = []
    found = np.zeros((0, dim))

    def consider(eta, a):
        nonlocal found
        eta = eta / np.linalg.norm(eta)
        a = a / np.linalg.norm(a)
        if _rank_one_residual(basis3, eta, a) > RANK_ONE_TOL:
            return
        x = np.outer(eta, a).ravel()
        new = x - found.T @ (found @ x)
        norm = np.linalg.norm(new)
        if norm > RANK_ONE_TOL:
            generators.append(_canonical_sign(eta, a))
            found = np.vstack([found, new / norm])

    for alpha in range(N):
        for i in range(n):
            if len(generators) == k:
                break
            consider(np.eye(N)[alpha], np.eye(n)[i])

    uniform = np.ones(k)
    for r in range(restarts):
        if len(generators) == k:
            break
        eta = rng.standard_normal(N)
        a = rng.standard_normal(n)
        eta /= np.linalg.norm(eta)
        a /= np.linalg.norm(a)
        if r % 2 == 0 and len(generators) > 0:
            # rotate the basis so the uncovered part of the subspace is explicit
            inside = basis @ found.T @ found
            rest = orthonormalize(basis - inside, dim)
            rotated = np.vstack([found, rest]).reshape(-1, N, n)
            w = np.concatenate([np.ones(found.shape[0]), 2.0 * np.ones(rest.shape[0])])
            eta, a = _alternate(rotated, w, eta, a, iterations, tol)
        eta, a = _alternate(basis3, uniform, eta, a, iterations, tol)
        if RANK_ONE_TOL < _rank_one_residual(basis3, eta, a) < POLISH_TOL:
            eta, a = _polish(basis3, eta, a)
        consider(eta, a)

    cert = Certification.CERTIFIED if len(generators) == k else Certification.UNKNOWN
    return generators, cert


def sigma_from_generators(generators, certification=Certification.CERTIFIED, N=None):
    """Orthonormal basis (rows) of the span of the left factors ``eta``."""
    if Certification(certification) is not Certification.CERTIFIED:
        raise NotCertified("rank-one spanning of the range is not certified")
    if not generators:
        return np.zeros((0, N or 0))
    etas = np.array([eta for eta, _ in generators])
    return orthonormalize(etas, etas.shape[1])


def lh_constant(A: QuadraticForm, restarts: int = 64, iterations: int = 200, seed: int = 0) -> float:
    """Smallest value of ``A(eta (x) a, eta (x) a)`` found over unit ``eta``, ``a``.

    Alternates between the smallest eigenvector in ``eta`` (for fixed ``a``) and
    in ``a`` (for fixed ``eta``).  The result is attained by an explicit pair, so
    it is an upper bound on the true Legendre-Hadamard constant.
    """
    T = A.entries
    N, n = A.N, A.n
    rng = np.random.default_rng(seed)
    starts = [np.eye(n)[i] for i in range(n)]
    starts += [rng.standard_normal(n) for _ in range(restarts)]
    best = np.inf
    for a in starts:
        a = a / np.linalg.norm(a)
        prev = np.inf
        for _ in range(iterations):
            C = np.einsum("aibj,i,j->ab", T, a, a)
            w, V = np.linalg.eigh(0.5 * (C + C.T))
            eta = V[:, 0]
            D = np.einsum("aibj,a,b->ij", T, eta, eta)
            w, V = np.linalg.eigh(0.5 * (D + D.T))
            a = V[:, 0]
            val = float(w[0])
            if abs(prev - val) <= 1e-14:
                break
            prev = val
        best = min(best, val)
    return best


@dataclass
class SHDecomposition:
    B_list: np.ndarray  # (m, N, N)
    A_list: np.ndarray  # (m, n, n)

    def __post_init__(self):
        self.B_list = np.asarray(self.B_list, dtype=float)
        self.A_list = np.asarray(self.A_list, dtype=float)
        B, Am = self.B_list, self.A_list
        if B.ndim != 3 or Am.ndim != 3 or B.shape[1] != B.shape[2] or Am.shape[1] != Am.shape[2]:
            raise ShapeMismatch("SH factors must be stacks of square matrices")
        if B.shape[0] != Am.shape[0]:
            raise ShapeMismatch(f"{B.shape[0]} B factors but {Am.shape[0]} A factors")


@dataclass
class SHVerdict:
    holds: bool
    failed_clauses: tuple = ()
    reasons: list = field(default_factory=list)
    common_line: Optional[np.ndarray] = None

    def __bool__(self):
        return self.holds


def _psd_range(M, tol):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    scale = _scale(M)
    return w, V, w.min() >= -tol * scale, V[:, w > tol * scale]


def check_sh(B_list, A_list, tol: float = 1e-10) -> SHVerdict:
    """Verify a supplied structural decomposition ``A = sum_g B^g (x) A^g``.

    Clause ``a``: every ``A^g`` is PSD and the eigenspaces of the nonzero ones
    at their smallest positive eigenvalue share a common line.  Zero factors
    are skipped.  Clause ``b``: every ``B^g`` is PSD and their ranges are
    mutually orthogonal.
    """
    d = SHDecomposition(B_list, A_list)
    N = d.B_list.shape[1]
    if d.B_list.shape[0] != N:
        raise ShapeMismatch(f"expected {N} terms for N={N}, got {d.B_list.shape[0]}")
    n = d.A_list.shape[1]
    failed, reasons = [], []

    line = None
    complement = np.zeros((n, n))
    clause_a = True
    for g, Ag in enumerate(d.A_list):
        w, V, psd, _ = _psd_range(Ag, tol)
        if not psd:
            clause_a = False
            reasons.append(f"A^{g + 1} is not positive semidefinite")
            continue
        pos = w > tol * _scale(Ag)
        if not pos.any():
            continue
        lam = w[pos].min()
        E = V[:, np.abs(w - lam) <= tol * _scale(Ag)]
        complement += np.eye(n) - E @ E.T
    if clause_a:
        cw, cV = np.linalg.eigh(complement)
        common = cV[:, cw <= 1e-8]
        if common.shape[1] == 0:
            clause_a = False
            reasons.append("top eigenspaces of the A factors have no common line")
        else:
            line = common[:, 0]
    if not clause_a:
        failed.append("a")

    clause_b = True
    ranges = []
    for g, Bg in enumerate(d.B_list):
        _, _, psd, R = _psd_range(Bg, tol)
        if not psd:
            clause_b = False
            reasons.append(f"B^{g + 1} is not positive semidefinite")
        ranges.append(R)
    for g in range(N):
        for h in range(g + 1, N):
            overlap = np.linalg.norm(ranges[g].T @ ranges[h]) if ranges[g].size and ranges[h].size else 0.0
            if overlap > tol:
                clause_b = False
                reasons.append(f"ranges of B^{g + 1} and B^{h + 1} are not orthogonal")
    if not clause_b:
        failed.append("b")

    return SHVerdict(not failed, tuple(failed), reasons, line if not failed else None)


def assemble_from_sh(d: SHDecomposition) -> QuadraticForm:
    entries = np.einsum("gab,gij->aibj", d.B_list, d.A_list)
    return QuadraticForm.from_array(entries)


def image_in_sigma_check(A: QuadraticForm, sigma_basis, trials: int = 100, seed: int = 0) -> float:
    """Worst relative distance from ``Sigma`` of ``sum A_{aibj} X_{bij}`` over random ``X``."""
    rng = np.random.default_rng(seed)
    P = projector(sigma_basis, A.N)
    worst = 0.0
    for _ in range(trials):
        X = rng.standard_normal((A.N, A.n, A.n))
        eta = np.einsum("aibj,bij->a", A.entries, X)
        norm = np.linalg.norm(eta)
        if norm == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(eta - P @ eta) / norm))
    return worst


@dataclass
class SubspacePair:
    pi_basis: np.ndarray
    sigma_basis: Optional[np.ndarray]
    rank_one_generators: list
    certified: Certification

    @property
    def is_certified(self) -> bool:
        return self.certified is Certification.CERTIFIED

    def require_certified(self) -> None:
        if not self.is_certified:
            raise NotCertified("rank-one spanning of the range is not certified")


class SHStatus(str, enum.Enum):
    HOLDS = "Holds"
    FAILS_CHECKED = "FailsChecked"
    NOT_ATTEMPTED = "NotAttempted"


@dataclass
class TensorReport:
    is_symmetric: bool
    min_eigenvalue: float
    nu: float
    nullspace_dim: int
    lh_constant: float
    pi_sigma: SubspacePair
    sh_status: SHStatus
    sh_verdict: Optional[SHVerdict] = None
    validation: Optional[ValidationResult] = None

    def to_dict(self) -> dict:
        ps = self.pi_sigma
        out = {
            "valid": bool(self.validation.ok) if self.validation else True,
            "violations": list(self.validation.violations) if self.validation else [],
            "is_symmetric": self.is_symmetric,
            "min_eigenvalue": self.min_eigenvalue,
            "nu": self.nu,
            "nullspace_dim": self.nullspace_dim,
            "lh_constant": self.lh_constant,
            "pi_dim": int(ps.pi_basis.shape[0]),
            "pi_basis": ps.pi_basis.tolist(),
            "certified": ps.certified.value,
            "rank_one_generators": [
                {"eta": eta.tolist(), "a": a.tolist()} for eta, a in ps.rank_one_generators
            ],
            "sigma_basis": None if ps.sigma_basis is None else ps.sigma_basis.tolist(),
            "sh_status": self.sh_status.value,
        }
        if self.sh_verdict is not None:
            out["sh_failed_clauses"] = list(self.sh_verdict.failed_clauses)
            out["sh_reasons"] = list(self.sh_verdict.reasons)
        return out


def subspace_pair(A: QuadraticForm, seed: int = 0) -> SubspacePair:
    split = spectral_split(A)
    generators, cert = rank_one_certify(split.pi_basis, A.N, A.n, seed=seed)
    sigma = None
    if cert is Certification.CERTIFIED:
        sigma = sigma_from_generators(generators, cert, N=A.N)
    return SubspacePair(split.pi_basis, sigma, generators, cert)


def analyze_tensor(A: QuadraticForm, sh: Optional[SHDecomposition] = None, seed: int = 0) -> TensorReport:
    """Run every tensor check and gather the results."""
    result = validate(A)
    split = spectral_split(A)
    generators, cert = rank_one_certify(split.pi_basis, A.N, A.n, seed=seed)
    sigma = sigma_from_generators(generators, cert, N=A.N) if cert is Certification.CERTIFIED else None
    pair = SubspacePair(split.pi_basis, sigma, generators, cert)
    status, verdict = SHStatus.NOT_ATTEMPTED, None
    if sh is not None:
        verdict = check_sh(sh.B_list, sh.A_list)
        status = SHStatus.HOLDS if verdict.holds else SHStatus.FAILS_CHECKED
    return TensorReport(
        is_symmetric=result.symmetry_defect <= SYMMETRY_TOL,
        min_eigenvalue=result.min_eigenvalue,
        nu=split.nu,
        nullspace_dim=int(split.null_basis.shape[0]),
        lh_constant=lh_constant(A, seed=seed),
        pi_sigma=pair,
        sh_status=status,
        sh_verdict=verdict,
        validation=result,
    )


def tensor_from_json(doc: dict, strict: bool = True) -> QuadraticForm:
    """Read ``{"N":..,"n":..,"entries":[[alpha,i,beta,j,value],...]}`` (1-based indices).

    Omitted entries are zero.  With ``strict`` an asymmetric tensor raises
    :class:`TensorValidationError` instead of being symmetrized.
    """
    try:
        N, n = int(doc["N"]), int(doc["n"])
        rows = doc.get("entries", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"malformed tensor document: {exc}") from exc
    if N < 1 or n < 1:
        raise ShapeMismatch("N and n must be positive")
    entries = np.zeros((N, n, N, n))
    for row in rows:
        if len(row) != 5:
            raise ShapeMismatch(f"entry {row!r} is not [alpha, i, beta, j, value]")
        al, i, be, j = (int(v) - 1 for v in row[:4])
        if not (0 <= al < N and 0 <= be < N and 0 <= i < n and 0 <= j < n):
            raise ShapeMismatch(f"entry index {row[:4]} out of range for N={N}, n={n}")
        entries[al, i, be, j] = float(row[4])
    A = QuadraticForm(N, n, entries)
    if strict:
        result = validate(A)
        if result.symmetry_defect > SYMMETRY_TOL:
            raise TensorValidationError(
                f"tensor is not symmetric (defect {result.symmetry_defect:.3e})",
                result.violations,
            )
    return A


def tensor_to_json(A: QuadraticForm) -> dict:
    rows = [
        [int(a) + 1, int(i) + 1, int(b) + 1, int(j) + 1, float(A.entries[a, i, b, j])]
        for a, i, b, j in zip(*np.nonzero(A.entries))
    ]
    return {"N": A.N, "n": A.n, "entries": rows}


def sh_from_json(doc: dict) -> SHDecomposition:
    return SHDecomposition(doc["B"], doc["A"])


def random_psd_tensor(N: int, n: int, rng: np.random.Generator, rank: Optional[int] = None,
                      rank_one_range: bool = False) -> QuadraticForm:
    """Random PSD tensor; with ``rank_one_range`` its range is spanned by rank-one matrices."""
    dim = N * n
    rank = dim if rank is None else rank
    if rank_one_range:
        vecs = np.array([np.outer(rng.standard_normal(N), rng.standard_normal(n)).ravel()
                         for _ in range(rank)]).reshape(rank, dim)
    else:
        vecs = rng.standard_normal((rank, dim))
    G = rng.standard_normal((rank, rank))
    M = vecs.T @ (G @ G.T + np.eye(rank)) @ vecs
    M = 0.5 * (M + M.T)
    M /= max(1.0, np.linalg.norm(M))
    return QuadraticForm.from_matrix(M, N, n)
