"""Vanishing-viscosity solver.

For ``eps > 0`` the regularised system ``(A + eps I) : D^2 u = f`` with zero
boundary values is solved in variational form: the discrete operator
``D^T (A + eps I) D`` is symmetric positive definite, and the system solved is

    D^T (A + eps I) D u = -f,

because ``D^T D`` is *minus* the discrete Laplacian.  Solutions are computed
for a geometric sequence of viscosities until the projected quantities
``P_Sigma u`` and ``P_Pi Du`` stop moving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .domain_grid import (
    GridFunction,
    ProblemGrid,
    divergence_values,
    gradient_l2_norm,
    gradient_values,
    l2_norm,
)
from .errors import (
    CompatibilityViolation,
    DimensionMismatch,
    EstimateBlowup,
    GridMismatch,
    NonConvergence,
)
from .tensor_algebra import QuadraticForm, SubspacePair, projector, require_valid, subspace_pair

logger = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-10
BLOWUP_FACTOR = 1e6


@dataclass
class EpsilonSchedule:
    eps0: float = 1.0
    factor: float = 0.5
    max_steps: int = 20
    cauchy_tol: float = 1e-4

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def __iter__(self):
        for k in range(self.max_steps):
            yield self.eps0 * self.factor ** k

    @classmethod
    def from_json(cls, doc: Optional[dict]) -> "EpsilonSchedule":
        doc = doc or {}
        fields = ("eps0", "factor", "max_steps", "cauchy_tol")
        return cls(**{k: doc[k] for k in fields if k in doc})


def _coefficients(A: QuadraticForm, eps: float) -> np.ndarray:
    return A.entries + eps * np.einsum("ab,ij->aibj", np.eye(A.N), np.eye(A.n))


def _apply(C: np.ndarray, values: np.ndarray, grid: ProblemGrid) -> np.ndarray:
    G = gradient_values(values, grid)
    flux = np.einsum("aibj,bjx->aix", C, G)
    return -divergence_values(flux, grid)


def apply_operator(A: QuadraticForm, eps: float, grid: ProblemGrid, u: GridFunction) -> GridFunction:
    """``D^T (A + eps I) D u``, i.e. ``-div((A + eps I) Du)``."""
    if u.grid is not grid:
        raise GridMismatch("u does not live on the given grid")
    if u.N != A.N:
        raise DimensionMismatch(f"tensor has N={A.N} but u has {u.N} components")
    return GridFunction(_apply(_coefficients(A, eps), u.values, grid), grid)


def energy(A: QuadraticForm, eps: float, u: GridFunction, f: GridFunction) -> float:
    """``1/2 <(A + eps I) Du, Du> + <f, u>`` with ``h^n`` weights."""
    G = gradient_values(u.values, u.grid)
    quad = np.einsum("aix,aibj,bjx->", G, _coefficients(A, eps), G)
    return float(u.grid.cell_volume * (0.5 * quad + np.sum(f.values * u.values)))


@dataclass
class CompatibilityResult:
    ok: bool
    defect: float
    worst_node: int
    worst_point: tuple
    component: int  # 1-based component carrying most of the defect

    def raise_if_violated(self) -> None:
        if not self.ok:
            raise CompatibilityViolation(
                f"right-hand side leaves the admissible subspace at x={self.worst_point}: "
                f"defect {self.defect:.3e}, mostly in component f_{self.component}",
                self.defect, self.worst_node, self.worst_point, self.component,
            )


def compatibility_check(f: GridFunction, sigma_basis, raise_on_violation: bool = False) -> CompatibilityResult:
    """Nodewise relative distance of ``f`` from ``Sigma``."""
    P = projector(sigma_basis, f.N)
    rest = f.values - P @ f.values
    ratio = np.linalg.norm(rest, axis=0) / np.maximum(1.0, np.linalg.norm(f.values, axis=0))
    k = int(np.argmax(ratio))
    defect = float(ratio[k])
    component = int(np.argmax(np.abs(rest[:, k]))) + 1
    result = CompatibilityResult(defect <= COMPATIBILITY_TOL, defect, k,
                                 tuple(map(float, f.grid.points[k])), component)
    if raise_on_violation:
        result.raise_if_violated()
    return result


def conjugate_gradient(matvec, b, x0=None, tol=1e-10, maxiter=None, diag=None):
    """Preconditioned CG for an SPD operator on flat arrays.

    Stops when ``|b - A x| <= tol |b|``; the final residual is recomputed from
    scratch.  Returns ``(x, iterations, relative_residual)``.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    maxiter = maxiter or 50 * b.size
    inv_diag = 1.0 / diag if diag is not None else np.ones_like(b)
    r = b - matvec(x)
    it = 0
    while True:
        res = np.linalg.norm(r) / bnorm
        if res <= tol or it >= maxiter:
            break
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            Ap = matvec(p)
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            it += 1
            if np.linalg.norm(r) <= tol * bnorm:
                break
            z = inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        # guard against drift of the recursive residual
        r = b - matvec(x)
        if np.linalg.norm(r) <= tol * bnorm:
            res = np.linalg.norm(r) / bnorm
            break
    return x, it, float(np.linalg.norm(r) / bnorm)


def _jacobi_diagonal(C: np.ndarray, grid: ProblemGrid) -> np.ndarray:
    # the diagonal of D^T C D is the same at every node
    per_component = (np.einsum("aiaj->a", C) + np.einsum("aiai->a", C)) / grid.h ** 2
    return np.repeat(per_component, grid.size)


def solve_epsilon(A: QuadraticForm, eps: float, f: GridFunction, grid: Optional[ProblemGrid] = None,
                  cg_tol: float = 1e-10, seed_guess: Optional[GridFunction] = None,
                  maxiter: Optional[int] = None):
    """Solve the regularised problem at one viscosity.

    Returns ``(u, iterations, relative_residual)``.  Raises
    :class:`NonConvergence` when CG hits its iteration cap.
    """
    grid = f.grid if grid is None else grid
    if f.grid is not grid:
        raise GridMismatch("f does not live on the given grid")
    if f.N != A.N:
        raise DimensionMismatch(f"tensor has N={A.N} but f has {f.N} components")
    if not eps > 0:
        raise ValueError("viscosity must be positive")
    C = _coefficients(A, eps)
    shape = (A.N, grid.size)

    def matvec(x):
        return _apply(C, x.reshape(shape), grid).ravel()

    x0 = None if seed_guess is None else seed_guess.values.ravel()
    maxiter = maxiter or 50 * grid.size * A.N
    x, its, res = conjugate_gradient(matvec, -f.values.ravel(), x0, cg_tol, maxiter,
                                     _jacobi_diagonal(C, grid))
    if res > cg_tol:
        raise NonConvergence(
            f"CG stopped at relative residual {res:.3e} after {its} iterations (eps={eps:g})",
            residual=res, iterations=its,
        )
    return GridFunction(x.reshape(shape), grid), its, res


@dataclass
class EpsilonRecord:
    eps: float
    sigma_norm: float
    pi_grad_norm: float
    energy: float
    iterations: int
    residual: float


@dataclass
class SolveReport:
    records: list = field(default_factory=list)
    cauchy_gaps: list = field(default_factory=list)  # (sigma gap, pi-gradient gap) per step
    estimate_constant: float = 0.0
    converged: bool = False
    f_norm: float = 0.0

    @property
    def eps_final(self) -> float:
        return self.records[-1].eps if self.records else math.nan

    @property
    def energies(self) -> list:
        return [r.energy for r in self.records]

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "cauchy_gaps": [list(g) for g in self.cauchy_gaps],
            "estimate_constant": self.estimate_constant,
            "converged": self.converged,
            "f_norm": self.f_norm,
            "eps_final": self.eps_final,
        }


@dataclass
class DegenerateSolution:
    u: GridFunction  # Sigma-valued
    U: np.ndarray  # Pi-valued, shape (N, n, num_gradient_nodes)
    report: SolveReport
    subspaces: SubspacePair

    @property
    def eps_final(self) -> float:
        return self.report.eps_final


def _projected_norms(values, grid, P_sigma, P_pi):
    N = values.shape[0]
    su = P_sigma @ values
    G = gradient_values(values, grid)
    shape = G.shape
    pg = (P_pi @ G.reshape(-1, shape[-1])).reshape(shape)
    return su, pg


def solve_degenerate(A: QuadraticForm, f: GridFunction, grid: Optional[ProblemGrid] = None,
                     schedule: Optional[EpsilonSchedule] = None,
                     subspaces: Optional[SubspacePair] = None,
                     cg_tol: float = 1e-10, seed: int = 0) -> DegenerateSolution:
    """Sweep the viscosity schedule and return the projected limit.

    The sweep stops once both ``|P_Sigma (u_{k+1} - u_k)|`` and
    ``|P_Pi D(u_{k+1} - u_k)|`` drop below ``cauchy_tol * |f|``.  The returned
    ``u`` is the nodewise ``Sigma``-projection of the last iterate and ``U`` is
    the ``Pi``-projection of its gradient.
    """
    grid = f.grid if grid is None else grid
    schedule = schedule or EpsilonSchedule()
    require_valid(A)
    if subspaces is None:
        subspaces = subspace_pair(A, seed=seed)
    subspaces.require_certified()
    compatibility_check(f, subspaces.sigma_basis, raise_on_violation=True)

    P_sigma = projector(subspaces.sigma_basis, A.N)
    P_pi = projector(subspaces.pi_basis, A.N * A.n)
    f_norm = l2_norm(f)
    threshold = schedule.cauchy_tol * f_norm
    report = SolveReport(f_norm=f_norm)
    u, prev = None, None
    for eps in schedule:
        u, its, res = solve_epsilon(A, eps, f, grid, cg_tol=cg_tol, seed_guess=u)
        su, pg = _projected_norms(u.values, grid, P_sigma, P_pi)
        s_norm = math.sqrt(grid.cell_volume * float(np.sum(su * su)))
        p_norm = gradient_l2_norm(pg, grid)
        rec = EpsilonRecord(eps, s_norm, p_norm, energy(A, eps, u, f), its, res)
        report.records.append(rec)
        logger.debug("eps=%g |Su|=%.6g |PDu|=%.6g E=%.6g its=%d", eps, s_norm, p_norm, rec.energy, its)
        if s_norm + p_norm > BLOWUP_FACTOR * f_norm:
            raise EstimateBlowup(
                f"|Su| + |PDu| = {s_norm + p_norm:.3e} exceeds {BLOWUP_FACTOR:g} |f| at eps={eps:g}"
            )
        if prev is not None:
            ds = su - prev[0]
            dg = pg - prev[1]
            gap = (math.sqrt(grid.cell_volume * float(np.sum(ds * ds))), gradient_l2_norm(dg, grid))
            report.cauchy_gaps.append(gap)
            if gap[0] <= threshold and gap[1] <= threshold:
                report.converged = True
                break
        prev = (su, pg)

    sums = [r.sigma_norm + r.pi_grad_norm for r in report.records]
    report.estimate_constant = max(sums) / f_norm if f_norm > 0 else 0.0
    su, pg = _projected_norms(u.values, grid, P_sigma, P_pi)
    return DegenerateSolution(GridFunction(su, grid), pg, report, subspaces)
