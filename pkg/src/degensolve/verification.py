"""A posteriori checks on computed solutions.

None of these checks differentiate ``u``: the distributional identity moves
every derivative onto smooth test maps whose Hessians are known in closed
form, which is what makes it usable for solutions without weak derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .domain_grid import GridFunction, ProblemGrid, gradient_values, l2_norm
from .errors import (
    BandEmpty,
    DegeneratePencil,
    SigmaFull,
    TestMapNotInSigma,
    WrongDomain,
)
from .tensor_algebra import QuadraticForm, orthonormalize, projector

SIGMA_TOL = 1e-10


@lru_cache(maxsize=None)
def _bump_mass(n: int) -> float:
    """Integral of ``exp(-1/(1-|y|^2))`` over the unit ball of ``R^n``."""
    sphere = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)
    radial, _ = integrate.quad(lambda r: r ** (n - 1) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)
    return sphere * radial


@dataclass
class TestMap:
    """``phi(x) = weight * psi(x) * direction`` with the standard bump ``psi``.

    ``psi(x) = exp(-1/(1 - s))`` for ``s = |x - c|^2 / r^2 < 1`` and 0 otherwise.
    """

    __test__ = False

    center: np.ndarray
    radius: float
    direction: np.ndarray
    weight: float = 1.0

    @classmethod
    def unit_mass(cls, center, radius, direction) -> "TestMap":
        """Scale the bump so that ``integral psi = 1``."""
        center = np.asarray(center, dtype=float)
        return cls(center, float(radius), np.asarray(direction, dtype=float),
                   1.0 / (_bump_mass(center.size) * radius ** center.size))

    def _s(self, x):
        d = np.atleast_2d(x) - self.center
        return d, np.sum(d * d, axis=1) / self.radius ** 2

    def profile(self, x) -> np.ndarray:
        _, s = self._s(x)
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = self.weight * np.exp(-1.0 / (1.0 - s[inside]))
        return out

    def profile_gradient(self, x) -> np.ndarray:
        """Shape ``(n, M)``."""
        d, s = self._s(x)
        psi = self.profile(x)
        inside = s < 1.0
        dpsi = np.zeros_like(s)
        dpsi[inside] = -psi[inside] / (1.0 - s[inside]) ** 2
        return (dpsi * 2.0 / self.radius ** 2) * d.T

    def profile_hessian(self, x) -> np.ndarray:
        """Shape ``(n, n, M)``: ``psi'' ds ds + psi' d2s``."""
        d, s = self._s(x)
        psi = self.profile(x)
        inside = s < 1.0
        first = np.zeros_like(s)
        second = np.zeros_like(s)
        q = 1.0 - s[inside]
        first[inside] = -psi[inside] / q ** 2
        second[inside] = psi[inside] * (2.0 * s[inside] - 1.0) / q ** 4
        r2 = self.radius ** 2
        ds = 2.0 * d.T / r2
        n = d.shape[1]
        return second * ds[:, None, :] * ds[None, :, :] + (2.0 / r2) * first * np.eye(n)[:, :, None]

    def values(self, x) -> np.ndarray:
        return self.direction[:, None] * self.profile(x)[None, :]


def random_test_maps(grid: ProblemGrid, sigma_basis, count: int = 10, seed: int = 0) -> list:
    """Seeded unit-mass bumps with random ``Sigma`` directions inside the domain."""
    rng = np.random.default_rng(seed)
    sigma_basis = np.asarray(sigma_basis, dtype=float)
    if sigma_basis.shape[0] == 0:
        return []
    dom = grid.domain
    inradius = min(dom.semi_axes)
    lo = np.asarray(dom.center) - np.asarray(dom.semi_axes)
    hi = np.asarray(dom.center) + np.asarray(dom.semi_axes)
    maps = []
    while len(maps) < count:
        radius = max(rng.uniform(0.4, 0.6) * inradius, 6.0 * grid.h)
        c = rng.uniform(lo, hi)
        if not dom.contains(c)[0] or dom.boundary_distance(c)[0] <= 1.05 * radius:
            continue
        coef = rng.standard_normal(sigma_basis.shape[0])
        direction = coef @ sigma_basis
        maps.append(TestMap.unit_mass(c, radius, direction / np.linalg.norm(direction)))
    return maps


def _check_direction(test: TestMap, sigma_basis, N):
    if sigma_basis is None:
        return
    P = projector(sigma_basis, N)
    d = test.direction
    if np.linalg.norm(d - P @ d) > SIGMA_TOL * max(1.0, np.linalg.norm(d)):
        raise TestMapNotInSigma(f"test direction {d} is not in Sigma")


def distributional_residuals(u: GridFunction, f: GridFunction, A: QuadraticForm,
                             tests: Sequence[TestMap], sigma_basis=None) -> np.ndarray:
    """``|int A u D^2 phi - int f . phi| / (1 + |int f . phi|)`` per test map."""
    grid = u.grid
    out = []
    for test in tests:
        _check_direction(test, sigma_basis, A.N)
        H = test.profile_hessian(grid.points)
        # coefficient field sum_{a,i,j} A_{aibj} d_a H_ij acting on u_b
        kernel = np.einsum("aibj,a,ijx->bx", A.entries, test.direction, H)
        lhs = grid.cell_volume * float(np.sum(kernel * u.values))
        rhs = grid.cell_volume * float(np.sum(f.values * test.values(grid.points)))
        out.append(abs(lhs - rhs) / (1.0 + abs(rhs)))
    return np.array(out)


def distributional_residual(u, f, A, tests, sigma_basis=None) -> float:
    res = distributional_residuals(u, f, A, tests, sigma_basis)
    return float(res.max()) if res.size else 0.0


def gradient_matrices(grid: ProblemGrid) -> list:
    """Sparse forward-difference matrices, one per axis, ``(num_gradient_nodes, size)``."""
    m, G = grid.size, grid.num_gradient_nodes
    mats = []
    for i in range(grid.n):
        fwd = grid.forward[i]
        rows_f = np.flatnonzero(fwd >= 0)
        rows = np.concatenate([rows_f, np.arange(m)])
        cols = np.concatenate([fwd[rows_f], np.arange(m)])
        vals = np.concatenate([np.ones(rows_f.size), -np.ones(m)]) / grid.h
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(G, m)))
    return mats


def restricted_stiffness(grid: ProblemGrid, pi_basis, sigma_basis, N: int) -> sp.csr_matrix:
    """Matrix of ``|P_Pi D u|^2`` (without the ``h^n`` factor) for ``Sigma``-valued ``u``.

    ``u = sum_s c_s sigma_s``; the unknowns are the coefficient fields ``c_s``.
    """
    n = grid.n
    S = np.asarray(sigma_basis, dtype=float).reshape(-1, N)
    k = S.shape[0]
    P = projector(pi_basis, N * n).reshape(N, n, N, n)
    W = np.einsum("sa,aibj,tb->sitj", S, P, S)
    D = gradient_matrices(grid)
    blocks = [[None] * k for _ in range(k)]
    for s in range(k):
        for t in range(k):
            acc = None
            for i in range(n):
                for j in range(n):
                    w = W[s, i, t, j]
                    if abs(w) > 1e-14:
                        term = w * (D[i].T @ D[j])
                        acc = term if acc is None else acc + term
            blocks[s][t] = acc if acc is not None else sp.csr_matrix((grid.size, grid.size))
    return sp.bmat(blocks, format="csc")


def poincare_sup(grid: ProblemGrid, pi_basis, sigma_basis, N: int, shift: float = 1e-12,
                 iterations: int = 500, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest discrete ratio ``|P_Sigma u| / |P_Pi Du|`` over grid functions.

    Components of ``u`` orthogonal to ``Sigma`` change neither norm, so the
    supremum is taken over ``Sigma``-valued ``u``: it is ``mu^{-1/2}`` for the
    smallest eigenvalue ``mu`` of the restricted stiffness, found by inverse
    power iteration.
    """
    S = np.asarray(sigma_basis, dtype=float).reshape(-1, N)
    if S.shape[0] == 0:
        raise DegeneratePencil("Sigma is trivial: there is nothing to bound")
    K = restricted_stiffness(grid, pi_basis, S, N)
    lu = spla.splu((K + shift * sp.identity(K.shape[0], format="csc")).tocsc())
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(K.shape[0])
    x /= np.linalg.norm(x)
    mu = np.inf
    for _ in range(iterations):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        new_mu = float(y @ (K @ y))
        x = y
        if abs(new_mu - mu) <= tol * abs(new_mu):
            mu = new_mu
            break
        mu = new_mu
    scale = max(1.0, spla.norm(K, 1))
    if mu <= 1e-10 * scale:
        raise DegeneratePencil("stiffness is singular on Sigma-valued functions")
    return 1.0 / math.sqrt(mu)


def poincare_bound_constant(generators, sigma_basis) -> float:
    """``kappa`` with ``|P_Sigma u| <= diam * kappa * |P_Pi Du|``.

    Expands ``|u|^2 <= sigma_min(H)^{-2} sum_r (eta_r . u)^2`` with ``H`` the
    generator directions in ``Sigma`` coordinates, and bounds each term by the
    one-dimensional Poincare inequality along ``a_r``.
    """
    S = np.asarray(sigma_basis, dtype=float)
    if not generators or S.shape[0] == 0:
        return math.inf
    H = np.array([S @ eta for eta, _ in generators])
    smin = np.linalg.svd(H, compute_uv=False).min()
    return math.sqrt(len(generators)) / smin


@dataclass
class TraceProfile:
    deltas: list
    averages: list

    @property
    def pairs(self):
        return [[float(d), float(v)] for d, v in zip(self.deltas, self.averages)]

    @property
    def decaying(self) -> bool:
        """Band averages strictly decrease as the band shrinks (or vanish)."""
        order = np.argsort(self.deltas)[::-1]
        vals = np.asarray(self.averages)[order]
        if np.all(vals <= 1e-30):
            return True
        return bool(np.all(np.diff(vals) < 0))


def trace_decay(u: GridFunction, grid: ProblemGrid, deltas: Sequence[float]) -> TraceProfile:
    """Mean of ``|u|^2`` over the band ``dist(x, boundary) < delta`` for each ``delta``."""
    averages = []
    for delta in deltas:
        if delta < 2.0 * grid.h:
            raise BandEmpty(f"band width {delta:g} is below the resolution floor 2h = {2 * grid.h:g}")
        band = grid.boundary_band(delta)
        if band.size == 0:
            raise BandEmpty(f"no interior node within {delta:g} of the boundary")
        averages.append(float(np.mean(np.sum(u.values[:, band] ** 2, axis=0))))
    return TraceProfile(list(map(float, deltas)), averages)


def example2_oracle(f: Callable, grid: ProblemGrid) -> GridFunction:
    """Closed-form solution of ``D_22 u = f`` on the unit disc, ``u = 0`` on the circle.

    ``u = -h + G`` with ``G(x1, x2)`` the double integral of ``f`` (zero below
    the disc) along the vertical fibre up to ``x2`` and ``h`` the affine-in-``x2``
    interpolant of ``G`` between the fibre end points.  Integrals use
    composite trapezoids with step at most ``grid.h / 4``.
    """
    if grid.n != 2 or not grid.domain.is_unit_disc():
        raise WrongDomain("the closed-form oracle needs the unit disc in the plane")
    pts = grid.points
    out = np.zeros(grid.size)
    x1_vals, inverse = np.unique(grid.coords[:, 0], return_inverse=True)
    step = grid.h / 4.0
    for k, c in enumerate(x1_vals):
        nodes = np.flatnonzero(inverse == k)
        x1 = pts[nodes[0], 0]
        s = math.sqrt(max(0.0, 1.0 - x1 * x1))
        if s == 0.0:
            continue
        m = max(2, int(math.ceil(2.0 * s / step)))
        t = np.union1d(np.linspace(-s, s, m + 1), pts[nodes, 1])
        vals = np.asarray(f(np.column_stack([np.full_like(t, x1), t])), dtype=float).reshape(-1)
        first = integrate.cumulative_trapezoid(vals, t, initial=0.0)
        G = integrate.cumulative_trapezoid(first, t, initial=0.0)
        g_top, g_bot = G[-1], 0.0
        where = np.searchsorted(t, pts[nodes, 1])
        x2 = pts[nodes, 1]
        hval = (g_top - g_bot) / (2.0 * s) * x2 + 0.5 * (g_top + g_bot)
        out[nodes] = -hval + G[where]
    return GridFunction(out[None, :], grid)


def nonuniqueness_check(u: GridFunction, f: GridFunction, A: QuadraticForm, sigma_basis,
                        g, tests: Sequence[TestMap]) -> float:
    """Change in the distributional residual after adding ``g`` along ``Sigma^perp``."""
    S = np.asarray(sigma_basis, dtype=float).reshape(-1, A.N)
    if S.shape[0] >= A.N:
        raise SigmaFull("Sigma is all of R^N: there is no degenerate direction")
    perp = orthonormalize(np.eye(A.N) - projector(S, A.N), A.N)[0]
    gvals = g.values[0] if isinstance(g, GridFunction) else np.asarray(g(u.grid.points), dtype=float)
    tilde = GridFunction(u.values + perp[:, None] * gvals[None, :], u.grid)
    before = distributional_residuals(u, f, A, tests, S)
    after = distributional_residuals(tilde, f, A, tests, S)
    return float(np.max(np.abs(after - before))) if len(tests) else 0.0


def _box_interpolator(values: np.ndarray, grid: ProblemGrid) -> RegularGridInterpolator:
    box = np.zeros(grid.index.shape)
    box[tuple((grid.coords - grid.lower).T)] = values
    lo, _ = grid.bounding_box
    axes = [lo[i] + grid.h * np.arange(grid.index.shape[i]) for i in range(grid.n)]
    return RegularGridInterpolator(axes, box, method="linear", bounds_error=False, fill_value=0.0)


def rank_one_derivative_errors(u: GridFunction, U: np.ndarray, generators, grid: ProblemGrid) -> list:
    """Relative L2 mismatch between ``D_a (eta . u)`` and ``(eta (x) a) : U`` per generator.

    The directional derivative is the difference quotient along ``h a`` with
    bilinear interpolation of the zero-extended field.
    """
    m = grid.size
    errors = []
    for eta, a in generators:
        v = eta @ u.values
        interp = _box_interpolator(v, grid)
        lhs = (interp(grid.points + grid.h * np.asarray(a)) - v) / grid.h
        rhs = np.einsum("a,i,aix->x", eta, a, U[:, :, :m])
        denom = math.sqrt(grid.cell_volume * float(rhs @ rhs))
        diff = math.sqrt(grid.cell_volume * float((lhs - rhs) @ (lhs - rhs)))
        if denom == 0.0:
            errors.append(diff)
        else:
            errors.append(diff / denom)
    return errors


def rank_one_derivative_check(u, U, generators, grid) -> float:
    errs = rank_one_derivative_errors(u, U, generators, grid)
    return max(errs) if errs else 0.0


@dataclass
class VerificationReport:
    residuals: list = field(default_factory=list)
    poincare_sup: Optional[float] = None
    poincare_bound: Optional[float] = None
    trace_profile: list = field(default_factory=list)
    oracle_l2_error: Optional[float] = None
    nonuniqueness_delta: Optional[float] = None
    rank_one_derivative_errors: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)  # name -> {"status": ..., "tolerance": ..., ...}

    @property
    def passed(self) -> bool:
        return all(c["status"] != "failed" for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "residuals": [float(r) for r in self.residuals],
            "poincare_sup": self.poincare_sup,
            "poincare_bound": self.poincare_bound,
            "trace_profile": self.trace_profile,
            "oracle_l2_error": self.oracle_l2_error,
            "nonuniqueness_delta": self.nonuniqueness_delta,
            "rank_one_errors": [float(e) for e in self.rank_one_derivative_errors],
            "checks": self.checks,
            "passed": self.passed,
        }


def _status(ok: bool) -> str:
    return "passed" if ok else "failed"


def example2_coefficient(A: QuadraticForm) -> Optional[float]:
    """``c`` when ``A`` is ``c`` times the ``D_22`` operator in the plane, else ``None``."""
    if A.N != 1 or A.n != 2:
        return None
    c = A.entries[0, 1, 0, 1]
    rest = A.entries.copy()
    rest[0, 1, 0, 1] = 0.0
    if c <= 0 or np.any(rest != 0.0):
        return None
    return float(c)


def bump_function(center, radius) -> Callable:
    test = TestMap(np.asarray(center, dtype=float), float(radius), np.ones(1))
    return test.profile


def verify_solution(A: QuadraticForm, u: GridFunction, f: GridFunction, subspaces, eps_final: float,
                    rhs_callable: Optional[Callable] = None, seed: int = 0,
                    num_tests: int = 10) -> VerificationReport:
    """Run every applicable check on a solution and grade it.

    Checks that do not apply are recorded with status ``skipped``.
    """
    grid = u.grid
    h = grid.h
    S = subspaces.sigma_basis
    report = VerificationReport()
    tests = random_test_maps(grid, S, num_tests, seed)

    res = distributional_residuals(u, f, A, tests, S)
    tol = 10.0 * (h + eps_final)
    report.residuals = res.tolist()
    report.checks["distributional"] = {"status": _status(bool(res.size == 0 or res.max() <= tol)),
                                       "max_residual": float(res.max()) if res.size else 0.0,
                                       "tolerance": tol}

    try:
        sup = poincare_sup(grid, subspaces.pi_basis, S, A.N, seed=seed)
        bound = grid.domain.diameter * poincare_bound_constant(subspaces.rank_one_generators, S)
        report.poincare_sup, report.poincare_bound = float(sup), float(bound)
        report.checks["poincare"] = {"status": _status(math.isfinite(sup) and sup <= bound),
                                     "tolerance": bound}
    except DegeneratePencil as exc:
        report.checks["poincare"] = {"status": "skipped", "reason": str(exc)}

    deltas = [16 * h, 8 * h, 4 * h]
    try:
        prof = trace_decay(u, grid, deltas)
        report.trace_profile = prof.pairs
        report.checks["trace"] = {"status": _status(prof.decaying), "deltas": deltas}
    except BandEmpty as exc:
        report.checks["trace"] = {"status": "skipped", "reason": str(exc)}

    c = example2_coefficient(A)
    if c is not None and grid.domain.is_unit_disc() and rhs_callable is not None:
        oracle = example2_oracle(lambda x: rhs_callable(x) / c, grid)
        err = l2_norm(u - oracle)
        report.oracle_l2_error = err
        report.checks["oracle"] = {"status": _status(err <= 3.2 * h), "tolerance": 3.2 * h}
    else:
        report.checks["oracle"] = {"status": "skipped", "reason": "no closed-form oracle for this problem"}

    try:
        dom = grid.domain
        g = bump_function(dom.center, 0.5 * min(dom.semi_axes))
        delta = nonuniqueness_check(u, f, A, S, g, tests)
        report.nonuniqueness_delta = delta
        report.checks["nonuniqueness"] = {"status": _status(delta <= 1e-10), "tolerance": 1e-10}
    except SigmaFull as exc:
        report.checks["nonuniqueness"] = {"status": "skipped", "reason": str(exc)}

    P_pi = projector(subspaces.pi_basis, A.N * A.n)
    G = gradient_values(u.values, grid)
    U = (P_pi @ G.reshape(-1, G.shape[-1])).reshape(G.shape)
    errs = rank_one_derivative_errors(u, U, subspaces.rank_one_generators, grid)
    report.rank_one_derivative_errors = errs
    report.checks["rank_one_derivative"] = {"status": _status(max(errs, default=0.0) <= 5e-2),
                                            "tolerance": 5e-2}
    return report
