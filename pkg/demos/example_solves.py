"""Solve the two degenerate model problems and compare with closed forms.

The first problem only constrains the first component, so a right-hand
side touching the second component is rejected. The second problem only
sees derivatives in ``x2`` and reduces to one ODE per vertical fibre.
"""

# %%
import numpy as np

from degensolve import (
    CompatibilityViolation,
    GridFunction,
    example2_oracle,
    l2_norm,
    load_fixture,
    solve_degenerate,
)

H = 1 / 32

# %%
# Decoupled problem: u_1 solves the Poisson problem, u_2 stays zero.
ex1 = load_fixture("ex1", h=H)
grid = ex1.grid()
sol = solve_degenerate(ex1.tensor, ex1.rhs_on(grid), grid, ex1.schedule)
exact = GridFunction.from_callable(grid, lambda x: 0.25 * (np.sum(x**2, axis=1) - 1.0))
print("ex1 sweeps:", len(sol.report.records), "eps_final:", sol.eps_final)
print("ex1 L2 error of u_1:", l2_norm(GridFunction(sol.u.values[:1], grid) - exact))

bad = GridFunction(np.vstack([np.zeros(grid.size), np.ones(grid.size)]), grid)
try:
    solve_degenerate(ex1.tensor, bad, grid, ex1.schedule)
except CompatibilityViolation as exc:
    print("rejected:", exc)

# %%
# Fibre problem: compare with the per-fibre quadrature oracle.
ex2 = load_fixture("ex2", h=H)
grid = ex2.grid()
sol = solve_degenerate(ex2.tensor, ex2.rhs_on(grid), grid, ex2.schedule)
oracle = example2_oracle(lambda x: np.ones(len(x)), grid)
print("ex2 L2 error against oracle:", l2_norm(sol.u - oracle))
print("energies:", np.round(sol.report.energies, 5).tolist())
