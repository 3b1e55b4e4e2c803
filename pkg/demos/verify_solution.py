"""Run the verification battery on a computed solution.

Shows the distributional residual against random test maps, the partial
Poincare constant, boundary trace decay and what happens to the report
when the solution is tampered with.
"""

# %%
import json

from degensolve import load_fixture, solve_degenerate, subspace_pair, verify_solution

problem = load_fixture("ex2", h=1 / 32)
grid = problem.grid()
f = problem.rhs_on(grid)
pair = subspace_pair(problem.tensor)
sol = solve_degenerate(problem.tensor, f, grid, problem.schedule, pair)

# %%
report = verify_solution(problem.tensor, sol.u, f, pair, sol.eps_final, problem.rhs_function())
print("passed:", report.passed)
print(json.dumps(report.checks, indent=2))

# %%
# Doubling the solution breaks the weak identity by a wide margin.
tampered = verify_solution(problem.tensor, sol.u * 2.0, f, pair, sol.eps_final, problem.rhs_function())
print("tampered passed:", tampered.passed)
print("tampered distributional:", tampered.checks["distributional"])
