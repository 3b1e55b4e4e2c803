"""Tensor analysis walk-through.

Splits each shipped tensor into its range and kernel, certifies the range
by rank-one generators and reports the Legendre-Hadamard constant.
"""

# %%
# Load the fixtures and print the subspace data for each.
import numpy as np

from degensolve import FIXTURE_NAMES, analyze_tensor, load_fixture

for name in FIXTURE_NAMES:
    problem = load_fixture(name)
    rep = analyze_tensor(problem.tensor, problem.sh)
    print(f"{name:5s} nu={rep.nu:.3f} lh={rep.lh_constant:.3f} certified={rep.pi_sigma.certified.value}")
    if rep.pi_sigma.is_certified:
        print("      Sigma basis:", np.round(rep.pi_sigma.sigma_basis, 6).tolist())

# %%
# The rotation tensor has a range with no rank-one element, so Sigma
# cannot be certified and the solver refuses it.
rot2 = analyze_tensor(load_fixture("rot2").tensor)
print("rot2 generators:", rot2.pi_sigma.rank_one_generators)
