"""
Fine-scale slab versus homogenized slab
=======================================

A slab of thickness 2L holds sheets at spacing d.  As d shrinks, the
locally averaged fields of the exact 1D solution approach the fields of a
uniform slab with the effective permittivity.
"""

# %%
import numpy as np

from sheethom.core import CellGeometry, MaterialModel
from sheethom.effective import compute_effective
from sheethom.finescale import build_stack, convergence_study, energy_budget, transfer_matrix_solve

eps1, eps2, sigma = 2 + 0.1j, 4 + 0.1j, 0.01 + 0.3j
materials = MaterialModel(lambda x, y: np.where(np.mod(y[..., 2], 1.0) < 0.5, eps1, eps2), sigma, 1.0)

# %%
# One slab at d = 1/8: the energy budget closes to roundoff.
stack = build_stack(materials, 1 / 8, 1.0)
sol = transfer_matrix_solve(stack)
budget = energy_budget(sol)
print(f"{stack.n_sheets} sheets  |r| = {abs(sol.r):.4f}  |t| = {abs(sol.t):.4f}  energy residual = {budget.residual:.2e}")

# %%
# Convergence with the tensor taken from the cell problem.
eff, _ = compute_effective(materials, CellGeometry(16))
rows = convergence_study(materials, 1.0, [1 / 8, 1 / 16, 1 / 32, 1 / 64], eps_eff=eff.eps_eff)
print(f"{'d':>9} {'sheets':>7} {'error':>10} {'ratio':>6}")
prev = None
for r in rows:
    ratio = "" if prev is None else f"{prev / r.error:6.2f}"
    print(f"{r.d:9.5f} {r.n_sheets:7d} {r.error:10.3e} {ratio}")
    prev = r.error
