"""
Choosing the sheet spacing for a near-zero in-plane permittivity
================================================================

With a mostly reactive sheet conductivity the in-plane effective
permittivity eps_host + i sigma / (omega d) crosses zero at one spacing d0.
Around d0 a wave crosses the stack with almost no phase accumulation.
"""

# %%
import numpy as np

from sheethom.effective import enz_spacing
from sheethom.finescale import enz_sweep

sigma, omega, eps_host = 0.001 + 0.3j, 1.0, 2.0
spacing = enz_spacing(sigma, omega, eps_host)
print(f"d0 = {spacing.d0:.6f}, discarded imaginary part {spacing.residue:.2e}")

# %%
d0, rows = enz_sweep(sigma, omega, eps_host, factors=np.linspace(0.5, 2.0, 16))
print(f"{'d/d0':>6} {'phase delay':>12} {'|eps_t|':>9} {'|t|':>7}")
for r in rows:
    print(f"{r.d / d0:6.2f} {r.phase_delay:12.5f} {abs(r.eps_tangential):9.4f} {r.abs_t:7.4f}")
