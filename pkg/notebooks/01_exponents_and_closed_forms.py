# %% [markdown]
# # Exponents and the standard-strike closed form
#
# The two quadratic root pairs drive everything else: the beta pair uses the
# drift felt before the extremum time, the gamma pair the plain risk-neutral drift.

# %%
import numpy as np

from perpetual_insider import boundaries as bd
from perpetual_insider.model import OptionSpec, build_params, exponents

put = build_params(0.08, 0.10, 0.20)
call = build_params(0.10, 0.05, 0.30)

for name, p in (("put set", put), ("call set", call)):
    b1, b2 = exponents(p, "beta")
    g1, g2 = exponents(p, "gamma")
    print(f"{name}: alpha={p.alpha:+.4f} delta'={p.delta_prime:.4f} "
          f"beta=({b1:.5f}, {b2:.5f}) gamma=({g1:.5f}, {g2:.5f})")

# %% [markdown]
# Insider and uninformed exercise levels for family 1.  The insider stops at
# the beta level while the extremum is still ahead; the benchmark uses gamma.

# %%
for side, p in (("put", put), ("call", call)):
    spec = OptionSpec(1, side, 1.0)
    print(side, "insider", round(bd.boundary_standard_j0(spec, p), 5),
          "uninformed", round(bd.appendix_boundaries(spec, p), 5),
          "H root", round(bd.abar_j0(spec, p, 1.0), 5))

# %% [markdown]
# Floating-strike rays: the ratio of boundary to extremum solves a power equation.

# %%
for side, p in (("put", put), ("call", call)):
    spec = OptionSpec(2, side, 1.0)
    lam = [bd.root_power_equation(spec, p, 0, fam) for fam in ("beta", "gamma")]
    print(side, "beta ray", round(lam[0], 6), "gamma ray", round(lam[1], 6))

# %%
lam = np.linspace(0.05, 0.95, 10)
print(np.round(bd.power_equation_residual(OptionSpec(2, "put", 1.0), put, "beta", lam), 4))
