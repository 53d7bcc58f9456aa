# %% [markdown]
# # Fixed-strike exercise curves
#
# The fixed-strike boundary solves a first-order ODE in the extremum.  The
# solver shoots from a sequence of anchors and keeps the envelope that stays
# inside the admissible wedge.

# %%
import numpy as np

from perpetual_insider import boundaries as bd
from perpetual_insider.model import OptionSpec, build_params

put = build_params(0.08, 0.10, 0.20)
call = build_params(0.10, 0.05, 0.30)

# %%
curve = bd.solve_extremal_boundary(OptionSpec(3, "put", 1.0), put)
meta = curve.metadata
print("envelope gap", meta["envelope_gap"], "crossing", meta["crossing_detected"])
s = np.array([1.001, 1.05, 1.2, 1.5, 2.0, 3.0, 5.0])
for si, a, da in zip(s, curve(s), curve.slope(s)):
    print(f"s={si:5.3f}  a={a:.5f}  a'={da:.4f}")

# %% [markdown]
# Right above the strike the boundary leaves zero steeply, so its slope
# exceeds one there; far out it settles to the standard-strike level.

# %%
curve_c = bd.solve_extremal_boundary(OptionSpec(3, "call", 1.0), call)
q = np.array([0.2, 0.4, 0.6, 0.8, 0.95])
print(np.column_stack([q, curve_c(q), curve_c.slope(q)]).round(4))

# %% [markdown]
# The same solver run on the floating-strike ODE without the regime gap
# recovers the straight ray from the power equation.

# %%
spec2 = OptionSpec(2, "put", 1.0)
ray = bd.solve_extremal_boundary(spec2, put, "beta", bd.GridSpec(0.1, 10.0, points=40), coupled=False)
lam = bd.root_power_equation(spec2, put)
print("max relative error", np.max(np.abs(ray(ray.grid) / ray.grid / lam - 1)))
