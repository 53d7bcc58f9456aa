# %% [markdown]
# # Values before and after the extremum time
#
# The insider value in each regime against the uninformed holder.  Each
# regime on its own can fall below the benchmark, but the ex-ante mixture
# weighted by the conditional probability that the extremum is still ahead
# never does.

# %%
import numpy as np

from perpetual_insider import valuation as va
from perpetual_insider.model import OptionSpec, StatePoint, build_params

put = build_params(0.08, 0.10, 0.20)

# %%
spec = OptionSpec(2, "put", 1.0)
bs = va.build_boundaries(spec, put)
for x in (0.5, 0.7, 0.9, 0.99):
    pt = StatePoint(x, 1.0)
    v0 = va.value(spec, put, pt, 0, bs).value
    v1 = va.value(spec, put, pt, 1, bs).value
    print(f"x={x:4.2f}  V0={v0:.5f}  V1={v1:.5f}  mixture={va.insider_value(spec, put, pt, bs):.5f}  "
          f"uninformed={va.value_appendix(spec, put, pt, bs).value:.5f}")

# %% [markdown]
# Free-boundary diagnostics at a single extremum.

# %%
print("smooth fit j=0", va.smooth_fit_residuals(spec, put, 1.0, 0, bs))
print("smooth fit j=1", va.smooth_fit_residuals(spec, put, 1.0, 1, bs))
print("reflection with gap", va.normal_reflection_residual(spec, put, 1.0, bs))
print("reflection without gap", va.normal_reflection_residual(spec, put, 1.0, bs, gap=False))

# %%
pts = va.wedge_grid(spec, np.geomspace(0.5, 2.0, 5), 6, 2.0)
gap = [va.insider_value(spec, put, StatePoint(*p), bs) - va.value_appendix(spec, put, StatePoint(*p), bs).value
       for p in pts]
print("min mixture minus benchmark", min(gap))
