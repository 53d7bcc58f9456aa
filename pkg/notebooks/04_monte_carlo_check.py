# %% [markdown]
# # Simulation check
#
# Regime 0 is simulated by splitting each path at the extremum time; regime 1
# runs the conditioned diffusion on a sequence of step sizes.

# %%
from perpetual_insider import montecarlo as mc
from perpetual_insider import valuation as va
from perpetual_insider.model import OptionSpec, StatePoint, build_params

put = build_params(0.08, 0.10, 0.20)
spec = OptionSpec(1, "put", 1.0)
bs = va.build_boundaries(spec, put)

# %%
cf = va.value(spec, put, StatePoint(1.0, 1.0), 0, bs).value
est = mc.estimate_value(spec, put, 1.0, 1.0, 0, mc.SimConfig(n_paths=20_000, seed=1), bs)
print(f"closed form {cf:.5f}  simulated {est.mean:.5f} +- {est.stderr:.5f}  z={est.z_score(cf):+.2f}")

# %%
for f in (0.95, 1.05):
    pert = mc.estimate_value(spec, put, 1.0, 1.0, 0, mc.SimConfig(n_paths=20_000, seed=1), bs, perturb=f)
    print(f"boundary x{f}: {pert.mean:.5f}")

# %%
cf1 = va.value(spec, put, StatePoint(0.9, 1.3), 1, bs).value
run = mc.simulate_conditioned_j1(spec, put, 0.9, 1.3, mc.SimConfig(n_paths=5_000, seed=2), dts=[1e-2, 5e-3])
for dt, e in zip(run.dts, run.estimates):
    print(f"dt={dt:g}  {e.mean:.5f} +- {e.stderr:.5f}  (closed form {cf1:.5f})")
print(mc.refinement_trend(run, cf1)["monotone"])
