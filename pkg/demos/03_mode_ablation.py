# %% [markdown]
# # Mode ablation
#
# The three modes solve identical QPs; they differ only in how each solve
# starts. Here we compare the total number of active-set iterations over whole
# runs. The same grid is available from the command line:
#
#     turboadmm ablate --agents 2,4 --repeats 3 --out ablate.csv

# %%
from turboadmm.bench import ablate

cells = ablate([2, 4], ["base", "hotstart", "turbo"], repeats=1, warmup=0)

# %%
print(f"{'N':>3} {'mode':>9} {'ADMM':>5} {'QP iters':>9} {'wall [s]':>9} {'min sep':>8}")
for c in cells:
    print(f"{c.N:>3} {c.mode:>9} {c.admm_iters:>5} {c.total_qp_iters:>9} "
          f"{c.wall_ms_mean / 1e3:>9.2f} {c.min_sep:>8.4f}")

# %% [markdown]
# Per N, base mode pays a full cold solve per agent per iteration, hotstart
# reuses the last working set, and turbo also replaces the very first cold
# solve with a Riccati warm start.

# %%
for N in (2, 4):
    row = {c.mode: c.total_qp_iters for c in cells if c.N == N}
    print(f"N={N}: base/turbo = {row['base'] / row['turbo']:.1f}x")
