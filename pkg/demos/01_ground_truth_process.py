"""
Ground-truth process: simulation, closed forms, and the Monte-Carlo check
=========================================================================

The bundled ground truth is a classical multivariate self-exciting
process with exponential kernels.  Everything about it is available in
closed form, which is what lets it serve as a numerical reference for
the learned model: we can simulate exactly (thinning), evaluate the
intensity and the compensator exactly, and compare the Monte-Carlo
integral estimator against the analytic value.
"""

import numpy as np

from seqsynth import (
    default_scenario,
    exact_compensator,
    exact_intensity,
    exact_log_likelihood,
    mc_compensator,
    simulate_dataset,
    simulate_thinning,
    time_rescaled_intervals,
)

params = default_scenario()
print("baseline rates mu:", params.mu)
print("excitation matrix:\n", params.A)
print("branching ratio (spectral radius):",
      round(float(np.max(np.abs(np.linalg.eigvals(params.A / params.delta)))), 3))

# --- one exact draw ----------------------------------------------------------
seq = simulate_thinning(params, np.random.default_rng(0))
print(f"\nsimulated {len(seq)} events on [0, {params.T}]; first five:")
for t, k in list(zip(seq.times, seq.types))[:5]:
    print(f"  t = {t:6.3f}  type {k}")

# the intensity right after an event jumps by the excitation column
t_star = float(seq.times[3])
lam_before = exact_intensity(params, seq.times[:3], seq.types[:3], t_star)
lam_after = exact_intensity(params, seq.times[:4], seq.types[:4], t_star + 1e-9)
print("\nintensity just before event 4:", np.round(lam_before, 4))
print("intensity just after event 4: ", np.round(lam_after, 4))

# --- the likelihood and its Monte-Carlo twin ----------------------------------
ll = exact_log_likelihood(params, seq.times, seq.types)
print(f"\nexact log-likelihood of the draw: {ll:.3f}")

a, b = float(seq.times[0]), float(seq.times[-1])
analytic = exact_compensator(params, seq.times, seq.types, a, b)


def total_intensity(ts):
    ts = np.asarray(ts)
    out = np.tile(params.mu.sum(), len(ts))
    for tj, kj in zip(seq.times, seq.types):
        live = ts > tj
        out[live] += (params.A[:, kj][:, None]
                      * np.exp(-params.delta[:, kj][:, None] * (ts[live] - tj))).sum(axis=0)
    return out


for n_mc in (10, 100, 1000):
    est = mc_compensator(total_intensity, seq.times, n_mc, np.random.default_rng(1))
    print(f"compensator on [{a:.2f}, {b:.2f}]: analytic {analytic:.4f}, "
          f"MC(n={n_mc:4d}) {est:.4f}  rel err {abs(est - analytic) / analytic:.2e}")

# --- goodness of fit via time rescaling ----------------------------------------
seqs = [simulate_thinning(params, np.random.default_rng([1, i])) for i in range(200)]
xs = time_rescaled_intervals(params, seqs, max_intervals_per_seq=8)
print(f"\ntime-rescaled intervals: n={len(xs)}, mean {xs.mean():.3f} (Exp(1) -> 1.0)")

# --- labels carry real signal ---------------------------------------------------
data = simulate_dataset(params, 50, seed=3)
counts = [int(np.sum(s.types == 0)) for s in data]
labels = [s.label for s in data]
print(f"label share: {np.mean(labels):.2f}; "
      f"median type-0 count {np.median(counts):.0f} splits the labels")
