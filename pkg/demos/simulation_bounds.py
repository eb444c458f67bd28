"""
Pool size, threshold and simulated error rates of Sim-M
=======================================================

A single similarity test between two nodes errs with a fixed probability.
Averaging many tests over shared kNN candidates (Sim-M) concentrates the
score, so a large enough candidate pool drives both error types down by any
chosen factor gamma. This script evaluates the required pool size, the
decision threshold, and checks both with a Monte-Carlo simulation.
"""

from battention.multitest import (
    TestModel,
    min_m_binary,
    min_m_bound_binary,
    min_m_bound_real,
    min_m_real,
    simulate,
    single_test_expectations,
    threshold_s_t,
)

# Binary tests: same-category pairs connect with probability p, cross pairs with q.
model = TestModel(p=0.8, q=0.2, alpha=0.7, m=1000)
print("expected single-test (noisy, missing) counts at m=1000:", single_test_expectations(model))

r = simulate(model, trials=10_000, seed=0)
print(f"simulated means: noisy {r.noisy_mean:.2f}, missing {r.miss_mean:.2f}")

# Required pool size grows with the requested reduction factor.
for gamma in (2, 4, 10, 100):
    m = TestModel(p=0.8, q=0.2, alpha=0.7, gamma=gamma)
    print(f"gamma={gamma:>4}: bound {min_m_bound_binary(m):8.2f} -> m = {min_m_binary(m)}")

# At that pool size, thresholding Sim-M removes noisy and missing edges.
for gamma in (2, 10):
    m = TestModel(p=0.8, q=0.2, alpha=0.7, gamma=gamma)
    r = simulate(m, trials=10_000, seed=gamma)
    print(f"gamma={gamma}: m={r.m} S_t={r.threshold_used:.4f} "
          f"single (noisy, missing) rates ({r.noisy_rate_single:.4f}, {r.miss_rate_single:.4f}) "
          f"-> after threshold ({r.noisy_rate_post:.4f}, {r.miss_rate_post:.4f})")

# The threshold approaches the midpoint of the two means as the pool grows.
m = TestModel(p=0.9, q=0.2, alpha=0.8)
for pool in (100, 500, 5000, 10**6):
    print(f"m={pool:>7}: S_t = {threshold_s_t(m, 0.01, pool):.4f}")
print("midpoint:", (m.cross_mean + m.same_mean) / 2)

# Real-valued similarities in [-1, 1] need a looser bound than 0/1 tests.
for sp, sm in ((0.8, 0.3), (0.9, 0.3)):
    real = TestModel(mode="real", s_plus=sp, s_minus=sm, alpha=0.7, gamma=2)
    binary = TestModel(p=sp, q=sm, alpha=0.7, gamma=2)
    print(f"s+={sp} s-={sm}: real-valued bound {min_m_bound_real(real):8.1f} "
          f"vs 0/1 bound at p={sp}, q={sm}: {min_m_bound_binary(binary):7.1f}")

real = TestModel(mode="real", s_plus=0.8, s_minus=0.3, alpha=0.7, gamma=2)
r = simulate(real, trials=10_000, seed=3, m=min_m_real(real))
print(f"real-valued: m={r.m} S_t={r.threshold_used:.4f} same mean {r.simm_same.mean():.4f} "
      f"cross mean {r.simm_cross.mean():.4f} post rates ({r.noisy_rate_post}, {r.miss_rate_post})")
