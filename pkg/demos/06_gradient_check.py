#!/usr/bin/env python3
"""Verify the hand-derived gradients against finite differences.

Every loss gradient (with respect to embeddings) and every pipeline
gradient (with respect to encoder parameters, both encoder kinds, both
modalities, and the temperature) is compared to central differences.
Equivalent to `awelab grad-check`.
"""

import time

from awelab import run_gradient_suite

t0 = time.perf_counter()
result = run_gradient_suite(seeds=range(3))
elapsed = time.perf_counter() - t0

print(f"{len(result.checks)} checks in {elapsed:.1f}s")
print(f"max relative error: {result.max_err:.2e}")

by_group = {}
for check in result.checks:
    group = check.name.split("/")[0]
    by_group.setdefault(group, []).append(check)
for group, checks in sorted(by_group.items()):
    worst = max(c.max_err for c in checks)
    status = "ok" if all(c.ok for c in checks) else "FAILED"
    print(f"  {group:>9}: {len(checks):3d} checks, worst {worst:.2e}  {status}")

assert result.ok, "gradient verification failed"
print("all gradients match finite differences")
