"""
Where the threads go
====================

Inside one core complex there are four logical cores. Position 0 takes the
network interrupt, position 1 is its hyperthread sibling, and positions 2
and 3 belong to the second physical core. The search tries every placement
of the receiving thread and the per-stream workers.
"""

from dropstream.topology import PRESETS, enumerate_assignments, format_plans, validate

# %%
# One stream, no pruning: 4 receiver positions times 4 worker positions.

one = enumerate_assignments(1, apply_rule_w=False)
print(len(one), "plans")

# %%
# Two streams, with every worker on a position of its own that is neither
# the interrupt's nor the receiving thread's.

two = enumerate_assignments(2, apply_rule_w=True)
print(format_plans(two))

# %%
# Why the others are out:

for plan in enumerate_assignments(2, apply_rule_w=False)[:6]:
    print(f"{str(plan):24s}", "; ".join(validate(plan)) or "ok")

# %%
# The shipped two-stream preset.

best = PRESETS["paper-2stream"]
print(best, [f"{r / 1e9:.1f} Gb/s" for r in best.stream_rates])
