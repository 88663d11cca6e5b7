"""
Faults with a known answer
==========================

The loopback transport can drop, duplicate and delay packets from seeded
random streams and keeps a log of every decision. Replaying that log with
plain Python lists predicts exactly which events the receiver must report.
"""

from dropstream.audit import reconcile
from dropstream.harness.config import ExperimentConfig, Phase, single_stream
from dropstream.harness.runner import run_streams
from dropstream.sender import StopCondition
from dropstream.transport import FaultPlan

# %%
# 200000 small packets with one percent of each fault.

cfg = ExperimentConfig(Phase.FAULT_ORACLE, [single_stream(64)], stop=StopCondition(packets=200_000),
                       burst_size=2048)
plan = FaultPlan(drop_prob=0.01, dup_prob=0.01, reorder_prob=0.01, reorder_depth=3, seed=11)
r = run_streams(cfg, faults=plan, histogram=False)
t = r.truth
print(f"offered {t.offered}, dropped {t.dropped}, duplicated {t.duplicated}, delayed {t.reordered}")

report = r.rx.reports[0]
print(f"received {report.packets}, events {report.event_count}, missing counted {report.total_missing}")

# %%
# The receiver's events against the replayed expectation.

diffs = reconcile(report, t, dst_port=9000, expected_first_id=0)
print("mismatches:", len(diffs))

# %%
# "Missing" overcounts true loss because every late packet adds two.

print("true drops", t.dropped, "vs missing events", report.total_missing)
