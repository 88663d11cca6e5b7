"""
Packet size steps on a simulated host
=====================================

The simulated receiving host charges a fixed cost per packet plus a cost per
started 64-byte segment. One byte past a segment boundary costs a whole
extra segment, so the lossless packet rate steps down between s and s + 1.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from dropstream.harness.config import ExperimentConfig, Phase, single_stream
from dropstream.harness.phases import run_phase
from dropstream.sender import StopCondition
from dropstream.transport import HostCostModel

# %%
# A shortened sweep: a few sizes either side of a boundary.

cfg = ExperimentConfig(Phase.SIZE_SWEEP, [single_stream(64, line_rate=100e9)], stop=StopCondition(packets=5000),
                       burst_size=64, simulate=HostCostModel(),
                       params={"sizes": [64, 65, 128, 129, 192, 193, 256, 257]})
rep = run_phase(cfg)
print(rep.table(["size", "payload", "pause_ns", "packet_rate"]))

# %%
# Against the model's own capacity. Short runs land a little above it:
# the host's 256-packet queue soaks up part of the burst.

cost = HostCostModel()
for row in rep.rows:
    print(row["size"], f"{row['packet_rate'] / 1e6:6.2f} Mp/s measured,",
          f"{cost.capacity_pps(row['size']) / 1e6:6.2f} Mp/s capacity")

plt.plot([r["size"] for r in rep.rows], [r["packet_rate"] / 1e6 for r in rep.rows], "o-")
plt.xlabel("bytes per slot")
plt.ylabel("lossless Mp/s")
plt.savefig("size_steps.png", dpi=100)
print("wrote size_steps.png")
