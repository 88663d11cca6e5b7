"""
Reading the identifier audit
============================

The receiver never asks for a packet again. It only compares each packet
identifier with the previous one and writes down anything that is not a
step of exactly one.
"""

from dropstream.audit import AuditState, loss_upper_limit

# %%
# A gap, a repeat and a swapped pair.

for ids in ([1, 2, 3, 5], [1, 2, 2, 3], [1, 2, 4, 3, 5]):
    a = AuditState()
    for pid in ids:
        a.observe(pid)
    print(ids, "->", ", ".join(str(e) for e in a.events))

# %%
# The swap costs three events, two of them "missing". Counting missing
# packets therefore overstates loss when packets arrive late; the raw event
# log keeps enough detail to tell the cases apart afterwards.
#
# Identifiers are 64 bits and wrap without complaint:

a = AuditState()
for pid in [2**64 - 2, 2**64 - 1, 0, 1]:
    a.observe(pid)
print("events across the wrap:", a.events)

# %%
# With no loss at all the best one can claim is an upper limit: had the
# next packet been lost, the ratio would have been 1 / (n + 1).

for n in (10**6, 10**8, 10**12):
    print(f"{n:>16,d} clean packets -> loss below {loss_upper_limit(n, 0):.3e}")
print("99 received, 1 missing ->", loss_upper_limit(99, 1))
