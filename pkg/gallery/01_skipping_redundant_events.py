"""
Skipping redundant events
=========================

A process that reads the same file twice in a row learns nothing new the
second time.  The compactor keeps one small table of the latest
(event type, flow target) per flow source and drops repeats, unless
something has flowed into the source in between.
"""

from streamprov import Compactor, EntityId, EventRecord, EventType

P, Q = EntityId.process("P"), EntityId.process("Q")
A, B = EntityId.file("/A"), EntityId.file("/B")
X, Y = EntityId.network("x.com:80"), EntityId.network("y.com:80")

# nine events: two hosts send data to P, P writes two files and forks Q
steps = [
    (EventType.N2_Recv, X), (EventType.N2_Recv, X),
    (EventType.E1_Write, A), (EventType.E1_Write, B),
    (EventType.N2_Recv, Y), (EventType.E2_Fork, Q),
    (EventType.N2_Recv, Y), (EventType.E1_Write, B), (EventType.E1_Write, B),
]
events = [EventRecord(t + 1, et, P, obj, "/bin/app", obj.key, None, t) for t, (et, obj) in enumerate(steps)]

comp = Compactor()
for e in events:
    d = comp.decide(e)
    print(f"t{e.ts}  {e.etype.value:3s} {e.source.key:>9s} -> {e.target.key:<9s} {d.action.value:6s} {d.reason.value}")

# the receive at t7 repeats t5 and nothing reached y.com since, so it goes;
# t8 is kept because P's latest event is now the fork, not the write
print(f"\nskipped {comp.events_skipped} of {comp.events_total}")
