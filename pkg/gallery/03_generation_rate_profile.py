"""
Generation rate versus consumption rate
=======================================

Corpora alternate busy and idle phases.  The per-second event histogram of
a replay shows the profile; the engine's throughput is compared against
the busy-phase rate.
"""

import tempfile
from pathlib import Path

import numpy as np

from streamprov import Engine, ScenarioName, ScenarioSpec, StreamSource, generate, open_source, rate_curve

work = Path(tempfile.mkdtemp(prefix="streamprov-gallery-"))
path = str(work / "benign.jsonl")
m = generate(ScenarioSpec(ScenarioName.BenignOnly, seed=3, benign_event_target=50_000), path)

stream = open_source(StreamSource.replay(path))
engine = Engine()
stats = engine.run_threaded(stream)
curve = rate_curve(stream, "event")

# column 0 is the second since the first event, column 1 the count
counts = curve[:, 1]
busy = counts[counts > np.median(counts)]
print(f"{len(curve)} seconds of event time, peak {counts.max()} events/s, busy mean {busy.mean():.0f} events/s")
print(f"profile busy rate {m.generation_profile['busy_rate']:.0f} events/s")
print(f"consumed {stats.throughput_eps:,.0f} events/s, {stats.throughput_eps / m.generation_profile['busy_rate']:.0f}x the busy rate")
print(f"queue high water {stats.queue_high_water}")
engine.close()
