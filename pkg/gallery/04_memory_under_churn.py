"""
Memory under process churn
==========================

A web server forks a worker per request, and helpers come and go.  With
exit-time pruning the number of resident entities levels off; without it
every exited process stays in the graph.
"""

from streamprov import Engine, EngineConfig, ScenarioName, ScenarioSpec, generate_lines, parse_event


def peak(events, **cfg):
    lines, _ = generate_lines(ScenarioSpec(ScenarioName.BenignChurn, seed=7, benign_event_target=events))
    engine = Engine(EngineConfig(**cfg))
    engine.run(parse_event(line, i) for i, line in enumerate(lines))
    engine.close()
    return engine.peak_resident


for n in (20_000, 60_000, 180_000):
    print(f"{n:>7d} events: peak resident {peak(n):>6d} with pruning, {peak(n, pruning=False):>6d} without")
