"""
From an uploaded webshell to data exfiltration
==============================================

Generate a small corpus where an attacker uploads a PHP shell, uses it to
tamper with a cron script and finally reads collected secrets.  The engine
labels each step, raises staged alerts and exports the attack chain.
"""

import tempfile
from pathlib import Path

from streamprov import Engine, EngineConfig, ScenarioName, ScenarioSpec, generate, read_events

work = Path(tempfile.mkdtemp(prefix="streamprov-gallery-"))
manifest = generate(ScenarioSpec(ScenarioName.L1_Webshell, seed=7, benign_event_target=20_000),
                    str(work / "l1.jsonl"), str(work / "l1.json"))
print(f"{manifest.event_count} events, {manifest.attack_event_count} of them belong to the attack")

engine = Engine(EngineConfig(chain_dir=str(work / "chains")))
stats = engine.run(read_events(str(work / "l1.jsonl")))

# staged alerts: Threat level for each tactic, APT once the stages line up
for a in engine.alerts:
    print(f"{a.severity.value:6s} {a.alert_name:22s} {a.process.key:>7s} {a.process_name}")

print(f"\nskip ratio {stats.skip_ratio:.1%}, pruned {stats.process_prune_ratio:.1%} of processes")

# the APT alert carries a backward chain from the exfiltrating process
chain = engine.chains[0]
files = [str(e) for e in chain.entry_points if e.kind.name == "FILE"]
remotes = len(chain.entry_points) - len(files)
print(f"chain: {len(chain.nodes)} entities, {len(chain.edges)} edges")
# the compromised web worker also served ordinary clients, so many remote peers show up
print(f"entry points: {remotes} remote endpoints and files {files}")
chain.write(str(work / "apt.dot"))
print(f"graphviz export: {work / 'apt.dot'}")
engine.close()
