"""Streaming monitoring of a mean shift.

A training segment of m = 100 white-noise observations fixes the long-run
variance. Afterwards observations arrive one at a time and the three
detectors are updated after each arrival. The mean shifts by 0.8 after
300 monitored observations. The E detector reuses all observations before a
candidate change point as its pre-change estimate, which pays off for late
changes.

Run:  python3 demos/02_streaming_monitor.py
"""

from openend import DataModel, ChangeSpec, LRVConfig, Monitor, bandwidth_rule, generate, make_config
from openend.limits import LimitSpec, MCSettings, critical_value

m, k_star, delta = 100, 300, 0.8
data = generate(DataModel("M1"), 1500, ChangeSpec(k_star, delta), m, rng=3)

mc = MCSettings(runs=4000, grid=2000)
crit = {k: critical_value(LimitSpec(k), 0.05, mc) for k in "EQP"}
print("critical values:", {k: round(v, 4) for k, v in crit.items()})

cfg = make_config(m, crit)
mon = Monitor.from_training(data[:m], cfg, LRVConfig(bandwidth_rule(m)))
for row in data[m:]:
    mon.step(row)
    if mon.all_rejected:
        break

print(f"change enters at monitored observation {k_star}")
for kind, k in mon.first_rejection.items():
    delay = "no alarm" if k is None else f"alarm at k={k} (delay {k - k_star})"
    print(f"  {kind.value}: {delay}")

last = mon.history[-1]
print("final weighted values:", {k.value: round(v, 3) for k, v in last.weighted.items()})
