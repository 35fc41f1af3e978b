"""
Alice and Bob under every system
================================

Bob and Alice meet once; Bob is diagnosed five days later.  Every system
should notify Alice alone.  The message counts show what each system pays
for that answer.
"""

from tracepriv.protocols import TABLE_VARIANTS, poll_exposure, run_variant
from tracepriv.simworld import build_world, canonical_scenario

world = build_world(canonical_scenario())
print("oracle:", sorted(world.oracle()))

for variant in TABLE_VARIANTS:
    run = run_variant(world, variant)
    alice = poll_exposure(run, 0)
    m = run.metrics()
    print(f"{variant.value:12s} exposed {sorted(run.exposed_set())}  first told at slot {alice.slot}  "
          f"{m['messages']} messages, {len(run.servers)} server(s)")
