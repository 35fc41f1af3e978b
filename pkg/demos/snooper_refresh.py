"""
Sensors against token refresh
=============================

Three sensors sit in the busiest places and chain every sighting of the
same token.  With one token for the whole run nearly everyone seen twice
is followed; refreshing tokens breaks the chains.
"""

from dataclasses import replace

from tracepriv import adversary as adv
from tracepriv.harness import load_config
from tracepriv.simworld import build_world

scenario = load_config("default.cfg").scenario(1)

for refresh in (scenario.horizon, 288, 12, 3, 1):
    cfg = replace(scenario, tokens=replace(scenario.tokens, refresh_interval=refresh))
    world = build_world(cfg)
    log, owners = adv.build_sensor_log(world, world.schedules)
    r = adv.snooper_track(log, cfg.tokens, owners=owners, seed=1)
    label = "static" if refresh == scenario.horizon else f"{refresh} slot(s)"
    print(f"refresh {label:11s} tracked {r.success_rate:.3f}  chance {r.chance_level:.3f}  "
          f"tracks {r.notes['tracks']}")
