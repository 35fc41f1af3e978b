"""
Mailboxes behind two proxies
============================

Who can pair a mailbox deposit with its sender?  The mailbox host alone
cannot, nor can it with one of the two proxies; only with both does every
trail survive.  Senders' traffic does not depend on their infection.
"""

from tracepriv import adversary as adv
from tracepriv.harness import load_config
from tracepriv.protocols import Variant, run_variant
from tracepriv.simworld import build_world

cfg = load_config("default.cfg")
world = build_world(cfg.scenario(1))
run = run_variant(world, cfg.variant_config(Variant.PMS))

for coalition in ((), (0,), (1,), (0, 1)):
    r = adv.pms_pairing(run, coalition, seed=1)
    print(f"host + proxies {list(coalition)!s:7s} pairing {r.success_rate:.4f}  chance {r.chance_level:.4f}")

sick = world.timeline.diagnosed()[0]
day = max(run.clients[sick].sent_per_day)
print(f"user {sick} (diagnosed) sent {sum(run.clients[sick].sent_per_day.values())} onions over {day + 1} days, "
      f"each {run.servers['proxy-0'].view.inbound('SEND_BUNDLE')[0].payload['onions'].data.shape[1]} bytes")
