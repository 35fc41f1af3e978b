"""
The privacy matrix for one seed
===============================

Run the default population study once and print the verdicts next to the
expected ones.  ``tracepriv compare`` does the same over many seeds.
"""

import sys

from tracepriv.harness import run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
report = run_scenario("default.cfg", seed, write=False)
print(report.matrix.render())
print("matches expected:", report.matrix.matches)
