#!/usr/bin/env python3
"""Stand-in for a MiniZinc executable used by the adapter tests.

Behaviour is selected by a ``% fake:`` comment in the model file:
``sat`` prints two solutions, ``unsat`` reports unsatisfiable,
``unknown`` reports no answer, ``error`` exits non-zero. The command line is
appended to $FAKE_MZN_LOG when set.
"""
import json
import os
import sys

args = sys.argv[1:]
if os.environ.get("FAKE_MZN_LOG"):
    with open(os.environ["FAKE_MZN_LOG"], "a") as fh:
        fh.write(json.dumps(args) + "\n")
model = next(a for a in args if a.endswith(".mzn"))
text = open(model).read()
mode = "sat"
for line in text.splitlines():
    if line.startswith("% fake:"):
        mode = line.split(":", 1)[1].strip()
if "constraint 1 = 2;" in text:
    mode = "unsat"
if mode == "sat":
    sols = [{"q": [2, 4, 1, 3]}, {"q": [3, 1, 4, 2]}]
    if "-a" not in args:
        sols = sols[:1]
    for s in sols:
        print(json.dumps(s))
        print("----------")
    if "-a" in args:
        print("==========")
    print("%%%mzn-stat: solveTime=0.0125")
elif mode == "unsat":
    print("=====UNSATISFIABLE=====")
    print("%%%mzn-stat: solveTime=0.002")
elif mode == "unknown":
    print("=====UNKNOWN=====")
else:
    print("Error: type error in constraint", file=sys.stderr)
    print("=====ERROR=====")
    sys.exit(1)
