"""Replay of a regression series with a coefficient break.

Data follow y = 1 + b2 * x + e with b2 jumping from 1 to 3 at row 500. The
replay command trains on the first m rows, waits until every detector has
signalled, then retrains on the m rows starting at the last signal and
continues. The same run is available from the shell:

    openend replay series.csv --functional lm --m 100

Run:  python3 demos/04_regression_replay.py
"""

import os
import sys
import tempfile

import numpy as np

from openend import ChangeSpec, DataModel, generate
from openend.cli import main

rows = generate(DataModel("LM1"), 900, ChangeSpec(400, 2.0), 100, rng=11)
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "series.csv")
    np.savetxt(path, rows, delimiter=",", header="p1,p2,y", comments="", fmt="%.10g")
    print("break enters at data row 500")
    code = main(["replay", path, "--functional", "lm", "--m", "100", "--header",
                 "--runs", "4000", "--grid", "2000"], out=sys.stdout)
print("exit status", code)
