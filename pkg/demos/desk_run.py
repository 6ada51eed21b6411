"""Full desk-scale run: synthetic corpus, training, every inference system, reports.

Run:  python demos/desk_run.py [workdir]      (default: desk-run/)

Equivalent to ``fgocr desk --workdir <workdir> --force -v``.  Prints the
subset CER table, the baseline's length bins and the time spent per stage.
"""

import logging
import sys
from pathlib import Path

from fgocr.commands import Workspace
from fgocr.desk import desk_config, run_desk

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
root = Path(sys.argv[1] if len(sys.argv) > 1 else "desk-run")
result = run_desk(desk_config(root), Workspace(root))
print(result.summary())
print(next(b for b in result.evaluation.bins if b.system == "baseline").format())
