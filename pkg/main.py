"""
drbn-lab – Command-Line Entry Point.
Run with:  python main.py {train,generate,semisup,inspect} [options]

This file is intentionally thin. Commands live in drbn/controllers/cli_controller.py.
"""

import os
import sys

from drbn.config.settings import compute_settings

# BLAS/OpenMP read these once, when numpy is first imported
if compute_settings.THREADS > 0:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(compute_settings.THREADS))

from drbn.controllers.cli_controller import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
