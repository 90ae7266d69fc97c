"""`python -m silentspeech` entry point.

Thread caps for the BLAS backends have to land in the environment before
numpy is imported anywhere, so this module sets them first and only then
pulls in the CLI.
"""

import os
import sys

_threads = os.environ.get("SILENTSPEECH_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

from .cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
