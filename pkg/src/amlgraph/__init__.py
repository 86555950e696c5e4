"""Graph-based detection of money-laundering transactions in UTXO transaction graphs."""
import numba

# the bundled TBB is too old on many systems; the workqueue layer is always available
numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
