"""Named random substreams derived from one root seed."""
import hashlib
import os


def substream(seed: int, *names) -> int:
    """Deterministic 63-bit seed derived from a root seed and a name path."""
    key = ":".join([str(seed)] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def default_seed(fallback: int = 0) -> int:
    """The ``ST2_SEED`` environment variable if set, else ``fallback``."""
    value = os.environ.get("ST2_SEED")
    return int(value) if value not in (None, "") else fallback
