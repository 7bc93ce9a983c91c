from __future__ import annotations

from .. import kernels


def _as_bytes(key) -> bytes:
    if isinstance(key, (bytes, bytearray, memoryview)):
        return bytes(key)
    if isinstance(key, str):
        return key.encode("utf-8")
    if isinstance(key, int):
        return str(key).encode("ascii")
    raise TypeError(f"unsupported shard key type {type(key).__name__}")


def hash_shard(key, n: int) -> int:
    """Stable partition of ``key`` into ``[0, n)`` using FNV-1a 64.

    Strings are UTF-8 encoded and integers hashed as their decimal text, so
    the result is the same in any language that implements FNV-1a.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return 0
    return kernels.fnv1a_64(_as_bytes(key)) % n
