"""Bit packing helpers shared across the pipeline.

Convention everywhere: bits are numpy uint8 arrays of 0/1 values, packed
into bytes most-significant-bit first.
"""

import numpy as np


def pack_bits(bits):
    """Pack a 0/1 array into bytes, MSB first. Trailing bits are zero padded."""
    bits = np.asarray(bits, dtype=np.uint8)
    return np.packbits(bits).tobytes()


def unpack_bits(data, bit_len=None):
    """Unpack bytes into a 0/1 uint8 array, MSB first."""
    arr = np.frombuffer(data, dtype=np.uint8)
    bits = np.unpackbits(arr)
    if bit_len is not None:
        if bit_len > bits.size:
            raise ValueError(f"requested {bit_len} bits from {bits.size}-bit buffer")
        bits = bits[:bit_len]
    return bits


def bits_to_bytes_array(bits):
    """Non-overlapping 8-bit groups as byte values (input length truncated to a multiple of 8)."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = (bits.size // 8) * 8
    return np.packbits(bits[:n])
