import numpy as np

# Packed little-endian record: user u32, product u32, timestamp u64, weight u8.
RECORD_DTYPE = np.dtype(
    [("user", "<u4"), ("product", "<u4"), ("timestamp", "<u8"), ("weight", "u1")]
)
RECORD_SIZE = RECORD_DTYPE.itemsize

assert RECORD_SIZE == 17


def empty_records():
    return np.empty(0, dtype=RECORD_DTYPE)
