"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32):
  magic "KMSP" | version | repeated records until EOF, each record being
  name_len | name utf-8 bytes | rank | dims[rank] | float32 data.

Round trips are bit-exact for float32 arrays; other dtypes are cast on save.
"""

import struct

import numpy as np

MAGIC = b"KMSP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays):
    """Write a name -> array mapping; names are stored in sorted order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(arrays):
            # asarray with order="C" keeps rank-0 arrays rank 0
            arr = np.asarray(arrays[name], dtype="<f4", order="C")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path):
    """Read a container back into a name -> float32 ndarray dict."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC:
            raise CheckpointError(f"{path}: bad magic {head!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        out = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise CheckpointError(f"{path}: truncated record header")
            (nlen,) = struct.unpack("<I", raw)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    return out
