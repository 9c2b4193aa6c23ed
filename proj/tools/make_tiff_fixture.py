#!/usr/bin/env python3
"""Prints the TIFF reader fixtures as C++ arrays (tests/tiff_fixtures.inc).

Each fixture is cross-checked with tifffile when it is installed.
"""
import io
import struct
import zlib

VALUES = [1.5, 2.5, 3.5, 4.5]
SCALE = (30.0, 30.0, 0.0)
TIEPOINT = (0.0, 0.0, 0.0, 500000.0, 5000000.0, 0.0)


def build(compression):
    payload = struct.pack("<4f", *VALUES)
    strip = zlib.compress(payload, 9) if compression == 8 else payload

    # SHORT=3, LONG=4, DOUBLE=12
    entries = [
        (256, 3, 1, 2),
        (257, 3, 1, 2),
        (258, 3, 1, 32),
        (259, 3, 1, compression),
        (262, 3, 1, 1),
        (273, 4, 1, None),  # strip offset, patched below
        (277, 3, 1, 1),
        (278, 3, 1, 2),
        (279, 4, 1, len(strip)),
        (339, 3, 1, 3),
        (33550, 12, 3, "scale"),
        (33922, 12, 6, "tie"),
    ]
    ifd_off = 8
    ifd_len = 2 + 12 * len(entries) + 4
    scale_off = ifd_off + ifd_len
    tie_off = scale_off + 8 * len(SCALE)
    strip_off = tie_off + 8 * len(TIEPOINT)

    out = io.BytesIO()
    out.write(b"II*\x00" + struct.pack("<I", ifd_off))
    out.write(struct.pack("<H", len(entries)))
    for tag, typ, count, value in entries:
        out.write(struct.pack("<HHI", tag, typ, count))
        if value == "scale":
            out.write(struct.pack("<I", scale_off))
        elif value == "tie":
            out.write(struct.pack("<I", tie_off))
        elif value is None:
            out.write(struct.pack("<I", strip_off))
        elif typ == 3:
            out.write(struct.pack("<HH", value, 0))
        else:
            out.write(struct.pack("<I", value))
    out.write(struct.pack("<I", 0))
    out.write(struct.pack("<3d", *SCALE))
    out.write(struct.pack("<6d", *TIEPOINT))
    out.write(strip)
    return out.getvalue()


def check(data):
    try:
        import tifffile
    except ImportError:
        return
    arr = tifffile.imread(io.BytesIO(data))
    assert arr.tolist() == [[1.5, 2.5], [3.5, 4.5]], arr


def tifffile_variants():
    """Layouts written by tifffile; values follow formulas the tests recompute."""
    import numpy as np
    import tifffile

    out = {}
    be = np.array([[(r * 3 + c) * 1000 for c in range(3)] for r in range(2)], dtype=">u2")
    buf = io.BytesIO()
    tifffile.imwrite(buf, be, byteorder=">")
    out["kFixtureBigEndianU16"] = buf.getvalue()

    two = np.array([[[r * 10 + c - 20, -(r * 10 + c)] for c in range(4)] for r in range(3)], dtype="<i2")
    buf = io.BytesIO()
    tifffile.imwrite(buf, two, photometric="minisblack", planarconfig="contig",
                     compression="zlib", predictor=2)
    out["kFixturePredictorI16"] = buf.getvalue()

    tiled = np.array([[(r * 7 + c * 3) % 251 for c in range(20)] for r in range(18)], dtype="u1")
    buf = io.BytesIO()
    tifffile.imwrite(buf, tiled, tile=(16, 16), compression="zlib")
    out["kFixtureTiledU8"] = buf.getvalue()
    for data in out.values():
        assert tifffile.imread(io.BytesIO(data)) is not None
    return out


def emit(name, data):
    print(f"const std::uint8_t {name}[] = {{")
    for i in range(0, len(data), 16):
        print("    " + ", ".join(f"0x{b:02x}" for b in data[i:i + 16]) + ",")
    print("};")


if __name__ == "__main__":
    for name, comp in (("kFixtureRaw", 1), ("kFixtureDeflate", 8)):
        data = build(comp)
        check(data)
        emit(name, data)
    for name, data in tifffile_variants().items():
        emit(name, data)
