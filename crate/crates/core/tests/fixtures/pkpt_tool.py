#!/usr/bin/env python3
"""Byte-level writer and dumper for PKPT checkpoints, independent of the Rust code.

    python3 pkpt_tool.py make golden3.pkpt   # regenerate the golden fixture
    python3 pkpt_tool.py dump golden3.pkpt   # print every field
"""
import struct
import sys

KINDS = ["weight", "bias", "ln_gain", "ln_bias", "embedding", "other"]
ZONES = ["none", "encoder", "decoder", "head"]

GOLDEN = [
    # name, kind, zone, layer, shape, data
    ("emb.weight", 4, 1, -1, [4, 3], [0.02 * (i - 6) for i in range(12)]),
    ("enc.0.w.weight", 0, 1, 0, [3, 3], [1.0, -0.5, 0.25, 0.0, 2.0, -1.5, 0.125, 3.0, -0.75]),
    ("enc.0.w.bias", 1, 1, 0, [3], [0.1, -0.2, 0.3]),
]


def make(path):
    out = bytearray(b"PKPT")
    out += struct.pack("<IQ", 1, len(GOLDEN))
    for name, kind, zone, layer, shape, data in GOLDEN:
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<BBiI", kind, zone, layer, len(shape))
        out += struct.pack("<%dQ" % len(shape), *shape)
        out += struct.pack("<%df" % len(data), *data)
    with open(path, "wb") as f:
        f.write(out)


def dump(path):
    b = open(path, "rb").read()
    assert b[:4] == b"PKPT", "bad magic"
    version, count = struct.unpack_from("<IQ", b, 4)
    print("version", version, "count", count)
    p = 16
    for _ in range(count):
        (n,) = struct.unpack_from("<I", b, p)
        p += 4
        name = b[p : p + n].decode()
        p += n
        kind, zone, layer, ndim = struct.unpack_from("<BBiI", b, p)
        p += 10
        shape = struct.unpack_from("<%dQ" % ndim, b, p)
        p += 8 * ndim
        numel = 1
        for d in shape:
            numel *= d
        data = struct.unpack_from("<%df" % numel, b, p)
        p += 4 * numel
        print(name, KINDS[kind], ZONES[zone], layer, list(shape), [float("%.9g" % x) for x in data])
    assert p == len(b), "trailing bytes"
    print("bytes", len(b))


if __name__ == "__main__":
    {"make": make, "dump": dump}[sys.argv[1]](sys.argv[2])
