#!/usr/bin/env python3
"""Writes the golden fixtures from the byte layouts alone, without the Rust code.

Run from this directory: python3 make_fixtures.py
"""
import math
import struct

UNKNOWN = 255

DIMS = (4, 2, 2)
ORIGIN = (0.5, -1.0, 0.25)
VOXEL = 0.5
CLASSES = 4
LABELS = [0, 1, 2, 2, 1, 0, 255, 255, 0, 3, 255, 255, 2, 2, 255, 255]


def grid():
    out = b"SSCV" + struct.pack("<B3I3ffB", 1, *DIMS, *ORIGIN, VOXEL, CLASSES)
    return out + bytes(LABELS)


def probs():
    values = [0.25, 0.5, 0.125, 0.125, 1.0, 0.0, 0.0, 0.0]
    out = b"SSCP" + struct.pack("<B3IB", 1, 2, 1, 1, CLASSES)
    return out + struct.pack(f"<{len(values)}f", *values)


def pyramid():
    width, height, channels = 3, 2, 2
    scales = [1, 2]
    out = b"SSCF" + struct.pack("<BIIBI", 1, width, height, len(scales), channels)
    for s in scales:
        n = math.ceil(height / s) * math.ceil(width / s) * channels
        values = [0.5 * v - 1.0 + s for v in range(n)]
        out += struct.pack("<I", s) + struct.pack(f"<{n}f", *values)
    return out


def pair(a, b):
    if a == 0 and b == 0:
        return 0
    if a == 0 or b == 0:
        return 1
    return 2 if a == b else 3


def relations(s=2):
    dx, dy, dz = DIMS
    n = dx * dy * dz
    bx, by, bz = dx // s, dy // s, dz // s
    n_super = bx * by * bz

    def block(v):
        i, j, k = v % dx, (v // dx) % dy, v // (dx * dy)
        return i // s + bx * (j // s + by * (k // s))

    cells = n * n_super
    maps = [[False] * cells for _ in range(5)]
    for v in range(n):
        if LABELS[v] == UNKNOWN:
            continue
        for w in range(n):
            if LABELS[w] == UNKNOWN:
                continue
            cell = v * n_super + block(w)
            maps[pair(LABELS[v], LABELS[w])][cell] = True
            maps[4][cell] = True

    out = b"SSCR" + struct.pack("<BIIB", 1, n, n_super, s)
    for bits in maps:
        packed = bytearray(math.ceil(cells / 8))
        for idx, bit in enumerate(bits):
            if bit:
                packed[idx // 8] |= 1 << (idx % 8)
        out += bytes(packed)
    return out


if __name__ == "__main__":
    for name, data in [
        ("grid.sscv", grid()),
        ("probs.sscp", probs()),
        ("pyramid.sscf", pyramid()),
        ("relations.sscr", relations()),
    ]:
        with open(name, "wb") as f:
            f.write(data)
