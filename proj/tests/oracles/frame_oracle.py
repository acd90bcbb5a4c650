"""Independent frame builder used to freeze the conformance vectors."""
import pathlib
import struct
import sys


def crc16(data):
    crc = 0xFFFF
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else crc << 1
            crc &= 0xFFFF
    return crc


def default_code(mA):
    best = min(range(256), key=lambda c: (abs(3.0 * (c / 255.0) ** 1.1 - mA), c))
    return best


def channels(modes):
    bits = 0
    for i, m in enumerate(modes):
        bits |= m << (2 * i)
    return bits


def frame(op, wave, f0, f1, up, hold, down, pos, neg, a0, a1, ch, dur):
    body = struct.pack("<HBBBHHHHHHHHHIH", 0xE7AC, 1, op, wave, f0, f1, up, hold, down, pos, neg, a0, a1, ch, dur)
    assert len(body) == 29
    return body + struct.pack("<H", crc16(body))


assert crc16(b"123456789") == 0x29B1
exp = channels([1, 2] + [0] * 13)
c1 = default_code(1.0)
vectors = {
    "tonic100_1mA": frame(1, 2, 100, 100, 0, 3000, 0, 300, 300, c1, c1, exp, 3000),
    "amp20_1mA": frame(1, 2, 20, 20, 700, 1600, 700, 300, 300, default_code(0.7), c1, exp, 3000),
    "freq40_170_2mA": frame(1, 2, 40, 170, 700, 1600, 700, 300, 300, default_code(2.0), default_code(2.0), exp, 3000),
    "stop": frame(2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0),
    "ping": frame(4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0),
}
print("code(1.0 mA) =", c1, "code(0.7) =", default_code(0.7), "code(2.0) =", default_code(2.0))
for name, v in vectors.items():
    print(name, v.hex())

if len(sys.argv) > 1:
    fixtures = pathlib.Path(sys.argv[1])
    bad = 0
    for name, v in vectors.items():
        frozen = (fixtures / (name + ".hex")).read_text().strip().lower()
        if frozen != v.hex():
            print("mismatch", name, frozen)
            bad += 1
    sys.exit(1 if bad else 0)
