"""Writes the golden NAF1/NPF1 files with struct.pack, independent of the Rust encoder."""
import struct
from pathlib import Path

here = Path(__file__).parent


def name(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


naf = b"NAF1" + struct.pack("<HII", 1, 3, 2)
naf += name("stem") + struct.pack("<BBBI", 0, 0, 1, 2)
naf += struct.pack("<6d", 0.5, -1.25, 2.0, 3.0, 4.75, -6.0)
naf += name("blocké") + struct.pack("<BBBI", 2, 1, 0, 1)
naf += struct.pack("<3f", 0.1, -2.5, 1e-3)
(here / "golden.naf").write_bytes(naf)

npf = b"NPF1" + struct.pack("<III", 3, 4, 5)
npf += struct.pack("<4H", 0, 4, 2, 1)
for model, preds in [("m0", [0, 4, 2, 2]), ("m1", [1, 4, 2, 1]), ("mé", [0, 0, 0, 0])]:
    npf += name(model) + struct.pack("<4H", *preds)
(here / "golden.npf").write_bytes(npf)
