import textwrap

import pytest

# toy external predictor speaking the framed stdin/stdout protocol:
# answers every patch with constant binary logit 3 and zero class logits
ECHO_SERVER = textwrap.dedent("""
    import struct, sys
    import numpy as np

    def read_frame(stream):
        head = stream.read(4)
        if len(head) < 4:
            return None
        (n,) = struct.unpack("<I", head)
        return stream.read(n)

    while True:
        payload = read_frame(sys.stdin.buffer)
        if payload is None:
            break
        nx, ny, nz = struct.unpack("<III", payload[:12])
        n = nx * ny * nz
        bin_logits = np.full(n, 3.0, dtype="<f4").tobytes()
        cls_logits = np.zeros(12 * n, dtype="<f4").tobytes()
        out = sys.stdout.buffer
        out.write(struct.pack("<I", len(bin_logits)) + bin_logits)
        out.write(struct.pack("<I", len(cls_logits)) + cls_logits)
        out.flush()
""")


@pytest.fixture
def echo_server_path(tmp_path):
    path = tmp_path / "echo_server.py"
    path.write_text(ECHO_SERVER)
    return path
