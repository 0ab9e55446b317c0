import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from glmcf.angle import GraphState
from glmcf.checkpoint import MAGIC, decode_state, encode_state, load_checkpoint, save_checkpoint, sidecar_path
from glmcf.flow import FlowConfig, run_flow
from glmcf.monitors import MonitorSuite

from conftest import conformal

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.integers(1, 3), st.data())
def test_round_trip_bit_exact(n, data):
    N = 4 if n == 3 else 8
    shape = (N,) * n
    c = data.draw(arrays(np.float64, (n,), elements=finite))
    phi = data.draw(arrays(np.float64, shape, elements=finite))
    u = data.draw(arrays(np.float64, shape, elements=finite))
    t = data.draw(finite)
    s = GraphState(c, phi, u, t)
    blob = encode_state(s)
    back = decode_state(blob)
    assert back.harmonic.tobytes() == c.tobytes()
    assert back.base_potential.tobytes() == phi.tobytes()
    assert back.u.tobytes() == u.tobytes()
    assert struct.pack("<d", back.t) == struct.pack("<d", t)
    assert encode_state(back) == blob


def test_layout():
    s = GraphState(np.array([0.5, -1.0]), np.zeros((2, 2)), np.arange(4.0).reshape(2, 2), 1.25)
    blob = encode_state(s)
    assert blob[:8] == MAGIC == b"GLMCF01\n"
    assert struct.unpack_from("<IIId", blob, 8) == (1, 2, 2, 1.25)
    body = np.frombuffer(blob[28:], "<f8")
    np.testing.assert_array_equal(body, [0.5, -1.0, 0, 0, 0, 0, 0, 1, 2, 3])


def test_corrupt_files_rejected():
    s = GraphState(np.zeros(1), np.zeros(16), np.ones(16), 0.0)
    blob = encode_state(s)
    with pytest.raises(ValueError, match="magic"):
        decode_state(b"X" + blob[1:])
    with pytest.raises(ValueError, match="size"):
        decode_state(blob[:-8])
    with pytest.raises(ValueError, match="version"):
        decode_state(blob[:8] + struct.pack("<I", 9) + blob[12:])
    with pytest.raises(ValueError, match="truncated"):
        decode_state(blob[:10])


def test_reload_reproduces_next_sample(tmp_path):
    m = conformal(N=16)
    q1, q2 = m.grid.coords()
    s0 = GraphState.initial([0.3, 0.0], np.zeros(m.grid.shape), 0.05 * np.sin(q1) * np.sin(q2))
    suite = MonitorSuite()
    first = run_flow(s0, m, FlowConfig(t_max=0.2, osc_tol=0.0), suite, dt=0.01, sample_every=5)
    state = first.final_state
    path = save_checkpoint(tmp_path / "a.glmcf", state, {"step": first.steps})
    assert sidecar_path(path).exists()
    back, meta = load_checkpoint(path)
    assert meta["step"] == first.steps and back.u0_anchor == state.u0_anchor
    cfg = FlowConfig(t_max=0.3, osc_tol=0.0)
    a = run_flow(state, m, cfg, suite, dt=0.01, sample_every=5, start_step=first.steps)
    b = run_flow(back, m, cfg, suite, dt=0.01, sample_every=5, start_step=first.steps)
    assert [x.row() for x in a.samples] == [x.row() for x in b.samples]
    assert a.final_state.u.tobytes() == b.final_state.u.tobytes()
