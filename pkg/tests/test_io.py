import numpy as np
import pytest

from stokesnull import io as sio
from stokesnull.stokes import VelocityField, random_stream_velocity


def test_field_dump_round_trip(small, rng, tmp_path):
    g = small.grid
    vecs = [random_stream_velocity(g, rng) for _ in range(3)]
    path = sio.write_field_dump(tmp_path / "y.bin", g, [0.0, 0.5, 1.0], vecs)
    header, records = sio.read_dump(path)
    assert header == {"kind": sio.KIND_FACES, "nx": 16, "ny": 16, "nt": g.nt, "T": 1.0, "nsteps": 3}
    for vec, (t, (u, v)) in zip(vecs, records):
        vf = VelocityField.from_vector(g, vec)
        np.testing.assert_array_equal(u, vf.u)
        np.testing.assert_array_equal(v, vf.v)
    assert [r[0] for r in records] == [0.0, 0.5, 1.0]


def test_node_dump_round_trip(small, tmp_path):
    g = small.grid
    arrs = [small.weights.log_alpha[k] for k in (1, 5)]
    header, records = sio.read_dump(sio.write_node_dump(tmp_path / "w.bin", g, [0.1, 0.2], arrs))
    assert header["kind"] == sio.KIND_NODES
    for a, (_, (b,)) in zip(arrs, records):
        np.testing.assert_array_equal(a, b)


def test_read_dump_rejects_other_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        sio.read_dump(p)


def test_csv_round_trip_is_exact(tmp_path):
    vals = [(1, 0.1, 1e-300), (2, np.float64(2 / 3), -np.pi)]
    header, rows = sio.read_csv(sio.write_csv(tmp_path / "a.csv", ["k", "x", "y"], vals))
    assert header == ["k", "x", "y"]
    assert rows == [[1.0, 0.1, 1e-300], [2.0, 2 / 3, -np.pi]]


def test_fmt():
    assert sio.fmt(True) == "True"
    assert sio.fmt(np.int64(3)) == "3"
    assert sio.fmt(None) == ""
    assert sio.fmt("space") == "space"
    assert float(sio.fmt(0.1 + 0.2)) == 0.1 + 0.2


def test_weights_csv(small, tmp_path):
    path = sio.write_weights_csv(tmp_path / "w.csv", small.grid, small.weights)
    header, rows = sio.read_csv(path)
    assert header == ["x", "y", "t", "log_alpha", "log_xi", "log_beta", "log_gamma"]
    g = small.grid
    assert len(rows) == (g.nt + 1) * (g.nx + 1) * (g.ny + 1)
    row = rows[(g.nx + 1) * (g.ny + 1) * 3 + 5]
    assert row[3] == small.weights.log_alpha[3].ravel()[5]


def test_trajectory_csv(small, rng, tmp_path):
    s = small.solver
    traj = s.solve_forward(random_stream_velocity(small.grid, rng))
    header, rows = sio.read_csv(sio.write_trajectory_summary(tmp_path / "t.csv", small.grid, traj, s))
    assert header == ["t", "energy", "max_divergence"]
    energy = [r[1] for r in rows]
    assert energy[0] == pytest.approx(0.5)
    assert all(b < a for a, b in zip(energy, energy[1:]))
    assert max(r[2] for r in rows) <= 1e-10
