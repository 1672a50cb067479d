import queue
import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from izflood.coupling import (HEADER, LENGTH, Channel, CouplingMessage, CouplingSchedule, ErrorCode, Kind,
                              LocalSubsurface, NullSubsurface, PeerError, ProtocolError, RemoteSubsurface,
                              decode_message, encode_message, parse_endpoint, run_coupled, run_uncoupled,
                              serve_subsurface)
from izflood.izmesh import delineate_zones, waterfront_zones
from izflood.subsurface import ColumnZoneMap, PorousParams, SubsurfaceModel, build_grid
from izflood.surface import Hydrograph, SurfaceConfig, SurfaceModel

finite = st.floats(allow_nan=False, allow_infinity=False)


class TestCodec:
    @settings(max_examples=100, deadline=None)
    @given(st.sampled_from(list(Kind)), finite, st.integers(0, 2**64 - 1),
           st.lists(st.floats(allow_nan=True), max_size=50))
    def test_round_trip(self, kind, t, seq, payload):
        msg = CouplingMessage(kind, t, seq, np.array(payload, dtype=np.float64))
        assert decode_message(encode_message(msg)) == msg

    def test_empty_hello(self):
        msg = CouplingMessage(Kind.HELLO)
        data = encode_message(msg)
        assert len(data) == LENGTH.size + HEADER.size == 28
        assert decode_message(data) == msg

    def test_corrupted_length(self):
        data = bytearray(encode_message(CouplingMessage(Kind.SURFACE_STATE, 1.0, 1, [1.0, 2.0])))
        data[0] ^= 0x01
        with pytest.raises(ProtocolError, match="length prefix"):
            decode_message(data)

    def test_version_mismatch(self):
        data = encode_message(CouplingMessage(Kind.HELLO, version=9))
        with pytest.raises(ProtocolError) as err:
            decode_message(data)
        assert err.value.code == ErrorCode.VERSION_MISMATCH

    def test_unknown_kind(self):
        body = HEADER.pack(1, 77, 1, 0.0, 0)
        with pytest.raises(ProtocolError, match="unknown message kind"):
            decode_message(LENGTH.pack(len(body)) + body)

    def test_endpoint(self):
        assert parse_endpoint("localhost:5000") == ("localhost", 5000)
        assert parse_endpoint(":7") == ("127.0.0.1", 7)
        with pytest.raises(ValueError):
            parse_endpoint("nohost")


class TestChannel:
    def pair(self):
        a, b = socket.socketpair()
        return Channel(a, 2.0), Channel(b, 2.0)

    def test_send_recv(self):
        a, b = self.pair()
        a.send(Kind.SURFACE_STATE, 10.0, [1.5, 2.5])
        msg = b.recv()
        assert msg.seq == 1 and msg.t == 10.0
        assert msg.payload.tolist() == [1.5, 2.5]
        a.close(), b.close()

    def test_corrupted_prefix_flags_connection(self):
        a, b = self.pair()
        a.sock.sendall(struct.pack("<I", 3) + b"abc")
        with pytest.raises(ProtocolError, match="corrupted length prefix"):
            b.recv()
        assert b.broken
        a.close(), b.close()

    def test_sequence_gap(self):
        a, b = self.pair()
        a.send_seq = 4
        a.send(Kind.HALT)
        with pytest.raises(ProtocolError, match="sequence gap"):
            b.recv()
        assert b.broken
        a.close(), b.close()

    def test_time_must_not_go_back(self):
        a, b = self.pair()
        a.send(Kind.SURFACE_STATE, 5.0)
        a.send(Kind.SURFACE_STATE, 4.0)
        b.recv()
        with pytest.raises(ProtocolError, match="backwards"):
            b.recv()
        a.close(), b.close()

    def test_closed_peer(self):
        a, b = self.pair()
        a.close()
        with pytest.raises(PeerError, match="closed"):
            b.recv()
        b.close()

    def test_timeout(self):
        a, b = socket.socketpair()
        ch = Channel(b, 0.05)
        with pytest.raises(PeerError) as err:
            ch.recv()
        assert err.value.code == ErrorCode.TIMEOUT
        a.close(), ch.close()


class TestSchedule:
    def test_counts(self):
        s = CouplingSchedule(10.0, 30.0, 60.0, 600.0)
        assert s.n_intervals == 10 and s.surface_steps == 6

    @pytest.mark.parametrize("args", [(7.0, 30.0, 60.0, 600.0), (10.0, 25.0, 60.0, 600.0),
                                      (10.0, 30.0, 60.0, 650.0), (0.0, 30.0, 60.0, 600.0)])
    def test_rejects_incommensurate(self, args):
        with pytest.raises(ValueError):
            CouplingSchedule(*args)


def island_models(island, end_time=1800.0):
    mesh = delineate_zones(island)
    zones, lengths = waterfront_zones(mesh, island)
    cfg = SurfaceConfig(dt=10.0, waterfront_zones=zones, waterfront_lengths=lengths)
    hyd = Hydrograph([0.0, 600.0, 1e5], [0.0, 1.8, 1.8])
    schedule = CouplingSchedule(10.0, 30.0, 60.0, end_time)

    def surface():
        return SurfaceModel(mesh, cfg, hyd)

    def subsurface():
        g = build_grid(island, 20.0, 6, PorousParams(1e-8, 1e-9), coarsen=2)
        return SubsurfaceModel(g, ColumnZoneMap(mesh, island, g), 30.0)

    return mesh, surface, subsurface, schedule


def start_server(model, **kw):
    ports = queue.Queue()
    result = {}

    def target():
        result["code"] = serve_subsurface(("127.0.0.1", 0), model, timeout=10.0,
                                          on_ready=ports.put, accept_timeout=10.0, **kw)

    th = threading.Thread(target=target, daemon=True)
    th.start()
    return ("127.0.0.1", ports.get(timeout=10.0)), th, result


class TestLockstep:
    def test_zero_feedback_is_bitwise_uncoupled(self, island):
        mesh, surface, _, schedule = island_models(island)
        a = run_coupled(surface(), NullSubsurface(mesh.n_zones), schedule, 120.0)
        b = run_uncoupled(surface(), schedule, 120.0)
        assert a.completed and b.completed
        assert a.times == b.times
        for va, vb in zip(a.volumes, b.volumes):
            assert va.tobytes() == vb.tobytes()

    def test_socket_matches_in_process(self, island):
        mesh, surface, subsurface, schedule = island_models(island)
        local = run_coupled(surface(), LocalSubsurface(subsurface()), schedule, 300.0)
        server_model = subsurface()
        addr, th, result = start_server(server_model)
        remote = run_coupled(surface(), RemoteSubsurface(addr, mesh.n_zones, server_model.n_columns),
                             schedule, 300.0)
        th.join(10.0)
        assert result["code"] == 0
        assert remote.completed and local.completed
        assert local.times == remote.times
        for la, ra in zip(local.levels, remote.levels):
            assert np.max(np.abs(la - ra)) <= 1e-12
        for la, ra in zip(local.h_filtr[1:], remote.h_filtr[1:]):
            np.testing.assert_array_equal(la, ra)

    def test_geometry_mismatch(self, island):
        mesh, surface, subsurface, schedule = island_models(island)
        model = subsurface()
        addr, th, result = start_server(model)
        run = run_coupled(surface(), RemoteSubsurface(addr, mesh.n_zones + 1, model.n_columns), schedule)
        th.join(10.0)
        assert run.status == "peer_failure"
        assert "GEOMETRY_MISMATCH" in run.message
        assert result["code"] == 4

    def test_handshake_accepted(self, island):
        mesh, surface, subsurface, schedule = island_models(island)
        model = subsurface()
        addr, th, result = start_server(model)
        client = RemoteSubsurface(addr, mesh.n_zones, model.n_columns)
        client.start(schedule)
        client.halt()
        th.join(10.0)
        assert result["code"] == 0

    def test_peer_vanishes(self, island):
        mesh, surface, subsurface, schedule = island_models(island)
        listener = socket.create_server(("127.0.0.1", 0))
        port = listener.getsockname()[1]

        def rude():
            conn, _ = listener.accept()
            ch = Channel(conn, 5.0)
            ch.recv()
            ch.send(Kind.HELLO, 0.0, [])
            ch.recv()
            conn.close()

        th = threading.Thread(target=rude, daemon=True)
        th.start()
        run = run_coupled(surface(), RemoteSubsurface(("127.0.0.1", port), mesh.n_zones, 1, 5.0), schedule)
        th.join(5.0)
        listener.close()
        assert run.status == "peer_failure"
        assert len(run.times) == 1  # the initial snapshot survives

    def test_numerical_failure_stops_cleanly(self):
        from izflood.izmesh import prism_mesh
        mesh = prism_mesh([0.0], 1.0, height=0.01)
        cfg = SurfaceConfig(dt=10.0, waterfront_zones=[0], waterfront_lengths=[10.0])
        model = SurfaceModel(mesh, cfg, Hydrograph.constant(3.0, 1e4))
        run = run_coupled(model, NullSubsurface(1), CouplingSchedule(10.0, 10.0, 60.0, 600.0))
        assert run.status == "numerical_failure"
        assert "headroom" in run.message
