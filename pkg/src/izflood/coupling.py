"""Lockstep coupling of the surface and subsurface models.

Explicit partitioned scheme: at each coupling time ``T`` the surface side
sends its zone levels, the subsurface side advances to ``T + dt_c`` holding
them fixed and returns zone surcharge rates, and the surface side advances
to ``T + dt_c`` with those rates. The subsurface side may live in the same
process or behind a stream socket.

Wire format (all little-endian)::

    frame   := u32 length | header | payload        (length counts header+payload)
    header  := u16 version | u16 kind | u64 sequence | f64 t | u32 count
    payload := count * f64
"""
from __future__ import annotations

import enum
import logging
import math
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .izmesh import LevelOverflowError
from .solvers import SolverError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HEADER = struct.Struct("<HHQdI")
LENGTH = struct.Struct("<I")
MAX_FRAME = 1 << 30
DEFAULT_TIMEOUT = 60.0


class Kind(enum.IntEnum):
    HELLO = 1
    SURFACE_STATE = 2
    SUBSURFACE_RESULT = 3
    HALT = 4
    ERROR = 5


class ErrorCode(enum.IntEnum):
    GEOMETRY_MISMATCH = 1
    PROTOCOL_ERROR = 2
    NUMERICAL_FAILURE = 3
    VERSION_MISMATCH = 4
    TIMEOUT = 5


class ProtocolError(Exception):
    def __init__(self, message, code=ErrorCode.PROTOCOL_ERROR):
        super().__init__(message)
        self.code = code


class PeerError(Exception):
    """The peer vanished, timed out, or reported an error."""

    def __init__(self, message, code=None):
        super().__init__(message)
        self.code = code


@dataclass
class CouplingMessage:
    kind: Kind
    t: float = 0.0
    seq: int = 0
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0))
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.payload = np.ascontiguousarray(self.payload, dtype="<f8").ravel()

    def __eq__(self, other):
        if not isinstance(other, CouplingMessage):
            return NotImplemented
        return (self.kind == other.kind and self.seq == other.seq and self.version == other.version
                and np.array_equal(np.float64(self.t), np.float64(other.t), equal_nan=True)
                and self.payload.tobytes() == other.payload.tobytes())


def encode_message(msg):
    body = HEADER.pack(msg.version, int(msg.kind), msg.seq, msg.t, msg.payload.size) + msg.payload.tobytes()
    return LENGTH.pack(len(body)) + body


def decode_message(data):
    """Decode one complete frame; raises :class:`ProtocolError` on any defect."""
    data = bytes(data)
    if len(data) < LENGTH.size + HEADER.size:
        raise ProtocolError(f"truncated frame ({len(data)} bytes)")
    (length,) = LENGTH.unpack_from(data)
    if length != len(data) - LENGTH.size:
        raise ProtocolError(f"length prefix {length} does not match frame body {len(data) - LENGTH.size}")
    return _decode_body(data[LENGTH.size:])


def _decode_body(body):
    if len(body) < HEADER.size:
        raise ProtocolError("truncated header")
    version, kind, seq, t, count = HEADER.unpack_from(body)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version {version} != {PROTOCOL_VERSION}", ErrorCode.VERSION_MISMATCH)
    try:
        kind = Kind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    if HEADER.size + 8 * count != len(body):
        raise ProtocolError(f"payload count {count} does not match frame length {len(body)}")
    payload = np.frombuffer(body, dtype="<f8", count=count, offset=HEADER.size).copy()
    return CouplingMessage(kind, t, seq, payload, version)


class Channel:
    """Framed, sequence-checked message stream over a connected socket."""

    def __init__(self, sock, timeout=DEFAULT_TIMEOUT):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.send_seq = 0
        self.recv_seq = 0
        self.recv_t = -math.inf
        self.broken = False

    def send(self, kind, t=0.0, payload=()):
        self.send_seq += 1
        msg = CouplingMessage(kind, t, self.send_seq, np.asarray(payload, dtype=np.float64))
        try:
            self.sock.sendall(encode_message(msg))
        except OSError as exc:
            self.broken = True
            raise PeerError(f"send failed: {exc}") from exc
        return msg

    def _read_exact(self, n):
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                self.broken = True
                raise PeerError("peer timed out", ErrorCode.TIMEOUT) from None
            except OSError as exc:
                self.broken = True
                raise PeerError(f"receive failed: {exc}") from exc
            if not chunk:
                self.broken = True
                raise PeerError("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def recv(self):
        (length,) = LENGTH.unpack(self._read_exact(LENGTH.size))
        if length < HEADER.size or length > MAX_FRAME:
            self.broken = True
            raise ProtocolError(f"corrupted length prefix {length}")
        try:
            msg = _decode_body(self._read_exact(length))
        except ProtocolError:
            self.broken = True
            raise
        if msg.seq != self.recv_seq + 1:
            self.broken = True
            raise ProtocolError(f"sequence gap: expected {self.recv_seq + 1}, got {msg.seq}")
        if msg.t < self.recv_t:
            self.broken = True
            raise ProtocolError(f"time went backwards: {msg.t} < {self.recv_t}")
        self.recv_seq = msg.seq
        self.recv_t = msg.t
        return msg

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def parse_endpoint(text):
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def _is_multiple(a, b):
    k = round(a / b)
    return k >= 1 and math.isclose(k * b, a, rel_tol=1e-9, abs_tol=1e-12)


@dataclass(frozen=True)
class CouplingSchedule:
    surface_dt: float
    subsurface_dt: float
    interval: float = 60.0
    end_time: float = 3600.0

    def __post_init__(self):
        for name in ("surface_dt", "subsurface_dt", "interval", "end_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not _is_multiple(self.interval, self.surface_dt):
            raise ValueError("coupling interval must be a multiple of the surface dt")
        if not _is_multiple(self.interval, self.subsurface_dt):
            raise ValueError("coupling interval must be a multiple of the subsurface dt")
        if not _is_multiple(self.end_time, self.interval):
            raise ValueError("end time must be a multiple of the coupling interval")

    @property
    def n_intervals(self):
        return round(self.end_time / self.interval)

    @property
    def surface_steps(self):
        return round(self.interval / self.surface_dt)

    def as_payload(self, n_zones, n_columns):
        return [n_zones, n_columns, self.surface_dt, self.subsurface_dt, self.interval, self.end_time]


# ---------------------------------------------------------------------------
# subsurface endpoints
# ---------------------------------------------------------------------------

class NullSubsurface:
    """Stand-in peer returning zero surcharge everywhere."""

    def __init__(self, n_zones, n_columns=0):
        self.n_zones = n_zones
        self.n_columns = n_columns

    def start(self, schedule):
        pass

    def exchange(self, t, levels, interval):
        return np.zeros(self.n_zones), None

    def halt(self):
        pass


class LocalSubsurface:
    """In-process peer wrapping a :class:`~izflood.subsurface.SubsurfaceModel`."""

    def __init__(self, model):
        self.model = model
        self.n_zones = model.n_zones
        self.n_columns = model.n_columns

    def start(self, schedule):
        if not _is_multiple(schedule.interval, self.model.dt):
            raise ValueError("coupling interval must be a multiple of the subsurface dt")

    def exchange(self, t, levels, interval):
        rates = self.model.advance(levels, interval)
        return rates, self.model.h_filtr()

    def halt(self):
        pass


class RemoteSubsurface:
    """Socket client talking to :func:`serve_subsurface`."""

    def __init__(self, endpoint, n_zones, n_columns, timeout=DEFAULT_TIMEOUT):
        self.endpoint = parse_endpoint(endpoint) if isinstance(endpoint, str) else tuple(endpoint)
        self.n_zones = n_zones
        self.n_columns = n_columns
        self.timeout = timeout
        self.channel = None

    def start(self, schedule):
        try:
            sock = socket.create_connection(self.endpoint, timeout=self.timeout)
        except OSError as exc:
            raise PeerError(f"cannot connect to {self.endpoint}: {exc}") from exc
        self.channel = Channel(sock, self.timeout)
        self.channel.send(Kind.HELLO, 0.0, schedule.as_payload(self.n_zones, self.n_columns))
        reply = self.channel.recv()
        if reply.kind == Kind.ERROR:
            code = ErrorCode(int(reply.payload[0])) if reply.payload.size else ErrorCode.PROTOCOL_ERROR
            self.channel.close()
            raise PeerError(f"handshake rejected: {code.name}", code)
        if reply.kind != Kind.HELLO:
            raise ProtocolError(f"expected HELLO, got {reply.kind.name}")

    def exchange(self, t, levels, interval):
        ch = self.channel
        ch.send(Kind.SURFACE_STATE, t, levels)
        msg = ch.recv()
        if msg.kind == Kind.ERROR:
            code = ErrorCode(int(msg.payload[0])) if msg.payload.size else ErrorCode.PROTOCOL_ERROR
            raise PeerError(f"peer error: {code.name}", code)
        if msg.kind != Kind.SUBSURFACE_RESULT:
            raise ProtocolError(f"expected SUBSURFACE_RESULT, got {msg.kind.name}")
        if msg.t != t:
            raise ProtocolError(f"result for t={msg.t}, expected t={t}")
        n = self.n_zones
        if msg.payload.size not in (n, n + self.n_columns):
            raise ProtocolError(f"result payload has {msg.payload.size} values")
        rates = msg.payload[:n]
        hf = msg.payload[n:] if msg.payload.size > n else None
        return rates, hf

    def halt(self):
        if self.channel is None:
            return
        try:
            if not self.channel.broken:
                self.channel.send(Kind.HALT, self.channel.recv_t if self.channel.recv_t > -math.inf else 0.0)
        except PeerError:
            pass
        finally:
            self.channel.close()


# ---------------------------------------------------------------------------
# the lockstep driver
# ---------------------------------------------------------------------------

@dataclass
class CoupledRun:
    times: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    volumes: list = field(default_factory=list)
    states: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    h_filtr: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def completed(self):
        return self.status == "ok"


def run_coupled(surface, subsurface, schedule, output_interval=None, on_output=None):
    """Run the lockstep loop to ``schedule.end_time``.

    ``surface`` is a :class:`~izflood.surface.SurfaceModel`; ``subsurface``
    one of the endpoint classes above. Every ``output_interval`` seconds (a
    multiple of the surface dt; default the coupling interval) a snapshot is
    recorded and passed to ``on_output(t, state, rates, h_filtr)``. Peer and
    numerical failures stop the run cleanly with partial results kept.
    """
    out_every = schedule.surface_steps if output_interval is None else output_interval / schedule.surface_dt
    if not math.isclose(out_every, round(out_every)) or round(out_every) < 1:
        raise ValueError("output interval must be a multiple of the surface dt")
    out_every = round(out_every)
    if not math.isclose(surface.config.dt, schedule.surface_dt):
        raise ValueError("surface dt differs from the schedule")
    run = CoupledRun()
    rates = np.zeros(surface.mesh.n_zones)
    hf = None

    def record():
        s = surface.snapshot()
        run.times.append(s.t)
        run.levels.append(s.level)
        run.volumes.append(s.volume)
        run.states.append(s)
        run.rates.append(rates.copy())
        run.h_filtr.append(None if hf is None else np.array(hf))
        if on_output is not None:
            on_output(s.t, s, rates, hf)

    try:
        subsurface.start(schedule)
        record()
        steps = 0
        for _ in range(schedule.n_intervals):
            t = surface.state.t
            rates, hf = subsurface.exchange(t, surface.state.level.copy(), schedule.interval)
            rates = np.asarray(rates, dtype=np.float64)
            for _ in range(schedule.surface_steps):
                surface.step(rates)
                steps += 1
                if steps % out_every == 0:
                    record()
    except (PeerError, ProtocolError) as exc:
        if exc.code == ErrorCode.NUMERICAL_FAILURE:
            run.status = "numerical_failure"
        else:
            run.status = "peer_failure"
        run.message = str(exc)
        log.error("coupling stopped: %s", exc)
    except (LevelOverflowError, SolverError, ArithmeticError) as exc:
        run.status, run.message = "numerical_failure", str(exc)
        log.error("numerical halt: %s", exc)
    finally:
        subsurface.halt()
    return run


def run_uncoupled(surface, schedule, output_interval=None, on_output=None):
    """Surface-only run with the same recording cadence as :func:`run_coupled`."""
    out_every = round((schedule.interval if output_interval is None else output_interval) / surface.config.dt)
    run = CoupledRun()
    zeros = np.zeros(surface.mesh.n_zones)

    def record():
        s = surface.snapshot()
        run.times.append(s.t)
        run.levels.append(s.level)
        run.volumes.append(s.volume)
        run.states.append(s)
        run.rates.append(zeros)
        run.h_filtr.append(None)
        if on_output is not None:
            on_output(s.t, s, zeros, None)

    record()
    try:
        n = schedule.n_intervals * schedule.surface_steps
        for i in range(1, n + 1):
            surface.step()
            if i % out_every == 0:
                record()
    except (LevelOverflowError, ArithmeticError) as exc:
        run.status, run.message = "numerical_failure", str(exc)
    return run


# ---------------------------------------------------------------------------
# server side
# ---------------------------------------------------------------------------

def serve_subsurface(address, model, timeout=DEFAULT_TIMEOUT, on_ready=None, on_exchange=None,
                     on_halt=None, accept_timeout=None):
    """Serve one surface peer over TCP; returns an exit status.

    0 after a clean HALT, 3 on a numerical failure, 4 on peer/protocol
    failure or a rejected handshake. ``on_ready(port)`` fires once listening.
    """
    host, port = parse_endpoint(address) if isinstance(address, str) else address
    try:
        server = socket.create_server((host, port))
    except OSError as exc:
        raise PeerError(f"cannot bind {host}:{port}: {exc}") from exc
    with server:
        server.settimeout(accept_timeout)
        if on_ready is not None:
            on_ready(server.getsockname()[1])
        try:
            conn, _ = server.accept()
        except socket.timeout:
            log.error("no peer connected within %s s", accept_timeout)
            return 4
    ch = Channel(conn, timeout)
    try:
        return _serve(ch, model, on_exchange, on_halt)
    finally:
        ch.close()


def _serve(ch, model, on_exchange, on_halt):
    try:
        hello = ch.recv()
    except ProtocolError as exc:
        _send_error(ch, exc.code)
        return 4
    except PeerError:
        return 4
    if hello.kind != Kind.HELLO or hello.payload.size < 6:
        _send_error(ch, ErrorCode.PROTOCOL_ERROR)
        return 4
    n_zones, n_columns, _, _, interval, end_time = hello.payload[:6]
    if int(n_zones) != model.n_zones or int(n_columns) != model.n_columns:
        log.error("geometry mismatch: peer %d zones/%d columns, local %d/%d",
                  n_zones, n_columns, model.n_zones, model.n_columns)
        _send_error(ch, ErrorCode.GEOMETRY_MISMATCH)
        return 4
    if not _is_multiple(interval, model.dt):
        _send_error(ch, ErrorCode.PROTOCOL_ERROR)
        return 4
    ch.send(Kind.HELLO, 0.0, [model.n_zones, model.n_columns, model.dt, interval, end_time])
    try:
        while True:
            msg = ch.recv()
            if msg.kind == Kind.HALT:
                if on_halt is not None:
                    on_halt()
                return 0
            if msg.kind != Kind.SURFACE_STATE or msg.payload.size != model.n_zones:
                _send_error(ch, ErrorCode.PROTOCOL_ERROR)
                return 4
            try:
                rates = model.advance(msg.payload, interval)
            except (SolverError, ArithmeticError) as exc:
                log.error("subsurface failure at t=%s: %s", msg.t, exc)
                _send_error(ch, ErrorCode.NUMERICAL_FAILURE, msg.t)
                if on_halt is not None:
                    on_halt()
                return 3
            ch.send(Kind.SUBSURFACE_RESULT, msg.t, np.concatenate((rates, model.h_filtr())))
            if on_exchange is not None:
                on_exchange(msg.t, model)
    except (PeerError, ProtocolError) as exc:
        log.error("peer failure: %s", exc)
        if isinstance(exc, ProtocolError):
            _send_error(ch, exc.code)
        if on_halt is not None:
            on_halt()
        return 4


def _send_error(ch, code, t=None):
    try:
        ch.send(Kind.ERROR, max(ch.recv_t, 0.0) if t is None else t, [int(code)])
    except PeerError:
        pass
