"""Binary frames, bit-packed serialization, and the inference service.

Frame layout (little-endian)::

    magic   4 bytes  b"HETS"
    version u16      1
    kind    u8       FrameKind
    length  u64      payload byte count
    payload length bytes
    crc32   u32      zlib CRC-32 of payload

Residues are packed per (part, prime) row, each residue in exactly
``p.bit_length()`` bits, least significant bit first; every row is padded to
a whole byte.
"""

from __future__ import annotations

import enum
import io
import logging
import math
import socket
import socketserver
import struct
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import errors, scheme
from .backend import KeySet
from .context import Context
from .errors import BadChecksum, BadMagic, HEError, LevelMismatch, Truncated, TransportError, UnsupportedVersion
from .ring import Domain, RingParams, RingPoly
from .scheme import Ciphertext, GaloisKeys, PublicKey, SchemeParams, SecretKey, SwitchKey
from .tensors import EncryptedVector, PlainTensor, WindowLayout

log = logging.getLogger(__name__)

MAGIC = b"HETS"
VERSION = 1
HEADER = struct.Struct("<4sHBQ")
CRC = struct.Struct("<I")
MAX_PAYLOAD = 1 << 34


class FrameKind(enum.IntEnum):
    PublicContext = 1
    Ciphertext = 2
    EncryptedVector = 3
    InferRequest = 4
    InferResponse = 5
    Error = 6
    PrivateContext = 7


# ---------------------------------------------------------------- frames


def encode_frame(kind: FrameKind, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, int(kind), len(payload)) + payload + CRC.pack(zlib.crc32(payload))


def _check_header(header: bytes) -> tuple[FrameKind, int]:
    magic, version, kind, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"frame version {version} (supported: {VERSION})")
    try:
        kind = FrameKind(kind)
    except ValueError:
        raise UnsupportedVersion(f"unknown frame kind {kind}") from None
    if length > MAX_PAYLOAD:
        raise Truncated(f"declared payload of {length} bytes exceeds the {MAX_PAYLOAD} limit")
    return kind, length


def _check_crc(payload: bytes, trailer: bytes) -> None:
    (crc,) = CRC.unpack(trailer)
    if zlib.crc32(payload) != crc:
        raise BadChecksum("payload checksum does not match")


def decode_frame(data: bytes) -> tuple[FrameKind, bytes]:
    """Parse exactly one frame from ``data``."""
    if len(data) < HEADER.size:
        raise Truncated(f"{len(data)} bytes is shorter than a frame header")
    kind, length = _check_header(data[: HEADER.size])
    end = HEADER.size + length
    if len(data) < end + CRC.size:
        raise Truncated(f"frame declares {length} payload bytes, but only {max(0, len(data) - HEADER.size)} bytes follow the header")
    if len(data) > end + CRC.size:
        raise Truncated("trailing bytes after the frame")
    payload = bytes(data[HEADER.size : end])
    _check_crc(payload, data[end : end + CRC.size])
    return kind, payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise Truncated(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[FrameKind, bytes, int]:
    """Read one frame; returns (kind, payload, bytes read)."""
    kind, length = _check_header(_recv_exact(sock, HEADER.size))
    payload = _recv_exact(sock, length)
    _check_crc(payload, _recv_exact(sock, CRC.size))
    return kind, payload, HEADER.size + length + CRC.size


# ---------------------------------------------------------------- payload helpers


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def put(self, fmt: str, *values) -> None:
        self.buf.write(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.buf.write(data)

    def text(self, s: str) -> None:
        b = s.encode("utf-8")
        self.put("H", len(b))
        self.raw(b)

    def blob(self, data: bytes) -> None:
        self.put("Q", len(data))
        self.raw(data)

    def bytes(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise Truncated(f"payload ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def get(self, fmt: str):
        s = struct.Struct("<" + fmt)
        vals = s.unpack(self.take(s.size))
        return vals[0] if len(vals) == 1 else vals

    def text(self) -> str:
        try:
            return bytes(self.take(self.get("H"))).decode("utf-8")
        except UnicodeDecodeError:
            raise Truncated("malformed text field") from None

    def blob(self) -> bytes:
        return bytes(self.take(self.get("Q")))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise Truncated(f"{len(self.data) - self.pos} unexpected trailing payload bytes")


def packed_row_bytes(degree: int, p: int) -> int:
    return (degree * p.bit_length() + 7) // 8


def pack_row(values: np.ndarray, width: int) -> bytes:
    bits = np.unpackbits(np.ascontiguousarray(values, dtype="<u8").view(np.uint8).reshape(-1, 8), axis=1,
                         bitorder="little")[:, :width]
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_row(data, degree: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: degree * width]
    full = np.zeros((degree, 64), dtype=np.uint8)
    full[:, :width] = bits.reshape(degree, width)
    return np.packbits(full, axis=1, bitorder="little").view("<u8").ravel().astype(np.uint64)


def _put_rows(w: _Writer, rows: np.ndarray, primes) -> None:
    for row, p in zip(rows, primes):
        w.raw(pack_row(row, p.bit_length()))


def _get_rows(r: _Reader, degree: int, primes) -> np.ndarray:
    out = np.empty((len(primes), degree), dtype=np.uint64)
    for i, p in enumerate(primes):
        out[i] = unpack_row(r.take(packed_row_bytes(degree, p)), degree, p.bit_length())
        if np.any(out[i] >= p):
            raise Truncated("residue out of range for its prime")
    return out


# ---------------------------------------------------------------- ciphertexts


def ciphertext_payload(ct: Ciphertext) -> bytes:
    w = _Writer()
    degree = ct.parts[0].coeffs.shape[1]
    w.put("IBdBB", degree, ct.level, ct.scale, ct.size, len(ct.primes))
    w.put(f"{len(ct.primes)}Q", *ct.primes)
    for part in ct.parts:
        _put_rows(w, part.coeffs, ct.primes)
    return w.bytes()


def _read_ciphertext(r: _Reader) -> Ciphertext:
    degree, level, scale, size, count = r.get("IBdBB")
    if degree < 2 or degree & (degree - 1) or size not in (2, 3) or count != level + 1:
        raise Truncated("malformed ciphertext header")
    if not (math.isfinite(scale) and scale > 0):
        raise Truncated("malformed ciphertext scale")
    primes = tuple(r.get(f"{count}Q")) if count > 1 else (r.get("Q"),)
    parts = tuple(RingPoly(_get_rows(r, degree, primes), primes, Domain.EVAL) for _ in range(size))
    return Ciphertext(parts, scale, level)


def ciphertext_from_payload(payload: bytes) -> Ciphertext:
    r = _Reader(payload)
    ct = _read_ciphertext(r)
    r.done()
    return ct


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    return encode_frame(FrameKind.Ciphertext, ciphertext_payload(ct))


def deserialize_ciphertext(data: bytes) -> Ciphertext:
    kind, payload = decode_frame(data)
    _expect(kind, FrameKind.Ciphertext)
    return ciphertext_from_payload(payload)


def _expect(kind: FrameKind, *wanted: FrameKind) -> None:
    if kind not in wanted:
        raise UnsupportedVersion(f"expected a {'/'.join(k.name for k in wanted)} frame, got {kind.name}")


# ---------------------------------------------------------------- encrypted vectors


def vector_payload(ev: EncryptedVector) -> bytes:
    if not isinstance(ev.ct, Ciphertext):
        raise TypeError("only real-backend vectors can be serialized")
    w = _Writer()
    w.put("IIIB", ev.length, ev.replicas, ev.valid_span, int(ev.clean))
    lay = ev.layout
    if lay is None:
        w.put("B", 0)
    else:
        w.put("B", 1)
        w.put("8I", *lay.image_shape, *lay.kernel_shape, lay.stride, lay.windows, lay.taps, lay.chunk)
    w.blob(ciphertext_payload(ev.ct))
    return w.bytes()


def vector_from_payload(payload: bytes, ctx: Context) -> EncryptedVector:
    r = _Reader(payload)
    length, replicas, span, clean = r.get("IIIB")
    has_layout = r.get("B")
    layout = None
    if has_layout == 1:
        h, wd, kh, kw, stride, windows, taps, chunk = r.get("8I")
        layout = WindowLayout((h, wd), (kh, kw), stride, windows, taps, chunk)
    elif has_layout != 0:
        raise Truncated("malformed layout flag")
    ct = ciphertext_from_payload(r.blob())
    r.done()
    if length < 1 or replicas < 1 or span < 1:
        raise Truncated("malformed vector metadata")
    return EncryptedVector(ctx, ct, length, replicas, span, bool(clean), layout)


def serialize_vector(ev: EncryptedVector) -> bytes:
    return encode_frame(FrameKind.EncryptedVector, vector_payload(ev))


def deserialize_vector(data: bytes, ctx: Context) -> EncryptedVector:
    kind, payload = decode_frame(data)
    _expect(kind, FrameKind.EncryptedVector, FrameKind.InferRequest, FrameKind.InferResponse)
    return vector_from_payload(payload, ctx)


# ---------------------------------------------------------------- contexts


def _put_switch_key(w: _Writer, key: SwitchKey, primes) -> None:
    w.put("QB", key.seed, key.b.shape[0])
    for digit in key.b:
        _put_rows(w, digit, primes)


def _get_switch_key(r: _Reader, degree: int, primes) -> SwitchKey:
    seed, digits = r.get("QB")
    if digits != len(primes) - 1:
        raise Truncated("switch key digit count does not match the chain")
    b = np.stack([_get_rows(r, degree, primes) for _ in range(digits)])
    return SwitchKey(b, seed, primes)


def context_payload(ctx: Context, include_secret: bool = False) -> bytes:
    if ctx.backend_kind != "real":
        raise TypeError("only real-backend contexts can be serialized")
    p = ctx.params
    primes = p.ring.primes
    keys = ctx.keys
    private = include_secret and keys.sk is not None
    w = _Writer()
    w.put("B", int(private))
    w.text(p.name)
    w.text(p.security_note)
    w.put("IB", p.degree, len(primes))
    w.put(f"{len(primes)}Q", *primes)
    w.put("dBBIQ", p.scale, int(ctx.auto_rescale), int(ctx.auto_relin), ctx.worker_count, ctx.seed)
    w.put("B", int(keys.pk is not None))
    if keys.pk is not None:
        _put_rows(w, keys.pk.b.coeffs, primes)
        _put_rows(w, keys.pk.a.coeffs, primes)
    w.put("B", int(keys.rlk is not None))
    if keys.rlk is not None:
        _put_switch_key(w, keys.rlk, primes)
    steps = keys.galois_steps if keys.gk is not None else ()
    w.put("BI", int(keys.gk is not None), len(steps))
    if steps:
        w.put(f"{len(steps)}i", *steps)
    if keys.gk is not None:
        elts = sorted(keys.gk.keys)
        w.put("I", len(elts))
        for g in elts:
            w.put("I", g)
            _put_switch_key(w, keys.gk.keys[g], primes)
    if private:
        # Ternary secret packed two bits per coefficient (value + 1).
        w.raw(pack_row((keys.sk.signed + 1).astype(np.uint64), 2))
    return w.bytes()


def context_from_payload(payload: bytes) -> Context:
    r = _Reader(payload)
    private = r.get("B")
    name, note = r.text(), r.text()
    degree, count = r.get("IB")
    primes = tuple(int(x) for x in np.atleast_1d(r.get(f"{count}Q")))
    scale, auto_rescale, auto_relin, workers, seed = r.get("dBBIQ")
    try:
        params = SchemeParams(RingParams(degree, primes), scale, note, name)
    except (HEError, ValueError) as exc:
        raise Truncated(f"malformed parameters: {exc}") from None
    pk = rlk = gk = sk = None
    if r.get("B"):
        b = _get_rows(r, degree, primes)
        a = _get_rows(r, degree, primes)
        pk = PublicKey(RingPoly(b, primes, Domain.EVAL), RingPoly(a, primes, Domain.EVAL))
    if r.get("B"):
        rlk = _get_switch_key(r, degree, primes)
    has_gk, nsteps = r.get("BI")
    steps = tuple(int(s) for s in np.atleast_1d(r.get(f"{nsteps}i"))) if nsteps else ()
    if has_gk:
        keys = {}
        for _ in range(r.get("I")):
            g = r.get("I")
            keys[g] = _get_switch_key(r, degree, primes)
        if {scheme.galois_element(s, params) for s in steps} != set(keys):
            raise Truncated("Galois keys do not match the declared steps")
        gk = GaloisKeys(steps, keys)
    if private:
        signed = unpack_row(r.take((degree * 2 + 7) // 8), degree, 2).astype(np.int64) - 1
        if np.any(signed > 1):
            raise Truncated("malformed secret key")
        sk = SecretKey(RingPoly(scheme._eval_small(params, signed), primes, Domain.EVAL), signed)
    r.done()
    return Context(params, KeySet(sk, pk, rlk, gk, steps), "real", bool(auto_rescale), bool(auto_relin),
                   max(1, workers), seed)


def serialize_context(ctx: Context, include_secret: bool = False) -> bytes:
    kind = FrameKind.PrivateContext if include_secret and ctx.is_private else FrameKind.PublicContext
    return encode_frame(kind, context_payload(ctx, include_secret))


def deserialize_context(data: bytes) -> Context:
    kind, payload = decode_frame(data)
    _expect(kind, FrameKind.PublicContext, FrameKind.PrivateContext)
    ctx = context_from_payload(payload)
    if kind is FrameKind.PublicContext and ctx.is_private:
        raise Truncated("public context frame carries a secret key")
    return ctx


def serialize(value, include_secret: bool = False) -> bytes:
    if isinstance(value, Context):
        return serialize_context(value, include_secret)
    if isinstance(value, EncryptedVector):
        return serialize_vector(value)
    if isinstance(value, Ciphertext):
        return serialize_ciphertext(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def deserialize(data: bytes, ctx: Context | None = None):
    """Context, Ciphertext, or EncryptedVector (which needs ``ctx``)."""
    kind, payload = decode_frame(data)
    if kind in (FrameKind.PublicContext, FrameKind.PrivateContext):
        return deserialize_context(data)
    if kind is FrameKind.Ciphertext:
        return ciphertext_from_payload(payload)
    if kind in (FrameKind.EncryptedVector, FrameKind.InferRequest, FrameKind.InferResponse):
        if ctx is None:
            raise TypeError("deserializing an encrypted vector needs a context")
        return vector_from_payload(payload, ctx)
    raise UnsupportedVersion(f"{kind.name} frames carry no value")


# ---------------------------------------------------------------- service


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def error_frame(exc: HEError) -> bytes:
    return encode_frame(FrameKind.Error, f"{exc.code}: {exc}".encode("utf-8"))


def raise_error_frame(payload: bytes):
    text = payload.decode("utf-8", errors="replace")
    code, _, message = text.partition(": ")
    raise errors.by_code(code)(message)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: InferenceServer = self.server  # type: ignore[assignment]
        sock = self.request
        try:
            kind, payload, _ = read_frame(sock)
        except HEError as exc:
            log.warning("bad request from %s: %s", self.client_address, exc)
            self._send(error_frame(exc))
            return
        except OSError as exc:
            log.warning("transport error from %s: %s", self.client_address, exc)
            return
        try:
            if kind is not FrameKind.InferRequest:
                raise UnsupportedVersion(f"expected an InferRequest frame, got {kind.name}")
            reply = encode_frame(FrameKind.InferResponse, vector_payload(server.infer(payload)))
        except HEError as exc:
            reply = error_frame(exc)
        self._send(reply)

    def _send(self, data: bytes) -> None:
        try:
            self.request.sendall(data)
        except OSError as exc:
            log.warning("could not reply to %s: %s", self.client_address, exc)


class InferenceServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], ctx: Context, model):
        from .context import make_public

        self.ctx = make_public(ctx)  # the service never holds a secret key
        self.model = model
        if model.depth > self.ctx.params.max_level:
            raise errors.LevelExhausted(
                f"model needs {model.depth} levels, context provides {self.ctx.params.max_level}")
        super().__init__(address, _Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def infer(self, payload: bytes) -> EncryptedVector:
        from .nn import encrypted_forward

        ev = vector_from_payload(payload, self.ctx)
        if ev.level != self.ctx.params.max_level:
            raise LevelMismatch(f"request at level {ev.level}, service expects fresh level {self.ctx.params.max_level}")
        return encrypted_forward(self.ctx, self.model, ev)

    def start(self) -> "InferenceServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_inference(address, ctx: Context, model) -> InferenceServer:
    """Start the service in a background thread; ``close()`` stops it."""
    if isinstance(address, str):
        address = parse_address(address)
    return InferenceServer(address, ctx, model).start()


@dataclass(frozen=True)
class InferResult:
    logits: PlainTensor
    bytes_sent: int
    bytes_received: int
    seconds: float

    @property
    def total_bytes(self) -> int:
        return self.bytes_sent + self.bytes_received


def send_request(address, request: bytes, timeout: float = 600.0) -> tuple[FrameKind, bytes, int]:
    if isinstance(address, str):
        address = parse_address(address)
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.sendall(request)
            return read_frame(sock)
    except OSError as exc:
        raise TransportError(f"{address[0]}:{address[1]}: {exc}") from None


def client_infer(address, ctx: Context, model, image, seed: int | None = None, timeout: float = 600.0) -> InferResult:
    """Encrypt locally, run remotely, decrypt locally."""
    from .nn import prepare_input

    start = time.perf_counter()
    ev = prepare_input(ctx, model, image, seed=seed)
    request = encode_frame(FrameKind.InferRequest, vector_payload(ev))
    kind, payload, received = send_request(address, request, timeout)
    if kind is FrameKind.Error:
        raise_error_frame(payload)
    _expect(kind, FrameKind.InferResponse)
    out = vector_from_payload(payload, ctx)
    logits = ctx.backend.decrypt(out.ct)[: out.length]
    return InferResult(PlainTensor(logits), len(request), received, time.perf_counter() - start)
