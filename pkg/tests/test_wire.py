import socket
import threading
import zlib

import numpy as np
import pytest

from hets import nn, wire
from hets import tensors as T
from hets.context import set_flags
from hets.errors import (
    BadChecksum,
    BadMagic,
    LevelMismatch,
    TransportError,
    Truncated,
    UnsupportedVersion,
)
from hets.wire import FrameKind


def ct_equal(a, b):
    return (
        a.level == b.level
        and a.scale == b.scale
        and a.size == b.size
        and all(np.array_equal(x.coeffs, y.coeffs) for x, y in zip(a.parts, b.parts))
    )


# ---------------------------------------------------------------- frames


def test_frame_layout():
    data = wire.encode_frame(FrameKind.Ciphertext, b"abc")
    assert data[:4] == b"HETS"
    assert int.from_bytes(data[4:6], "little") == 1
    assert data[6] == FrameKind.Ciphertext
    assert int.from_bytes(data[7:15], "little") == 3
    assert data[15:18] == b"abc"
    assert int.from_bytes(data[18:], "little") == zlib.crc32(b"abc")
    assert wire.decode_frame(data) == (FrameKind.Ciphertext, b"abc")


def test_frame_errors():
    good = wire.encode_frame(FrameKind.Error, b"payload")
    with pytest.raises(BadMagic):
        wire.decode_frame(b"XXXX" + good[4:])
    with pytest.raises(UnsupportedVersion):
        wire.decode_frame(good[:4] + (2).to_bytes(2, "little") + good[6:])
    with pytest.raises(UnsupportedVersion):
        wire.decode_frame(good[:6] + bytes([99]) + good[7:])
    with pytest.raises(Truncated):
        wire.decode_frame(good[:10])
    with pytest.raises(Truncated):
        wire.decode_frame(good[:-1])
    with pytest.raises(Truncated):
        wire.decode_frame(good + b"\0")
    flipped = bytearray(good)
    flipped[16] ^= 0x01
    with pytest.raises(BadChecksum):
        wire.decode_frame(bytes(flipped))


@pytest.mark.parametrize("width", [1, 7, 22, 32, 50, 61])
def test_pack_row_round_trip(width):
    rng = np.random.default_rng(width)
    vals = rng.integers(0, 1 << width, 64, dtype=np.uint64) if width < 63 else None
    packed = wire.pack_row(vals, width)
    assert len(packed) == (64 * width + 7) // 8
    assert np.array_equal(wire.unpack_row(packed, 64, width), vals)


# ---------------------------------------------------------------- values


def test_ciphertext_round_trip_is_deterministic(ctx):
    ct = ctx.backend.encrypt(np.linspace(-1, 1, 10), seed=3)
    data = wire.serialize(ct)
    back = wire.deserialize(data)
    assert ct_equal(ct, back)
    assert wire.serialize(back) == data
    assert wire.serialize(ctx.backend.encrypt(np.linspace(-1, 1, 10), seed=3)) == data


def test_lower_level_and_size_three_round_trip(ctx):
    be = ctx.backend
    x = be.encrypt([2.0, 3.0])
    low = be.mod_switch_to(x, 0)
    assert ct_equal(wire.deserialize(wire.serialize(low)), low)
    lazy = set_flags(ctx, auto_relin=False, auto_rescale=False).backend
    raw = lazy.mul(x, x)
    assert raw.size == 3
    assert ct_equal(wire.deserialize(wire.serialize(raw)), raw)


def test_out_of_range_residue_rejected(ctx):
    ct = ctx.backend.encrypt([1.0])
    payload = bytearray(wire.ciphertext_payload(ct))
    payload[-8:] = b"\xff" * 8  # top bits of the last residue row
    with pytest.raises(Truncated):
        wire.ciphertext_from_payload(bytes(payload))
    with pytest.raises(Truncated):
        wire.ciphertext_from_payload(wire.ciphertext_payload(ct)[:-5])


def test_vector_round_trip(ctx, rng):
    v = rng.uniform(-1, 1, 30)
    ev = T.encrypt_vector(ctx, v, replicate=True)
    back = wire.deserialize(wire.serialize(ev), ctx)
    assert (back.length, back.replicas, back.valid_span) == (ev.length, ev.replicas, ev.valid_span)
    assert np.allclose(back.decrypt().data, v, atol=1e-4)
    with pytest.raises(TypeError):
        wire.deserialize(wire.serialize(ev))


def test_windowed_vector_keeps_layout(ctx, rng):
    img = rng.uniform(0, 1, (10, 10))
    ev = T.encrypt_windows(ctx, img, 4, 4, 2)
    back = wire.deserialize(wire.serialize(ev), ctx)
    assert back.layout == ev.layout
    out = T.conv2d_im2col(back, np.ones((1, 4, 4)))
    assert np.allclose(out.decrypt().data, T.conv2d_plain(img, np.ones((1, 4, 4)), 2), atol=1e-2)


def test_context_round_trip(ctx):
    pub = wire.serialize(ctx)
    priv = wire.serialize(ctx, include_secret=True)
    assert wire.decode_frame(pub)[0] is FrameKind.PublicContext
    assert wire.decode_frame(priv)[0] is FrameKind.PrivateContext
    assert len(priv) > len(pub)

    c_pub, c_priv = wire.deserialize(pub), wire.deserialize(priv)
    assert not c_pub.is_private and c_priv.is_private
    assert c_pub.params == ctx.params and c_pub.galois_steps == ctx.galois_steps
    assert wire.serialize(c_priv, include_secret=True) == priv

    # a ciphertext made under the loaded public keys decrypts with the original secret
    ct = c_pub.backend.encrypt([1.5, -2.5])
    assert np.allclose(ctx.backend.decrypt(ct)[:2], [1.5, -2.5], atol=1e-4)
    # and rotation keys survive the trip
    r = c_pub.backend.rotate(ctx.backend.encrypt(np.arange(4.0)), 1)
    assert np.allclose(ctx.backend.decrypt(r)[:3], [1, 2, 3], atol=1e-3)


def test_public_frame_with_secret_is_rejected(ctx):
    _, payload = wire.decode_frame(wire.serialize(ctx, include_secret=True))
    forged = wire.encode_frame(FrameKind.PublicContext, payload)
    with pytest.raises(Truncated):
        wire.deserialize(forged)


def test_mock_values_are_not_serializable(mock_ctx):
    with pytest.raises(TypeError):
        wire.serialize(mock_ctx)
    with pytest.raises(TypeError):
        wire.serialize(T.encrypt_vector(mock_ctx, [1.0]))


def test_fresh_ciphertext_size(mnist_ctx):
    """Residues are packed at their prime width, with only header overhead on top."""
    p = mnist_ctx.params
    ct = mnist_ctx.backend.encrypt(np.zeros(10))
    size = len(wire.serialize(ct))
    tight = 2 * p.degree * sum(q.bit_length() for q in ct.parts[0].primes) / 8
    assert tight <= size <= 1.01 * tight
    # the fresh ciphertext stays under the full-modulus figure of about 422 KB
    assert size <= 2 * 8192 * 206 / 8 * 1.1


# ---------------------------------------------------------------- service


@pytest.fixture(scope="module")
def server(mnist_ctx, model):
    srv = wire.serve_inference("127.0.0.1:0", mnist_ctx, model)
    yield srv
    srv.close()


def test_server_holds_no_secret(server):
    assert not server.ctx.is_private


def test_loopback_inference(server, mnist_ctx, model, images):
    res = wire.client_infer(server.address, mnist_ctx, model, images[0], seed=1)
    want = nn.plain_forward(model, images[0]).data
    assert np.max(np.abs(res.logits.data - want)) < 0.5
    assert res.total_bytes < 1.5e6


def test_concurrent_clients(server, mnist_ctx, model, images):
    results = {}

    def run(i):
        results[i] = wire.client_infer(server.address, mnist_ctx, model, images[i], seed=i)

    threads = [threading.Thread(target=run, args=(i,)) for i in (1, 2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in (1, 2):
        want = nn.plain_forward(model, images[i]).data
        assert np.argmax(results[i].logits.data) == np.argmax(want)


def test_stale_request_gets_error_frame(server, mnist_ctx, model, images):
    ev = nn.prepare_input(mnist_ctx, model, images[0])
    low = ev.with_ct(mnist_ctx.backend.mod_switch_to(ev.ct, 5))
    kind, payload, _ = wire.send_request(
        server.address, wire.encode_frame(FrameKind.InferRequest, wire.vector_payload(low)))
    assert kind is FrameKind.Error
    with pytest.raises(LevelMismatch):
        wire.raise_error_frame(payload)


def test_garbage_request_gets_error_frame(server):
    kind, payload, _ = wire.send_request(server.address, b"NOPE" + b"\0" * 20)
    assert kind is FrameKind.Error
    with pytest.raises(BadMagic):
        wire.raise_error_frame(payload)


def test_unreachable_server():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(TransportError):
        wire.send_request(f"127.0.0.1:{port}", b"x", timeout=2)


def test_parse_address():
    assert wire.parse_address("localhost:9000") == ("localhost", 9000)
    assert wire.parse_address(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        wire.parse_address("localhost")
