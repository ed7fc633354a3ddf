"""Plain tensors and the encrypted flat vector with its op catalog.

An :class:`EncryptedVector` keeps its logical values in slots ``[0, n)``.
With ``replicas = r`` there are exact copies at offsets ``k*n`` for ``k < r``;
``valid_span`` is how many leading slots follow that periodic pattern and
``clean`` says every slot past it is zero.

Composite ops (power, polyval, dot products, convolution) manage their own
rescaling and always return a ciphertext at scale Δ or derived from it.
Element-wise products follow the context's auto-rescale flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .context import Context
from .errors import (
    EmptyCoeffs,
    LayoutMismatch,
    LevelExhausted,
    ReplicationExhausted,
    ShapeMismatch,
    TooLong,
    ZeroExponent,
)


class PlainTensor:
    """Row-major real tensor; ``data`` is a read-only flat float64 copy."""

    __slots__ = ("data", "shape")

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64)
        if shape is None:
            shape = arr.shape if arr.ndim else (1,)
        shape = tuple(int(d) for d in shape)
        if any(d <= 0 for d in shape):
            raise ShapeMismatch(f"dimensions must be positive, got {shape}")
        flat = arr.ravel()
        if flat.size != math.prod(shape):
            raise ShapeMismatch(f"{flat.size} values do not fill shape {shape}")
        flat.setflags(write=False)
        self.data = flat
        self.shape = shape

    @property
    def rank(self) -> int:
        return len(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data.reshape(self.shape).copy()

    def tolist(self):
        return self.numpy().tolist()

    def reshape(self, shape: Sequence[int]) -> "PlainTensor":
        return PlainTensor(self.data, shape)

    def __len__(self):
        return self.shape[0]

    def __eq__(self, other):
        return isinstance(other, PlainTensor) and self.shape == other.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"PlainTensor(shape={self.shape})"


def _as_plain(x) -> PlainTensor:
    return x if isinstance(x, PlainTensor) else PlainTensor(x)


@dataclass(frozen=True)
class WindowLayout:
    """Column-major im2col packing: tap j of window w sits in slot ``j*chunk + w``."""

    image_shape: tuple[int, int]
    kernel_shape: tuple[int, int]
    stride: int
    windows: int
    taps: int
    chunk: int

    @property
    def tap_blocks(self) -> int:
        """Taps rounded up to a power of two, so the fold is a clean binary tree."""
        return 1 << max(0, (self.taps - 1).bit_length())

    @property
    def span(self) -> int:
        return self.tap_blocks * self.chunk

    @property
    def fold_rounds(self) -> int:
        return max(0, (self.taps - 1).bit_length())

    def pack(self, matrix: np.ndarray) -> np.ndarray:
        """windows × taps matrix → flat slot vector of length ``span``."""
        out = np.zeros((self.tap_blocks, self.chunk))
        out[: self.taps, : self.windows] = np.asarray(matrix).T
        return out.ravel()

    def unpack(self, flat: np.ndarray) -> np.ndarray:
        block = np.asarray(flat)[: self.span].reshape(self.tap_blocks, self.chunk)
        return block[: self.taps, : self.windows].T.copy()


@dataclass(frozen=True, eq=False)
class EncryptedVector:
    ctx: Context
    ct: object
    length: int
    replicas: int = 1
    valid_span: int = 0
    clean: bool = True
    layout: WindowLayout | None = None

    def __post_init__(self):
        if self.valid_span == 0:
            object.__setattr__(self, "valid_span", self.replicas * self.length)

    @property
    def backend(self):
        return self.ctx.backend

    @property
    def level(self) -> int:
        return self.backend.level(self.ct)

    @property
    def scale(self) -> float:
        return self.backend.scale(self.ct)

    def with_ct(self, ct, **changes) -> "EncryptedVector":
        return replace(self, ct=ct, **changes)

    def decrypt(self) -> PlainTensor:
        return decrypt_vector(self.ctx, self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return negate(self)

    def __pow__(self, p: int):
        return power(self, p)

    def __matmul__(self, matrix):
        return dot_plain_matrix(self, matrix)


# ---------------------------------------------------------------- encryption


def encrypt_vector(ctx: Context, v, replicate: bool = False, seed: int | None = None) -> EncryptedVector:
    values = _as_plain(v).data
    n = len(values)
    slots = ctx.slot_count
    if n > slots:
        raise TooLong(f"{n} values exceed {slots} slots")
    if n == 0:
        raise ShapeMismatch("cannot encrypt an empty vector")
    r = slots // n if replicate else 1
    ct = ctx.backend.encrypt(np.tile(values, r), seed=seed)
    return EncryptedVector(ctx, ct, n, r)


def decrypt_vector(ctx: Context, ev: EncryptedVector) -> PlainTensor:
    slots = ctx.backend.decrypt(ev.ct)
    return PlainTensor(slots[: ev.length])


def decrypt_slots(ctx: Context, ev: EncryptedVector) -> np.ndarray:
    """All slot values (for checking replicas and layouts)."""
    return ctx.backend.decrypt(ev.ct)


# ---------------------------------------------------------------- helpers


def _tree_sum(be, cts: list):
    """Pairwise sum in a fixed order."""
    if not cts:
        raise ValueError("nothing to sum")
    while len(cts) > 1:
        nxt = [be.add(cts[i], cts[i + 1]) for i in range(0, len(cts) - 1, 2)]
        if len(cts) % 2:
            nxt.append(cts[-1])
        cts = nxt
    return cts[0]


def _align(be, a, b):
    """Bring two ciphertexts to the lower of their levels (scale untouched)."""
    la, lb = be.level(a), be.level(b)
    if la > lb:
        a = be.mod_switch_to(a, lb)
    elif lb > la:
        b = be.mod_switch_to(b, la)
    return a, b


def _plain_replicated(values: np.ndarray, r: int) -> np.ndarray:
    return np.tile(values, r)


def _check_same_length(a: EncryptedVector, n: int) -> None:
    if a.length != n:
        raise ShapeMismatch(f"lengths {a.length} and {n} differ")


def _merged_meta(a: EncryptedVector, b: EncryptedVector) -> dict:
    r = min(a.replicas, b.replicas)
    span = min(a.valid_span, b.valid_span)
    clean = a.clean and b.clean and a.valid_span == b.valid_span
    layout = a.layout if a.layout == b.layout else None
    return dict(replicas=r, valid_span=span, clean=clean, layout=layout)


# ---------------------------------------------------------------- element-wise


def negate(ev: EncryptedVector) -> EncryptedVector:
    return ev.with_ct(ev.backend.negate(ev.ct))


def square(ev: EncryptedVector) -> EncryptedVector:
    return ev.with_ct(ev.backend.square(ev.ct))


def elementwise(op: str, a: EncryptedVector, b) -> EncryptedVector:
    """``op`` in add, sub, mul; ``b`` is an EncryptedVector or plain values of the same length."""
    be = a.backend
    if isinstance(b, EncryptedVector):
        _check_same_length(a, b.length)
        x, y = _align(be, a.ct, b.ct)
        fn = {"add": be.add, "sub": be.sub, "mul": be.mul}[op]
        return EncryptedVector(a.ctx, fn(x, y), a.length, **_merged_meta(a, b))
    plain = _as_plain(b).data
    _check_same_length(a, len(plain))
    # Only the valid copies get the plain operand; anything past them stays as it was (or zero).
    values = _plain_replicated(plain, a.replicas)
    if op == "add":
        return a.with_ct(be.add_plain(a.ct, values), valid_span=a.replicas * a.length,
                         clean=a.clean and a.valid_span == a.replicas * a.length)
    if op == "sub":
        return a.with_ct(be.sub_plain(a.ct, values), valid_span=a.replicas * a.length,
                         clean=a.clean and a.valid_span == a.replicas * a.length)
    if op == "mul":
        return a.with_ct(be.mul_plain(a.ct, values), valid_span=a.replicas * a.length, clean=True)
    raise ValueError(f"unknown element-wise op {op!r}")


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


# ---------------------------------------------------------------- powers and polynomials


def _power_plan(p: int) -> tuple[int, int]:
    """Split p into h + (p - h) with h the largest power of two below p."""
    h = 1 << ((p - 1).bit_length() - 1)
    return h, p - h


def _powers(ev: EncryptedVector, needed: set[int]) -> dict[int, object]:
    """x^k for every k in ``needed`` with depth ceil(log2 k), sharing work."""
    be = ev.backend
    memo: dict[int, object] = {1: ev.ct}

    def get(k: int):
        if k in memo:
            return memo[k]
        h, rest = _power_plan(k)
        x, y = _align(be, get(h), get(rest))
        memo[k] = be.square(x, rescale=True) if h == rest else be.mul(x, y, rescale=True)
        return memo[k]

    for k in sorted(needed):
        get(k)
    return memo


def power(ev: EncryptedVector, p: int) -> EncryptedVector:
    p = int(p)
    if p <= 0:
        raise ZeroExponent(f"exponent must be a positive integer, got {p}")
    depth = (p - 1).bit_length()
    if depth > ev.level:
        raise LevelExhausted(f"power {p} needs {depth} levels, {ev.level} left")
    return ev.with_ct(_powers(ev, {p})[p])


def polyval(ev: EncryptedVector, coeffs: Sequence[float]) -> EncryptedVector:
    """Σ coeffs[i]·x^i (ascending). Depth ceil(log2 d) + 1 for degree d ≥ 1."""
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise EmptyCoeffs("polynomial needs at least one coefficient")
    be = ev.backend
    params = be.params
    terms = [i for i, c in enumerate(coeffs) if i > 0 and c != 0.0]
    degree = max(terms, default=0)
    depth = (degree - 1).bit_length() if degree else 0
    if depth + 1 > ev.level:
        raise LevelExhausted(f"degree {degree} needs {depth + 1} levels, {ev.level} left")
    top = ev.level - depth  # every term is multiplied by its coefficient at this level
    memo = _powers(ev, set(terms)) if terms else {1: ev.ct}
    r = ev.replicas
    parts = []
    for i in terms or [1]:
        x = memo[i]
        if be.level(x) > top:
            x = be.mod_switch_to(x, top)
        c = coeffs[i] if terms else 0.0
        # Coefficient plaintext scale chosen so every term lands on exactly Δ.
        pt_scale = params.data_primes[top] * params.scale / be.scale(x)
        parts.append(be.mul_plain(x, _plain_replicated(np.full(ev.length, c), r), rescale=True, pt_scale=pt_scale))
    acc = _tree_sum(be, parts)
    if coeffs[0] != 0.0:
        acc = be.add_plain(acc, _plain_replicated(np.full(ev.length, coeffs[0]), r))
    return ev.with_ct(acc, valid_span=r * ev.length, clean=ev.clean and ev.valid_span == r * ev.length)


# ---------------------------------------------------------------- sums and dot products


def _fold_all(be, ct):
    """Every slot ← sum of all slots, via log2(slots) left rotations."""
    step = 1
    while step < be.slot_count:
        ct = be.add(ct, be.rotate(ct, step))
        step <<= 1
    return ct


def _broadcast_result(ctx: Context, ct) -> EncryptedVector:
    slots = ctx.slot_count
    return EncryptedVector(ctx, ct, 1, slots, slots, True, None)


def dot(a: EncryptedVector, b) -> EncryptedVector:
    """Inner product; the result is the sum replicated in every slot."""
    if not isinstance(b, EncryptedVector):
        return dot_plain(a, b)
    _check_same_length(a, b.length)
    be = a.backend
    # The product holds `copies` exact copies of a⊙b and zeros elsewhere.
    if a.clean and b.clean:
        copies = min(a.replicas, b.replicas)
    elif a.clean and a.replicas <= b.replicas:
        copies = a.replicas
    elif b.clean and b.replicas <= a.replicas:
        copies = b.replicas
    else:
        raise LayoutMismatch("dot needs a zero-padded operand whose copies the other operand covers")
    x, y = _align(be, a.ct, b.ct)
    total = _fold_all(be, be.mul(x, y, rescale=True))
    if copies > 1:
        total = be.relabel(total, copies)
    return _broadcast_result(a.ctx, total)


def dot_plain(ev: EncryptedVector, w) -> EncryptedVector:
    """Inner product with a plain vector; result replicated in every slot."""
    plain = _as_plain(w).data
    _check_same_length(ev, len(plain))
    be = ev.backend
    prod = be.mul_plain(ev.ct, plain, rescale=True)
    return _broadcast_result(ev.ctx, _fold_all(be, prod))


def bsgs_split(n: int) -> tuple[int, int]:
    """(baby, giant) counts covering rotations 0..n-1."""
    g = max(1, math.isqrt(n - 1) + 1) if n > 1 else 1
    return g, -(-n // g)


def dot_steps(n: int) -> list[int]:
    """Rotation steps used by :func:`dot_plain_matrix` for n inputs."""
    g, h = bsgs_split(n)
    return [i for i in range(1, min(g, n))] + [g * j for j in range(1, h)]


def matrix_padding(n: int, m: int) -> int:
    """Smallest multiple of m that is at least n."""
    return -(-n // m) * m


def replication_after_dot(valid_span: int, n: int, m: int) -> tuple[int, int]:
    """(valid_span', replicas') after a dot with an n×m matrix; replicas' < 1 means exhausted."""
    d = matrix_padding(n, m)
    span = valid_span - (d - 1)
    return span, max(span, 0) // m


def dot_plain_matrix(ev: EncryptedVector, matrix) -> EncryptedVector:
    """v·M for a plain n×m matrix, using only left rotations.

    The input must carry enough replicas (see :func:`replication_after_dot`).
    Result slot s holds Σ_k v[s+k]·M[(s+k) mod n][s mod m]; rotations are
    grouped baby-step/giant-step and the result is rescaled once.
    """
    mat = _as_plain(matrix)
    if mat.rank != 2:
        raise ShapeMismatch(f"matrix must be rank 2, got shape {mat.shape}")
    n, m = mat.shape
    _check_same_length(ev, n)
    if ev.layout is not None:
        raise LayoutMismatch("dot_plain_matrix needs a flat vector")
    be = ev.backend
    slots = be.slot_count
    span, r_out = replication_after_dot(ev.valid_span, n, m)
    if r_out < 1:
        raise ReplicationExhausted(
            f"{ev.valid_span} valid slots leave {span} after a {n}x{m} product, fewer than {m}"
        )
    if ev.level < 1:
        raise LevelExhausted("dot_plain_matrix needs one level")
    M = mat.numpy()
    out_len = r_out * m
    s_idx = np.arange(out_len)
    diags = np.zeros((n, slots))
    for k in range(n):
        diags[k, :out_len] = M[(s_idx + k) % n, s_idx % m]

    g, h = bsgs_split(n)
    pt_scale = be.restoring_scale(ev.ct)
    baby: dict[int, object] = {0: ev.ct}
    giants = []
    for j in range(h):
        ks = [g * j + i for i in range(g) if g * j + i < n and diags[g * j + i].any()]
        if not ks:
            continue
        prods = []
        for k in ks:
            i = k - g * j
            if i not in baby:
                baby[i] = be.rotate(ev.ct, i)
            # Pre-rotate the diagonal right by g*j so the giant step lines it up.
            prods.append(be.mul_plain(baby[i], np.roll(diags[k], g * j), rescale=False, pt_scale=pt_scale))
        inner = _tree_sum(be, prods)
        giants.append(inner if j == 0 else be.rotate(inner, g * j))
    if not giants:
        giants = [be.mul_plain(ev.ct, np.zeros(slots), rescale=False, pt_scale=pt_scale)]
    out = be.rescale(_tree_sum(be, giants))
    return EncryptedVector(ev.ctx, out, m, r_out, out_len, True, None)


matmul_plain = dot_plain_matrix


# ---------------------------------------------------------------- replication


def replicate_steps(n: int, copies: int) -> list[int]:
    """Right-rotation steps used to make ``copies`` copies of an n-slot block."""
    steps, size, offset = [], 1, 0
    while True:
        if copies & size:
            if offset:
                steps.append(-offset * n)
            offset += size
        if size * 2 > copies:
            break
        steps.append(-size * n)
        size *= 2
    return steps


def _replicate_ct(be, ct, n: int, copies: int):
    result, block, size, offset = None, ct, 1, 0
    while True:
        if copies & size:
            part = block if offset == 0 else be.rotate(block, -offset * n)
            result = part if result is None else be.add(result, part)
            offset += size
        if size * 2 > copies:
            break
        block = be.add(block, be.rotate(block, -size * n))
        size *= 2
    return result


def replicate(ev: EncryptedVector, copies: int | None = None) -> EncryptedVector:
    """Fill the slots with copies of a single zero-padded vector (no level used)."""
    if ev.replicas != 1 or not ev.clean or ev.valid_span != ev.length:
        raise LayoutMismatch("replicate needs a single zero-padded copy")
    slots = ev.backend.slot_count
    copies = slots // ev.length if copies is None else int(copies)
    if copies < 1 or copies * ev.length > slots:
        raise ShapeMismatch(f"{copies} copies of {ev.length} values do not fit {slots} slots")
    ct = _replicate_ct(ev.backend, ev.ct, ev.length, copies)
    return ev.with_ct(ct, replicas=copies, valid_span=copies * ev.length)


# ---------------------------------------------------------------- im2col convolution


def _window_geometry(h: int, w: int, kh: int, kw: int, stride: int) -> tuple[int, int]:
    if kh < 1 or kw < 1 or stride < 1:
        raise ShapeMismatch("kernel sides and stride must be positive")
    if kh > h or kw > w:
        raise ShapeMismatch(f"kernel {kh}x{kw} is larger than image {h}x{w}")
    if (h - kh) % stride or (w - kw) % stride:
        raise ShapeMismatch(f"kernel {kh}x{kw} with stride {stride} does not tile a {h}x{w} image")
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def window_layout(image_shape, kernel_shape, stride: int) -> WindowLayout:
    h, w = (int(x) for x in image_shape)
    kh, kw = (int(x) for x in kernel_shape)
    oh, ow = _window_geometry(h, w, kh, kw, stride)
    windows = oh * ow
    chunk = 1 << max(0, (windows - 1).bit_length())
    return WindowLayout((h, w), (kh, kw), int(stride), windows, kh * kw, chunk)


def im2col_encode(image, kernel_h: int, kernel_w: int, stride: int) -> tuple[PlainTensor, WindowLayout]:
    """Windows as rows (each scanned row-major), plus the packing layout.

    ``layout.pack(matrix)`` gives the column-major, chunk-padded slot vector.
    """
    img = _as_plain(image)
    if img.rank != 2:
        raise ShapeMismatch(f"image must be rank 2, got shape {img.shape}")
    layout = window_layout(img.shape, (kernel_h, kernel_w), stride)
    a = img.numpy()
    oh = (img.shape[0] - kernel_h) // stride + 1
    ow = (img.shape[1] - kernel_w) // stride + 1
    rows = [
        a[i * stride : i * stride + kernel_h, j * stride : j * stride + kernel_w].ravel()
        for i in range(oh)
        for j in range(ow)
    ]
    return PlainTensor(np.array(rows), (layout.windows, layout.taps)), layout


def encrypt_windows(ctx: Context, image, kernel_h: int, kernel_w: int, stride: int,
                    seed: int | None = None) -> EncryptedVector:
    matrix, layout = im2col_encode(image, kernel_h, kernel_w, stride)
    if layout.span > ctx.slot_count:
        raise TooLong(f"im2col layout needs {layout.span} slots, context has {ctx.slot_count}")
    ct = ctx.backend.encrypt(layout.pack(matrix.numpy()), seed=seed)
    return EncryptedVector(ctx, ct, layout.span, 1, layout.span, True, layout)


def conv_steps(layout: WindowLayout, channels: int, copies: int = 1) -> list[int]:
    steps = [layout.chunk << t for t in range(layout.fold_rounds)]
    steps += [-k * layout.windows for k in range(1, channels)]
    steps += replicate_steps(channels * layout.windows, copies)
    return steps


def conv_output_copies(layout: WindowLayout, channels: int, slots: int, replicate_out: bool) -> int:
    return slots // (channels * layout.windows) if replicate_out else 1


def conv2d_im2col(ev: EncryptedVector, kernels, bias=None, replicate_out: bool = False) -> EncryptedVector:
    """Convolution of an im2col-packed image with one or more kernels.

    Per channel: one plain product, ``fold_rounds`` rotate-and-add steps, a
    rescale and a 0/1 mask keeping the window sums. Channels are then moved
    to offsets ``k*windows``, summed, optionally replicated, rescaled and
    given their bias. Uses two levels.
    """
    layout = ev.layout
    if not isinstance(layout, WindowLayout):
        raise LayoutMismatch("conv2d_im2col needs an im2col-packed input (convolutions do not stack)")
    k_arr = np.asarray(kernels.numpy() if isinstance(kernels, PlainTensor) else kernels, dtype=np.float64)
    if k_arr.ndim == 2:
        k_arr = k_arr[None]
    if k_arr.ndim != 3 or tuple(k_arr.shape[1:]) != layout.kernel_shape:
        raise LayoutMismatch(f"kernels of shape {k_arr.shape} do not match the packed {layout.kernel_shape}")
    channels = k_arr.shape[0]
    bias_arr = np.zeros(channels) if bias is None else np.asarray(
        bias.data if isinstance(bias, PlainTensor) else bias, dtype=np.float64).ravel()
    if bias_arr.shape != (channels,):
        raise ShapeMismatch(f"{bias_arr.size} biases for {channels} channels")
    be = ev.backend
    slots = be.slot_count
    out_len = channels * layout.windows
    if out_len > slots:
        raise TooLong(f"{out_len} conv outputs exceed {slots} slots")
    if ev.level < 2:
        raise LevelExhausted(f"conv2d_im2col needs 2 levels, {ev.level} left")

    window_mask = np.zeros(layout.chunk)
    window_mask[: layout.windows] = 1.0
    pt_scale = be.restoring_scale(ev.ct)
    placed = []
    for c in range(channels):
        be.note(f"conv-channel-{c}")
        kplain = np.zeros((layout.tap_blocks, layout.chunk))
        kplain[: layout.taps] = k_arr[c].ravel()[:, None] * window_mask[None, :]
        x = be.mul_plain(ev.ct, kplain.ravel(), rescale=False, pt_scale=pt_scale)
        for t in range(layout.fold_rounds):
            x = be.add(x, be.rotate(x, layout.chunk << t))
        x = be.rescale(x)
        be.note(f"conv-mask-{c}")
        mask = np.zeros(slots)
        mask[: layout.windows] = 1.0
        x = be.mul_plain(x, mask, rescale=False, pt_scale=be.restoring_scale(x))
        placed.append(x if c == 0 else be.rotate(x, -c * layout.windows))
    be.note("conv-pack")
    out = _tree_sum(be, placed)
    copies = conv_output_copies(layout, channels, slots, replicate_out)
    if copies > 1:
        out = _replicate_ct(be, out, out_len, copies)
    out = be.rescale(out)
    if bias is not None:
        out = be.add_plain(out, np.tile(np.repeat(bias_arr, layout.windows), copies))
    return EncryptedVector(ev.ctx, out, out_len, copies, copies * out_len, True, None)


def conv2d_plain(image: np.ndarray, kernels: np.ndarray, stride: int, bias=None) -> np.ndarray:
    """Direct sliding-window convolution, channel-major flattened output."""
    img = np.asarray(image, dtype=np.float64)
    ks = np.asarray(kernels, dtype=np.float64)
    if ks.ndim == 2:
        ks = ks[None]
    c, kh, kw = ks.shape
    oh, ow = _window_geometry(img.shape[0], img.shape[1], kh, kw, stride)
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                out[ch, i, j] = np.sum(img[i * stride : i * stride + kh, j * stride : j * stride + kw] * ks[ch])
        if bias is not None:
            out[ch] += np.asarray(bias, dtype=np.float64).ravel()[ch]
    return out.ravel()
