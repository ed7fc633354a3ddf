"""Layers, models, the JSON model format, and plain/encrypted forward passes.

Model file grammar (JSON)::

    model   := {"format": "hets-model", "version": 1,
                "input_shape": [H, W], "depth": int?, "layers": [layer, ...]}
    layer   := conv | linear | square
    conv    := {"type": "conv2d", "kernel": [kh, kw], "stride": int,
                "channels": int, "weights": [float * channels*kh*kw], "bias": [float * channels]}
    linear  := {"type": "linear", "in": int, "out": int,
                "weights": [float * in*out], "bias": [float * out]}
    square  := {"type": "square"}

Weights are flat row-major: conv as (channels, kh, kw), linear as (in, out).
``depth``, when present, must equal the computed level budget.
A conv layer may only come first (its input must be the im2col-packed image).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator

import numpy as np

from . import tensors as T
from .context import Context
from .errors import HEError, ParseError, ShapeError, ShapeMismatch
from .tensors import EncryptedVector, PlainTensor

FORMAT = "hets-model"
VERSION = 1


@dataclass(frozen=True, eq=False)
class Conv2d:
    weights: np.ndarray  # (channels, kh, kw)
    bias: np.ndarray  # (channels,)
    stride: int
    depth = 2

    @property
    def channels(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[2]


@dataclass(frozen=True, eq=False)
class Linear:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    depth = 1

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True, eq=False)
class Square:
    depth = 1


Layer = Conv2d | Linear | Square


def _layer_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Square):
        return True
    same = np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
    return same and getattr(a, "stride", None) == getattr(b, "stride", None)


@dataclass(frozen=True, eq=False)
class Model:
    input_shape: tuple[int, int]
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.output_sizes()  # validates

    @property
    def depth(self) -> int:
        return sum(layer.depth for layer in self.layers)

    def output_sizes(self) -> list[int]:
        """Flat output size after each layer; raises ShapeError naming the layer."""
        sizes = []
        size = math.prod(self.input_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                if i != 0:
                    raise ShapeError(f"layer {i} (conv2d): convolution must be the first layer")
                try:
                    layout = T.window_layout(self.input_shape, layer.kernel, layer.stride)
                except ShapeMismatch as exc:
                    raise ShapeError(f"layer {i} (conv2d): {exc}") from None
                if layer.bias.shape != (layer.channels,):
                    raise ShapeError(f"layer {i} (conv2d): {layer.bias.size} biases for {layer.channels} channels")
                size = layer.channels * layout.windows
            elif isinstance(layer, Linear):
                if layer.in_features != size:
                    raise ShapeError(f"layer {i} (linear): expects {layer.in_features} inputs, previous layer gives {size}")
                if layer.bias.shape != (layer.out_features,):
                    raise ShapeError(f"layer {i} (linear): {layer.bias.size} biases for {layer.out_features} outputs")
                size = layer.out_features
            elif not isinstance(layer, Square):
                raise ShapeError(f"layer {i}: unknown layer type {type(layer).__name__}")
            sizes.append(size)
        return sizes

    def stage_names(self) -> list[str]:
        names, sq, fc = [], 0, 0
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                names.append("conv")
            elif isinstance(layer, Square):
                sq += 1
                names.append(f"square{sq}")
            else:
                fc += 1
                names.append(f"FC{fc}")
        return names

    def conv_copies(self, slots: int) -> int:
        """Replicas the conv output is spread into (only when a linear layer follows)."""
        first = self.layers[0] if self.layers else None
        if not isinstance(first, Conv2d):
            return 1
        follows = any(isinstance(layer, Linear) for layer in self.layers[1:])
        layout = T.window_layout(self.input_shape, first.kernel, first.stride)
        return T.conv_output_copies(layout, first.channels, slots, follows)

    def rotation_steps(self, slots: int) -> list[int]:
        """Hot rotation steps for an encrypted forward pass."""
        steps: list[int] = []
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                layout = T.window_layout(self.input_shape, layer.kernel, layer.stride)
                steps += T.conv_steps(layout, layer.channels, self.conv_copies(slots))
            elif isinstance(layer, Linear):
                steps += T.dot_steps(layer.in_features)
        return steps

    def __eq__(self, other):
        return (
            isinstance(other, Model)
            and self.input_shape == other.input_shape
            and len(self.layers) == len(other.layers)
            and all(_layer_equal(a, b) for a, b in zip(self.layers, other.layers))
        )


# ---------------------------------------------------------------- file format


def _floats(obj, key: str, count: int, where: str) -> np.ndarray:
    try:
        arr = np.asarray(obj[key], dtype=np.float64)
    except KeyError:
        raise ParseError(f"{where}: missing {key!r}") from None
    except (TypeError, ValueError):
        raise ParseError(f"{where}: {key!r} must be a list of numbers") from None
    if arr.ndim != 1:
        raise ParseError(f"{where}: {key!r} must be a flat list")
    if arr.size != count:
        raise ShapeError(f"{where}: {key!r} has {arr.size} values, expected {count}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: {key!r} contains non-finite values")
    return arr


def _int(obj, key: str, where: str) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise ParseError(f"{where}: {key!r} must be a positive integer")
    return v


def model_from_dict(doc) -> Model:
    if not isinstance(doc, dict):
        raise ParseError("model document must be an object")
    if doc.get("format") != FORMAT:
        raise ParseError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}")
    shape = doc.get("input_shape")
    if not (isinstance(shape, list) and len(shape) == 2 and all(isinstance(d, int) and d > 0 for d in shape)):
        raise ParseError("input_shape must be [H, W] with positive integers")
    raw = doc.get("layers")
    if not isinstance(raw, list):
        raise ParseError("layers must be a list")
    layers = []
    for i, spec in enumerate(raw):
        where = f"layer {i}"
        if not isinstance(spec, dict):
            raise ParseError(f"{where}: must be an object")
        kind = spec.get("type")
        where = f"layer {i} ({kind})"
        if kind == "square":
            layers.append(Square())
        elif kind == "conv2d":
            k = spec.get("kernel")
            if not (isinstance(k, list) and len(k) == 2 and all(isinstance(d, int) and d > 0 for d in k)):
                raise ParseError(f"{where}: kernel must be [kh, kw]")
            c = _int(spec, "channels", where)
            stride = _int(spec, "stride", where)
            w = _floats(spec, "weights", c * k[0] * k[1], where).reshape(c, k[0], k[1])
            layers.append(Conv2d(w, _floats(spec, "bias", c, where), stride))
        elif kind == "linear":
            n, m = _int(spec, "in", where), _int(spec, "out", where)
            w = _floats(spec, "weights", n * m, where).reshape(n, m)
            layers.append(Linear(w, _floats(spec, "bias", m, where)))
        else:
            raise ParseError(f"layer {i}: unknown type {kind!r}")
    model = Model(tuple(shape), tuple(layers))
    if "depth" in doc and doc["depth"] != model.depth:
        raise ParseError(f"declared depth {doc['depth']!r} differs from the computed {model.depth}")
    return model


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, Square):
            layers.append({"type": "square"})
        elif isinstance(layer, Conv2d):
            layers.append({
                "type": "conv2d",
                "kernel": list(layer.kernel),
                "stride": layer.stride,
                "channels": layer.channels,
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
            })
        else:
            layers.append({
                "type": "linear",
                "in": layer.in_features,
                "out": layer.out_features,
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
            })
    return {"format": FORMAT, "version": VERSION, "input_shape": list(model.input_shape),
            "depth": model.depth, "layers": layers}


def load_model(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    try:
        return model_from_dict(doc)
    except HEError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


# ---------------------------------------------------------------- plain evaluation


def _check_image(model: Model, image) -> np.ndarray:
    img = np.asarray(image.numpy() if isinstance(image, PlainTensor) else image, dtype=np.float64)
    if img.shape != tuple(model.input_shape):
        raise ShapeError(f"input shape {img.shape} does not match the model's {tuple(model.input_shape)}")
    return img


def _apply_plain(layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Conv2d):
        return T.conv2d_plain(x, layer.weights, layer.stride, layer.bias)
    if isinstance(layer, Linear):
        return x.ravel() @ layer.weights + layer.bias
    return x * x


def plain_activations(model: Model, image) -> list[np.ndarray]:
    """Flat output of every layer."""
    x = _check_image(model, image)
    out = []
    for layer in model.layers:
        x = _apply_plain(layer, x)
        out.append(np.ravel(x))
    return out


def plain_forward(model: Model, image) -> PlainTensor:
    x = _check_image(model, image)
    for layer in model.layers:
        x = _apply_plain(layer, x)
    return PlainTensor(np.ravel(x))


# ---------------------------------------------------------------- encrypted evaluation


def prepare_input(ctx: Context, model: Model, image, seed: int | None = None) -> EncryptedVector:
    """Client side: im2col-pack (when the model starts with a conv) and encrypt."""
    img = _check_image(model, image)
    first = model.layers[0] if model.layers else None
    try:
        if isinstance(first, Conv2d):
            kh, kw = first.kernel
            return T.encrypt_windows(ctx, img, kh, kw, first.stride, seed=seed)
        replicate = any(isinstance(layer, Linear) for layer in model.layers)
        return T.encrypt_vector(ctx, img.ravel(), replicate=replicate, seed=seed)
    except ShapeMismatch as exc:
        raise ShapeError(str(exc)) from None


def forward_stages(ctx: Context, model: Model, ev: EncryptedVector) -> Iterator[tuple[str, EncryptedVector]]:
    """Yield (stage name, output) after each layer. Errors name the failing stage."""
    if ev.ctx is not ctx:
        ev = EncryptedVector(ctx, ev.ct, ev.length, ev.replicas, ev.valid_span, ev.clean, ev.layout)
    copies = model.conv_copies(ctx.slot_count)
    for name, layer in zip(model.stage_names(), model.layers):
        try:
            if isinstance(layer, Conv2d):
                ev = T.conv2d_im2col(ev, layer.weights, layer.bias, replicate_out=copies > 1)
            elif isinstance(layer, Linear):
                ev = T.dot_plain_matrix(ev, layer.weights)
                ev = T.add(ev, layer.bias)
            else:
                ev = T.square(ev)
        except HEError as exc:
            err = type(exc)(f"{name}: {exc}")
            err.stage = name
            raise err from exc
        yield name, ev


def encrypted_forward(ctx: Context, model: Model, ev: EncryptedVector) -> EncryptedVector:
    out = ev
    for _, out in forward_stages(ctx, model, ev):
        pass
    return out


def level_trace(ctx: Context, model: Model, ev: EncryptedVector) -> list[tuple[str, int]]:
    """Measured levels consumed per stage; a conv reports its product and mask levels separately."""
    out = []
    level = ev.level
    be = ctx.backend
    with be.tracing() as events:
        for name, cur in forward_stages(ctx, model, ev):
            if name == "conv":
                levels = sorted({e.level for e in events if e.op == "rescale"}, reverse=True)
                prev = level
                for label, lv in zip(("conv", "mask"), levels):
                    out.append((label, prev - lv))
                    prev = lv
            else:
                out.append((name, level - cur.level))
            level = cur.level
            events.clear()
    return out


# ---------------------------------------------------------------- fixtures

FIXTURE_MODEL_SEED = 20210429
FIXTURE_IMAGE_SEED = 7
FIXTURE_IMAGE_COUNT = 20


def fixture_path(name: str) -> str:
    return str(resources.files("hets") / "fixtures" / name)


def synthetic_images(seed: int = FIXTURE_IMAGE_SEED, count: int = FIXTURE_IMAGE_COUNT) -> np.ndarray:
    """Digit-like 28×28 images in [0, 1]: a few thick random strokes, lightly blurred."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:28, 0:28]
    images = np.zeros((count, 28, 28))
    for n in range(count):
        img = np.zeros((28, 28))
        for _ in range(rng.integers(2, 5)):
            p0 = rng.uniform(5, 23, 2)
            p1 = rng.uniform(5, 23, 2)
            for t in np.linspace(0, 1, 40):
                cy, cx = p0 + t * (p1 - p0)
                img = np.maximum(img, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 2.0))
        images[n] = np.round(img, 4)
    return images


def synthetic_model(seed: int = FIXTURE_MODEL_SEED, images: np.ndarray | None = None) -> Model:
    """The 4×7×7/3 conv → square → 256×64 → square → 64×10 network with seeded weights.

    Each layer is rescaled so its largest activation over ``images`` is about 2
    (logits about 4), keeping every intermediate well inside [-10, 10].
    """
    rng = np.random.default_rng(seed)
    images = synthetic_images() if images is None else images
    conv_w = rng.normal(0, 1, (4, 7, 7))
    conv_b = rng.normal(0, 0.1, 4)
    fc1_w = rng.normal(0, 1, (256, 64))
    fc1_b = rng.normal(0, 0.1, 64)
    fc2_w = rng.normal(0, 1, (64, 10))
    fc2_b = rng.normal(0, 0.1, 10)

    def peak(model: Model, index: int) -> float:
        return max(float(np.abs(plain_activations(model, img)[index]).max()) for img in images)

    def build():
        return Model((28, 28), (Conv2d(conv_w, conv_b, 3), Square(), Linear(fc1_w, fc1_b), Square(),
                                Linear(fc2_w, fc2_b)))

    for index, target in ((0, 2.0), (2, 2.0), (4, 4.0)):
        f = target / peak(build(), index)
        if index == 0:
            conv_w, conv_b = conv_w * f, conv_b * f
        elif index == 2:
            fc1_w, fc1_b = fc1_w * f, fc1_b * f
        else:
            fc2_w, fc2_b = fc2_w * f, fc2_b * f
    r = lambda a: np.round(a, 6)  # noqa: E731
    return Model((28, 28), (Conv2d(r(conv_w), r(conv_b), 3), Square(), Linear(r(fc1_w), r(fc1_b)), Square(),
                            Linear(r(fc2_w), r(fc2_b))))


def load_fixture_model() -> Model:
    return load_model(fixture_path("mnist_cnn.json"))


def load_fixture_images() -> np.ndarray:
    with open(fixture_path("mnist_images.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    return np.asarray(doc["images"], dtype=np.float64).reshape(-1, *doc["shape"])


def write_fixtures(directory: str | os.PathLike) -> None:
    """Regenerate the shipped fixture files from their seeds."""
    images = synthetic_images()
    model = synthetic_model(images=images)
    os.makedirs(directory, exist_ok=True)
    save_model(model, os.path.join(directory, "mnist_cnn.json"))
    with open(os.path.join(directory, "mnist_images.json"), "w", encoding="utf-8") as fh:
        json.dump({"shape": [28, 28], "images": [img.ravel().tolist() for img in images]}, fh)
        fh.write("\n")
    manifest = {
        "mnist_cnn.json": {"generator": "hets.nn.synthetic_model", "seed": FIXTURE_MODEL_SEED},
        "mnist_images.json": {"generator": "hets.nn.synthetic_images", "seed": FIXTURE_IMAGE_SEED,
                              "count": FIXTURE_IMAGE_COUNT},
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
