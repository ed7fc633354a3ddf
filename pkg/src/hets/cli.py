"""Command-line entry point: ``hets keygen|encrypt|decrypt|infer|serve|bench``.

Every failure prints one line ``ERROR <Code>: <message>`` to stderr and exits
nonzero (1 for library errors, 2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench, nn, wire
from . import context as C
from . import tensors as T
from .errors import HEError, InvalidWorkerCount, IoError, MissingKey, ParseError, ShapeError
from .scheme import PROFILES, profile

PRIVATE_FILE = "private.ctx"
PUBLIC_FILE = "public.ctx"


class UsageError(Exception):
    code = "UsageError"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_workers() -> int:
    raw = os.environ.get("HETS_WORKERS", "1")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"HETS_WORKERS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- file helpers


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror or exc}") from None


def _write_bytes(path: str, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror or exc}") from None


def load_context(path: str, workers: int | None = None) -> C.Context:
    ctx = wire.deserialize_context(_read_bytes(path))
    if workers is not None:
        ctx = C.set_flags(ctx, worker_count=workers)
    return ctx


def load_image(path: str | None, index: int) -> np.ndarray:
    """A JSON 2-D list, or a ``{"shape", "images"}`` collection indexed by ``index``."""
    if path is None:
        images = nn.load_fixture_images()
        if not 0 <= index < len(images):
            raise ShapeError(f"fixture image index {index} out of range (0..{len(images) - 1})")
        return images[index]
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    try:
        if isinstance(doc, dict):
            images = doc["images"]
            if not 0 <= index < len(images):
                raise ShapeError(f"{path}: image index {index} out of range (0..{len(images) - 1})")
            return np.asarray(images[index], dtype=np.float64).reshape(doc["shape"])
        return np.asarray(doc, dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: not an image file ({exc})") from None


def _parse_values(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], dtype=np.float64)
    except ValueError:
        raise UsageError(f"values must be comma-separated numbers, got {text!r}") from None


def _parse_shapes(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(s.strip().strip("[]")) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"shapes must be comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_keygen(args) -> int:
    model = nn.load_model(args.model) if args.model else None
    if model is None and args.profile == "mnist-8192":
        model = nn.load_fixture_model()
    if not os.path.isdir(args.out):
        raise IoError(f"{args.out}: not a directory")
    start = time.perf_counter()
    ctx = C.create_context(args.profile, seed=args.seed, backend="real", workload=model, worker_count=args.workers)
    elapsed = time.perf_counter() - start
    private = wire.serialize(ctx, include_secret=True)
    public = wire.serialize(C.make_public(ctx))
    priv_path = os.path.join(args.out, PRIVATE_FILE)
    pub_path = os.path.join(args.out, PUBLIC_FILE)
    _write_bytes(priv_path, private)
    _write_bytes(pub_path, public)
    print(f"profile        {ctx.params.name} (N={ctx.params.degree}, {len(ctx.params.ring.primes)} primes, "
          f"max level {ctx.params.max_level})")
    print(f"security       {C.security_bits(ctx.params)}")
    print(f"galois steps   {len(ctx.galois_steps)}: {' '.join(str(s) for s in ctx.galois_steps)}")
    print(f"private        {priv_path} ({len(private)} bytes)")
    print(f"public         {pub_path} ({len(public)} bytes)")
    print(f"key generation {elapsed * 1e3:.1f} ms")
    return 0


def cmd_encrypt(args) -> int:
    ctx = load_context(args.context, args.workers)
    ev = T.encrypt_vector(ctx, _parse_values(args.values), replicate=args.replicate, seed=args.seed)
    data = wire.serialize(ev)
    _write_bytes(args.out, data)
    print(f"{args.out}: {ev.length} values, level {ev.level}, {len(data)} bytes")
    return 0


def cmd_decrypt(args) -> int:
    ctx = load_context(args.context, args.workers)
    ev = wire.deserialize_vector(_read_bytes(args.input), ctx)
    values = ev.decrypt().data
    print(" ".join(f"{v:.6f}" for v in values))
    return 0


def _timing_table(rows: list[tuple[str, str, float | None]]) -> str:
    width = max(len(name) for name, _, _ in rows)
    lines = [f"{'stage':<{width}}  {'ms':>10}  description"]
    for name, desc, ms in rows:
        lines.append(f"{name:<{width}}  {'-' if ms is None else f'{ms:.1f}':>10}  {desc}")
    return "\n".join(lines)


def cmd_infer(args) -> int:
    model = nn.load_model(args.model) if args.model else nn.load_fixture_model()
    image = load_image(args.image, args.index)
    if tuple(image.shape) != tuple(model.input_shape):
        raise ShapeError(f"image shape {image.shape} does not match the model's {tuple(model.input_shape)}")
    ms: dict[str, float | None] = dict.fromkeys(bench.MNIST_ROWS)
    t0 = time.perf_counter()
    if args.context:
        ctx = load_context(args.context, args.workers)
        key_desc = f"load {args.context}"
    else:
        ctx = C.create_context(args.profile, seed=args.seed, backend=args.backend, workload=model,
                               worker_count=args.workers)
        key_desc = f"generate {args.profile} context and keys"
    ms["Key generation"] = (time.perf_counter() - t0) * 1e3
    if not ctx.is_private:
        raise MissingKey("inference needs a private context to decrypt the result")
    extra = []
    if args.connect:
        result = wire.client_infer(args.connect, ctx, model, image, seed=args.seed)
        logits = result.logits.data
        ms["Full forward step"] = result.seconds * 1e3
        extra.append(f"bytes sent     {result.bytes_sent}")
        extra.append(f"bytes received {result.bytes_received}")
        extra.append(f"bytes total    {result.total_bytes} (reference figure: 427 KB)")
        out_ct = None
    else:
        t1 = time.perf_counter()
        ev = nn.prepare_input(ctx, model, image, seed=args.seed)
        t2 = time.perf_counter()
        ms["Input preparation"] = (t2 - t1) * 1e3
        last = t2
        out = ev
        for stage, out in nn.forward_stages(ctx, model, ev):
            now = time.perf_counter()
            ms[bench.STAGE_ROWS.get(stage, stage)] = (now - last) * 1e3
            last = now
        ms["Full forward step"] = (last - t2) * 1e3
        logits = out.decrypt().data
        out_ct = out.ct
    descriptions = {
        "Key generation": key_desc,
        "Input preparation": "im2col packing and encryption",
        "Full forward step": "round trip through the service" if args.connect else "all layers above",
    }
    rows = [(name, descriptions.get(name, "remote" if args.connect else "encrypted layer"), ms[name])
            for name in bench.MNIST_ROWS]
    print(_timing_table(rows))
    print("logits " + " ".join(f"{v:.4f}" for v in logits))
    print(f"argmax {int(np.argmax(logits))}")
    for line in extra:
        print(line)
    if args.save_output:
        if out_ct is None:
            raise HEError("--save-output is only available for local inference")
        _write_bytes(args.save_output, wire.serialize(out_ct))
    return 0


def cmd_serve(args) -> int:
    model = nn.load_model(args.model) if args.model else nn.load_fixture_model()
    ctx = load_context(args.context, args.workers)
    try:
        address = wire.parse_address(args.listen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    server = wire.InferenceServer(address, ctx, model)
    print(f"serving on {server.address} (model depth {model.depth}, profile {ctx.params.name})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_bench(args) -> int:
    if args.suite == "mnist":
        report = bench.run_mnist(args.profile, args.backend, args.workers, args.rounds, args.iterations,
                                 seed=args.seed or 0)
    elif args.suite == "kernels":
        report = bench.run_kernels(args.profile, args.rounds, args.iterations, args.workers, seed=args.seed or 0)
    else:
        shapes = _parse_shapes(args.shapes)
        slots = profile(args.profile).slot_count
        bench.check_shapes(shapes, slots)
        ctx = C.create_context(args.profile, seed=args.seed or 0, backend=args.backend, worker_count=args.workers)
        report = bench.run_ops(args.suite, ctx, shapes, args.rounds, args.iterations, seed=args.seed or 0)
    print(report.table())
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise IoError(f"{args.report}: {exc.strerror or exc}") from None
        print(f"report written to {args.report}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--profile", choices=sorted(PROFILES), default="test-4096")
    common.add_argument("--backend", choices=["real", "mock"], default="real")
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: $HETS_WORKERS or 1)")
    common.add_argument("--seed", type=int, default=None)

    parser = _Parser(prog="hets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", parents=[common], help="generate private and public context files")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--model", help="model whose hot rotation steps get Galois keys")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encrypt", parents=[common], help="encrypt comma-separated values")
    p.add_argument("--context", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--replicate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("decrypt", parents=[common], help="decrypt an encrypted vector file")
    p.add_argument("--context", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_decrypt)

    p = sub.add_parser("infer", parents=[common], help="encrypted inference with a stage timing table")
    p.add_argument("--context", help="private context file (default: generate one for --profile)")
    p.add_argument("--model", help="model JSON (default: bundled fixture model)")
    p.add_argument("--image", help="image JSON (default: bundled fixture images)")
    p.add_argument("--index", type=int, default=0, help="image index within a collection")
    p.add_argument("--connect", metavar="HOST:PORT", help="run the layers on a remote service")
    p.add_argument("--save-output", metavar="PATH", help="write the encrypted logits ciphertext")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", parents=[common], help="run the inference service")
    p.add_argument("--context", required=True, help="context file (the secret key is dropped if present)")
    p.add_argument("--model", help="model JSON (default: bundled fixture model)")
    p.add_argument("--listen", metavar="HOST:PORT", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", parents=[common], help="benchmark suites")
    p.add_argument("suite", choices=bench.SUITES)
    p.add_argument("--shapes", help="comma-separated vector lengths (default: reference shapes that fit)")
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--report", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers is None:
            args.workers = _env_workers()
        if args.workers < 1:
            raise InvalidWorkerCount(f"--workers must be at least 1, got {args.workers}")
        return args.func(args)
    except UsageError as exc:
        print(f"ERROR UsageError: {exc}", file=sys.stderr)
        return 2
    except HEError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
