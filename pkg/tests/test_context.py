import pytest

from hets import context as C
from hets import scheme
from hets.errors import InvalidParams, InvalidRotationStep, InvalidWorkerCount


def test_default_steps_are_powers_of_two(ctx):
    steps = set(ctx.galois_steps)
    k = 1
    while k < ctx.slot_count:
        assert k in steps
        k <<= 1
    assert ctx.is_private


def test_model_workload_adds_hot_steps(model):
    params = scheme.profile("mnist-8192")
    steps = C.default_steps(params, model)
    hot = model.rotation_steps(params.slot_count)
    slots = params.slot_count
    covered = {s % slots for s in steps}
    assert {s % slots for s in hot} <= covered
    # conv fold steps and the FC baby/giant steps are all present
    # MNIST conv folds over 64-slot chunks; FC1 (256 inputs) uses baby steps 1..15, giant steps 16j
    assert {64, 128, 256, 512, 1024, 2048} <= covered
    assert {15, 48, 240} <= covered


def test_explicit_steps_used_exactly():
    c = C.create_context("test-4096", rotation_steps=[3, -5], seed=2, backend="mock")
    assert c.galois_steps == (3, -5)


def test_custom_params_dict():
    c = C.create_context({"degree": 1024, "bits": [40, 30, 40], "scale_bits": 30}, seed=1, backend="mock")
    assert c.params.degree == 1024
    assert c.params.max_level == 1
    with pytest.raises(InvalidParams):
        C.create_context({"degree": 1000, "bits": [40, 40], "scale_bits": 30})
    with pytest.raises(InvalidParams):
        C.create_context({"bits": [40, 40]})
    with pytest.raises(InvalidParams):
        C.create_context(42)
    with pytest.raises(InvalidParams):
        C.create_context("test-4096", backend="gpu")


def test_bad_rotation_steps():
    with pytest.raises(InvalidRotationStep):
        C.create_context("test-4096", rotation_steps=[0], backend="mock")


def test_make_public_idempotent(ctx):
    pub = C.make_public(ctx)
    assert not pub.is_private
    assert C.make_public(pub) is pub
    assert pub.keys.pk is ctx.keys.pk
    assert pub.galois_steps == ctx.galois_steps


def test_set_flags(ctx):
    c = C.set_flags(ctx, auto_rescale=False, worker_count=4)
    assert (c.auto_rescale, c.auto_relin, c.worker_count) == (False, True, 4)
    assert ctx.auto_rescale and ctx.worker_count == 1
    assert c.backend.workers == 4
    for bad in (0, -1, 1.5, True, "2"):
        with pytest.raises(InvalidWorkerCount):
            C.set_flags(ctx, worker_count=bad)
    with pytest.raises(InvalidWorkerCount):
        C.create_context("test-4096", worker_count=0, backend="mock")


def test_same_seed_same_keys():
    a = C.create_context("test-4096", seed=77, rotation_steps=[1])
    b = C.create_context("test-4096", seed=77, rotation_steps=[1])
    assert a.keys.pk.b == b.keys.pk.b
    assert a.keys.rlk == b.keys.rlk
    assert a != b  # identity semantics


def test_security_tag():
    assert "not estimated" in C.security_bits(scheme.profile("mnist-8192"))
