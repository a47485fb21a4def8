import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oave.attention import (
    ControlSchedule,
    ToyDenoiser,
    ToyDenoiserConfig,
    compute_alignment,
    control_hook,
    edit_cross_attention,
    edit_self_attention,
    inject_cross_columns,
    tokenize,
    toy_denoiser_forward,
)
from oave.errors import AlignmentOutOfRange, EmptyPrompt, HookShapeViolation, ShapeMismatch
from oave.latent import gaussian_noise

WORDS = st.sampled_from(["a", "dog", "cat", "bark", "pig", "with", "raining", "lion", "roar", "the"])


def _stochastic(rng, shape):
    m = rng.random(shape) + 1e-3
    return m / m.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------- prompts

def test_tokenize_words():
    p = tokenize("Dog bark")
    assert p.words == ("dog", "bark")
    assert len(p.ids) == 2 and p.ids[0] == tokenize("dog").ids[0]


def test_tokenize_repeated_word():
    p = tokenize("dog dog")
    assert p.ids[0] == p.ids[1]
    assert p.embeddings[0].tobytes() == p.embeddings[1].tobytes()


@pytest.mark.parametrize("text", ["   ", "", "...!"])
def test_tokenize_empty(text):
    with pytest.raises(EmptyPrompt):
        tokenize(text)


def test_tokenize_punctuation_and_seed():
    assert tokenize("Dog bark.").words == ("dog", "bark")
    a, b = tokenize("dog", vocab_seed=0), tokenize("dog", vocab_seed=1)
    assert a.ids == b.ids and not np.array_equal(a.embeddings, b.embeddings)


# ---------------------------------------------------------------- alignment

def test_alignment_replacement_pair():
    src = tokenize("a dog in the classroom")
    tgt = tokenize("a cat in the classroom")
    assert compute_alignment(src, tgt) == (0, 1, 2, 3, 4)


def test_alignment_addition_pair():
    src = tokenize("dog bark")
    tgt = tokenize("dog bark with raining")
    assert compute_alignment(src, tgt) == (0, 1, None, None)


def test_alignment_removal_pair():
    src = tokenize("lion roar with raining")
    tgt = tokenize("lion roar")
    assert compute_alignment(src, tgt) == (0, 1)


def test_alignment_uses_earliest_unused():
    src = tokenize("dog and dog")
    tgt = tokenize("dog dog")
    assert compute_alignment(src, tgt) == (0, 2)


@given(st.lists(WORDS, min_size=1, max_size=8))
def test_alignment_identity(words):
    p = tokenize(" ".join(words))
    assert compute_alignment(p, p) == tuple(range(len(words)))


@given(st.lists(WORDS, min_size=1, max_size=6), st.lists(WORDS, min_size=1, max_size=6))
def test_alignment_in_range_and_deterministic(a, b):
    src, tgt = tokenize(" ".join(a)), tokenize(" ".join(b))
    al = compute_alignment(src, tgt)
    assert len(al) == len(tgt)
    assert all(x is None or 0 <= x < len(src) for x in al)
    assert al == compute_alignment(src, tgt)
    for j, x in enumerate(al):
        if x is not None and len(a) != len(b):
            assert src.words[x] == tgt.words[j]


# ---------------------------------------------------------------- schedule

def test_schedule_directions():
    lit = ControlSchedule(0.75, 0.75)
    assert lit.self_active(0.8) and lit.self_active(0.75) and not lit.self_active(0.5)
    strength = ControlSchedule(0.75, 0.75, "strength")
    assert strength.self_active(0.25) and strength.self_active(0.5) and not strength.self_active(0.2)
    with pytest.raises(ValueError):
        ControlSchedule(1.2, 0.5)
    with pytest.raises(ValueError):
        ControlSchedule(0.5, 0.5, "sideways")


# ---------------------------------------------------------------- map editing

def test_cross_injection_inside_period(rng=np.random.default_rng(0)):
    tgt = _stochastic(rng, (4, 16, 3))
    src = _stochastic(rng, (4, 16, 2))
    sched = ControlSchedule(0.75, 0.75)
    al = (0, 1, None)
    raw = inject_cross_columns(tgt, src, al)
    assert raw[..., 0].tobytes() == src[..., 0].tobytes()
    assert raw[..., 1].tobytes() == src[..., 1].tobytes()
    assert raw[..., 2].tobytes() == tgt[..., 2].tobytes()
    out = edit_cross_attention(tgt, src, al, 0.8, sched)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out, raw / raw.sum(-1, keepdims=True))


def test_cross_outside_period_untouched():
    rng = np.random.default_rng(1)
    tgt, src = _stochastic(rng, (2, 8, 3)), _stochastic(rng, (2, 8, 3))
    out = edit_cross_attention(tgt, src, (0, 1, 2), 0.5, ControlSchedule(0.75, 0.75))
    assert out is tgt


def test_cross_permutation_not_renormalized():
    rng = np.random.default_rng(2)
    tgt, src = _stochastic(rng, (2, 8, 3)), _stochastic(rng, (2, 8, 3))
    out = edit_cross_attention(tgt, src, (2, 0, 1), 0.9, ControlSchedule(0.75, 0.75))
    assert out.tobytes() == src[..., [2, 0, 1]].tobytes()


def test_cross_renormalize_switch():
    rng = np.random.default_rng(3)
    tgt, src = _stochastic(rng, (2, 8, 3)), _stochastic(rng, (2, 8, 2))
    off = edit_cross_attention(tgt, src, (0, None, 1), 0.9, ControlSchedule(0.75, 0.75, renormalize=False))
    assert off.tobytes() == inject_cross_columns(tgt, src, (0, None, 1)).tobytes()


def test_cross_identity_fixed_point():
    rng = np.random.default_rng(4)
    m = _stochastic(rng, (4, 8, 5))
    for t in (0.0, 0.5, 0.75, 1.0):
        assert edit_cross_attention(m, m.copy(), tuple(range(5)), t, ControlSchedule(0.75, 0.75)).tobytes() == m.tobytes()


def test_cross_alignment_out_of_range():
    rng = np.random.default_rng(5)
    with pytest.raises(AlignmentOutOfRange):
        edit_cross_attention(_stochastic(rng, (1, 4, 2)), _stochastic(rng, (1, 4, 2)), (0, 5), 1.0,
                             ControlSchedule(0.5, 0.5))


def test_self_attention_editing():
    rng = np.random.default_rng(6)
    tgt, src = _stochastic(rng, (4, 8, 8)), _stochastic(rng, (4, 8, 8))
    video = ControlSchedule(0.42, 0.42)
    assert edit_self_attention(tgt, src, 0.9, video) is src
    assert edit_self_attention(tgt, src, 0.1, video) is tgt
    assert edit_self_attention(tgt, src, 0.42, video) is src
    removal = ControlSchedule(1.0, 0.42)
    assert edit_self_attention(tgt, src, 0.9, removal) is tgt
    assert edit_self_attention(tgt, src, 1.0, removal) is src
    with pytest.raises(ShapeMismatch):
        edit_self_attention(tgt, src[:, :4, :4], 0.9, video)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.sampled_from(["literal-eq13", "strength"]),
       st.lists(st.one_of(st.none(), st.integers(0, 3)), min_size=1, max_size=5))
def test_edited_maps_stay_row_stochastic(tau_s, tau_c, t, direction, al):
    rng = np.random.default_rng(7)
    n = len(al)
    tgt_c, src_c = _stochastic(rng, (2, 6, n)), _stochastic(rng, (2, 6, 4))
    sched = ControlSchedule(tau_s, tau_c, direction)
    out = edit_cross_attention(tgt_c, src_c, tuple(al), t, sched)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-5)


# ---------------------------------------------------------------- toy model

@pytest.fixture(scope="module")
def model():
    return ToyDenoiser(ToyDenoiserConfig())


def test_forward_shape_audio(model):
    z = gaussian_noise((1, 16, 16), 0)
    v, rec = model.forward(z.data, 0.7, tokenize("dog bark"))
    assert v.shape == (1, 16, 16)
    assert len(rec) == 2
    assert rec[0].self_maps.shape == (4, 64, 64)
    assert rec[0].cross_maps.shape == (4, 64, 2)


def test_forward_shape_video(model):
    z = gaussian_noise((2, 3, 8, 8), 0)
    v, rec = model.forward(z.data, 0.7, tokenize("a cat"))
    assert v.shape == (2, 3, 8, 8)
    assert rec[0].self_maps.shape == (4, 48, 48)


def test_forward_deterministic():
    z = gaussian_noise((1, 16, 16), 1).data
    p = tokenize("dog bark")
    v1, r1 = toy_denoiser_forward(z, 0.3, p)
    v2, r2 = toy_denoiser_forward(z, 0.3, p)
    assert v1.tobytes() == v2.tobytes()
    for a, b in zip(r1, r2):
        assert a.self_maps.tobytes() == b.self_maps.tobytes()
        assert a.cross_maps.tobytes() == b.cross_maps.tobytes()


def test_recorded_rows_sum_to_one(model):
    _, rec = model.forward(gaussian_noise((1, 16, 16), 2).data, 0.9, tokenize("lion roar with raining"))
    for layer in rec:
        for m in (layer.self_maps, layer.cross_maps):
            assert np.all(m >= 0)
            np.testing.assert_allclose(m.sum(-1), 1.0, atol=1e-5)


def test_identity_hook_is_transparent(model):
    z = gaussian_noise((1, 16, 16), 3).data
    p = tokenize("dog bark")
    v0, _ = model.forward(z, 0.5, p)
    v1, _ = model.forward(z, 0.5, p, hook=lambda kind, layer, m: m)
    assert v0.tobytes() == v1.tobytes()


def test_hook_maps_are_consumed(model):
    z = gaussian_noise((1, 16, 16), 3).data
    p = tokenize("dog bark")
    uniform = lambda kind, layer, m: np.full_like(m, 1.0 / m.shape[-1])
    v0, _ = model.forward(z, 0.5, p)
    v1, rec = model.forward(z, 0.5, p, hook=uniform)
    assert not np.array_equal(v0, v1)
    assert np.all(rec[1].self_maps == 1.0 / 64)


def test_hook_shape_violation(model):
    with pytest.raises(HookShapeViolation):
        model.forward(gaussian_noise((1, 16, 16), 0).data, 0.5, tokenize("dog"), hook=lambda k, l, m: m[:, :2])


def test_patch_mismatch(model):
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((1, 15, 16)), 0.5, tokenize("dog"))


def test_control_hook_uses_source_record(model):
    z = gaussian_noise((1, 16, 16), 4).data
    src_p, tgt_p = tokenize("dog bark"), tokenize("pig bark")
    _, src_rec = model.forward(z, 0.9, src_p)
    trace = {}
    hook = control_hook(src_rec, compute_alignment(src_p, tgt_p), 0.9, ControlSchedule(0.75, 0.75), trace)
    _, consumed = model.forward(z, 0.9, tgt_p, hook=hook)
    for layer in range(2):
        assert consumed[layer].self_maps is src_rec[layer].self_maps
        assert consumed[layer].cross_maps.tobytes() == src_rec[layer].cross_maps.tobytes()
    assert set(trace) == {("self", 0), ("cross", 0), ("self", 1), ("cross", 1)}


def test_config_validation():
    with pytest.raises(ValueError):
        ToyDenoiserConfig(width=30, heads=4)
    with pytest.raises(ValueError):
        ToyDenoiserConfig(layers=0)
