import json

import numpy as np
import pytest

from star_zsl import stnsr
from star_zsl import tensor as T
from star_zsl.errors import DataError, DimensionError, ValidationError
from star_zsl.layers import MLP2
from star_zsl.semantics import (
    SemanticEmbeddingSet,
    SemanticStream,
    augment_side_info,
    build_embeddings,
    embed,
    load_fixture,
    load_side_info,
    parse_side_info,
    project_semantic,
    pseudo_embed,
)
from star_zsl.skeleton import NTU25, load_dataset, make_strategy
from star_zsl.tensor import Parameter, Tensor

from fdcheck import numeric_grad, rel_error

SIX = make_strategy(NTU25, "six").part_names


def test_ntu_fixture_validates_for_six_parts():
    records = load_side_info(load_fixture("side_info_ntu_sample.json"), SIX)
    by_name = {r.name: r for r in records}
    assert by_name["drink water"].parts["head"] == "head tilts back slightly"


def test_synthetic_fixture_validates_for_six_parts():
    records = load_side_info(load_fixture("side_info_synth12.json"), SIX)
    assert len(records) == 12


def test_missing_part_names_category_and_part():
    doc = json.loads(load_fixture("side_info_ntu_sample.json").read_text())
    del doc[0]["parts"]["foot"]
    with pytest.raises(ValidationError, match=r"drink water.*foot"):
        parse_side_info(doc, SIX)


def test_duplicate_category_rejected():
    doc = json.loads(load_fixture("side_info_ntu_sample.json").read_text())
    doc.append(dict(doc[0]))
    with pytest.raises(ValidationError, match="duplicate"):
        parse_side_info(doc, SIX)


def test_empty_description_rejected():
    doc = json.loads(load_fixture("side_info_ntu_sample.json").read_text())
    doc[1]["parts"]["hip"] = "  "
    with pytest.raises(ValidationError, match="empty"):
        parse_side_info(doc, SIX)


def test_parts_outside_strategy_rejected():
    doc = json.loads(load_fixture("side_info_ntu_sample.json").read_text())
    with pytest.raises(ValidationError, match="outside"):
        parse_side_info(doc, ("head", "hand", "arm", "hip", "leg"))


def test_missing_side_info_file(tmp_path):
    with pytest.raises(DataError):
        load_side_info(tmp_path / "nope.json")


# ---------------------------------------------------------------- providers


def test_pseudo_deterministic_and_unit_norm():
    a, b = pseudo_embed(["abc"], 64), pseudo_embed(["abc"], 64)
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a[0]) - 1.0) < 1e-6


def test_pseudo_known_hash_vector():
    # FNV-1a of "abc" is a published reference value
    from star_zsl.rng import fnv1a_64

    assert fnv1a_64("abc") == 0xE71FA2190541574B
    assert fnv1a_64("") == 0xCBF29CE484222325


def test_pseudo_no_collisions_on_fixture_and_generated_names():
    names = []
    for fixture in ("side_info_ntu_sample.json", "side_info_synth12.json"):
        for rec in json.loads(load_fixture(fixture).read_text()):
            names.append(rec["name"])
            names.extend(rec["parts"].values())
    names = sorted(set(names))
    names += [f"category {i}" for i in range(200 - len(names))] if len(names) < 200 else []
    vecs = pseudo_embed(names, 64)
    gram = vecs @ vecs.T
    np.fill_diagonal(gram, 0)
    assert np.abs(gram).max() < 0.999


def test_file_embed_round_trip(tmp_path, rng):
    mat = rng.normal(size=(5, 16)).astype(np.float32)
    stnsr.save(tmp_path / "e.stnsr", mat)
    back = embed("file", ["x"] * 5, path=tmp_path / "e.stnsr")
    assert back.tobytes() == mat.tobytes()
    with pytest.raises(DataError, match="rows"):
        embed("file", ["x"] * 4, path=tmp_path / "e.stnsr")


def test_unknown_provider():
    with pytest.raises(DataError):
        embed("clip", ["a"], 8)


def test_embedding_set_invariants():
    with pytest.raises(DataError):
        SemanticEmbeddingSet(np.ones((3, 4)), np.ones((2, 3, 4)), "pseudo")
    with pytest.raises(DimensionError):
        SemanticEmbeddingSet(np.ones((3, 4)), np.ones((2, 4, 4)), "file")
    SemanticEmbeddingSet(np.ones((3, 4)), np.ones((2, 3, 4)), "file")


def test_build_pseudo_embeddings(synth_root):
    ds = load_dataset(synth_root)
    six = make_strategy(ds.layout, "six")
    emb = build_embeddings(ds, six, "pseudo", d_sem=32)
    assert emb.f_cn.shape == (12, 32) and emb.f_si.shape == (6, 12, 32)
    assert emb.provenance == "pseudo"
    syn = build_embeddings(ds, six, "synthetic")
    assert syn.f_si.shape == (6, 12, 64)


# ---------------------------------------------------------------- augmentation and projection


def test_augment_identities(rng):
    f = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(augment_side_info(f, np.zeros_like(f)).data, f)
    np.testing.assert_array_equal(augment_side_info(np.zeros_like(f), f).data, f)
    with pytest.raises(DimensionError):
        augment_side_info(f, np.zeros((2, 3, 5)))


def test_augment_gradient_is_ones(f64, rng):
    p = Parameter(rng.normal(size=(2, 3, 4)), "p")
    T.backward(T.sum(augment_side_info(rng.normal(size=(2, 3, 4)), p)))
    np.testing.assert_array_equal(p.grad, np.ones((2, 3, 4)))


def _identity_mlp(d):
    mlp = MLP2("id", d, d, d, np.random.default_rng(0))
    mlp.fc1.weight.data[...] = np.eye(d)
    mlp.fc2.weight.data[...] = np.eye(d)
    mlp.fc1.bias.data[...] = 0
    mlp.fc2.bias.data[...] = 0
    return mlp


def test_identity_projectors_pass_nonnegative_input(f64, rng):
    aug = np.abs(rng.normal(size=(3, 5, 8)))
    names = np.abs(rng.normal(size=(5, 8)))
    f_si, f_cn = project_semantic(Tensor(aug), Tensor(names), [_identity_mlp(8)], _identity_mlp(8))
    np.testing.assert_array_equal(f_si.data, aug)
    np.testing.assert_array_equal(f_cn.data, names)


def test_stream_output_shapes(rng):
    stream = SemanticStream(SIX, 12, 64, 64, 32, rng)
    emb = SemanticEmbeddingSet(pseudo_embed([f"c{i}" for i in range(12)], 64),
                               np.stack([pseudo_embed([f"p{e}{i}" for i in range(12)], 64) for e in range(6)]),
                               "pseudo")
    f_si, f_cn = stream(emb)
    assert f_si.shape == (6, 12, 32) and f_cn.shape == (12, 32)
    # the prompt covers every category, known or not
    assert stream.prompt.shape == (6, 12, 64)
    assert 0.015 < stream.prompt.data.std() < 0.025


def test_per_part_projectors(rng):
    stream = SemanticStream(SIX, 4, 8, 8, 4, rng, per_part_projector=True)
    names = [p.name for p in stream.parameters()]
    assert "semantic.si_proj.arm.fc1.weight" in names
    emb = SemanticEmbeddingSet(pseudo_embed(list("abcd"), 8),
                               np.stack([pseudo_embed([f"{e}{c}" for c in "abcd"], 8) for e in range(6)]), "pseudo")
    assert stream(emb)[0].shape == (6, 4, 4)


def test_projector_gradient(f64, rng):
    stream = SemanticStream(("a", "b"), 3, 5, 6, 4, rng)
    f_si, f_cn = rng.normal(size=(2, 3, 5)), rng.normal(size=(3, 5))
    w1, w2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4))
    params = stream.parameters()

    def loss():
        a, b = project_semantic(augment_side_info(Tensor(f_si), stream.prompt), Tensor(f_cn),
                                stream.si_projectors, stream.cn_projector)
        return T.add(T.sum(T.mul(a, Tensor(w1))), T.sum(T.mul(b, Tensor(w2))))

    T.backward(loss())
    auto = [p.grad.copy() for p in params]
    arrays = [p.data for p in params]

    def f(*_):
        return loss().item()

    num = numeric_grad(f, arrays)
    for p, a, n in zip(params, auto, num):
        assert rel_error(a, n) <= 1e-5, p.name
