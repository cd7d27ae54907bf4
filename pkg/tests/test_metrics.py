import numpy as np
import pytest

from bodykit.body_model import PoseState, lbs_forward, regress_joints
from bodykit.errors import DegenerateConfigurationError, NumericError, ParameterError
from bodykit.geometry import Mesh, icosphere, unique_edges
from bodykit.metrics import (
    LossWeights,
    macro_average,
    mesh_loss_F,
    mpere,
    mpjpe,
    mpvpe,
    pa_mpjpe,
    per_joint_errors,
    similarity_align,
)
from bodykit.rotations import random_axis_angle, random_rotation

from oracles import face_normal_loop, mean_norm_loop, mpere_loop, similarity_oracle, unique_edges_loop


def test_mpjpe_basic(rng):
    g = rng.normal(size=(24, 3))
    assert mpjpe(g, g) == 0.0
    assert mpjpe(g + [0.05, 0, 0], g) == pytest.approx(5.0, rel=1e-12)
    p = g + 0.1 * rng.normal(size=g.shape)
    assert mpjpe(p, g) == pytest.approx(100 * mean_norm_loop(p, g), rel=0, abs=1e-12)
    with pytest.raises(ParameterError):
        mpjpe(g[:3], g)


def test_pa_mpjpe_similarity_invariance(rng):
    g = rng.normal(size=(24, 3))
    for _ in range(50):
        s = rng.uniform(0.1, 10)
        p = s * g @ random_rotation(rng).T + rng.normal(size=3) * 5
        assert pa_mpjpe(p, g) <= 1e-9


def test_pa_matches_horn_oracle(rng):
    for _ in range(50):
        g = rng.normal(size=(15, 3))
        p = 2 * g @ random_rotation(rng).T + 0.3 * rng.normal(size=g.shape)
        np.testing.assert_allclose(similarity_align(p, g), similarity_oracle(p, g), atol=1e-10)
        assert pa_mpjpe(p, g) == pytest.approx(100 * mean_norm_loop(similarity_oracle(p, g), g), abs=1e-9)


def test_pa_alignment_is_least_squares_optimal(rng):
    # the alignment minimizes summed squared error, so RMS can only drop;
    # the mean-distance statistic itself may rise (see the one-joint case below)
    for _ in range(200):
        g = rng.normal(size=(24, 3))
        p = g + 0.05 * rng.normal(size=g.shape)
        aligned = similarity_align(p, g)
        assert np.sum((aligned - g) ** 2) <= np.sum((p - g) ** 2) + 1e-15


def test_one_joint_perturbation_can_raise_pa_mpjpe(rng):
    g = rng.normal(size=(24, 3))
    p = g.copy()
    p[5] += [0.1, 0.0, 0.0]
    # squared error spread across all joints exceeds the single-joint mean distance
    assert pa_mpjpe(p, g) > mpjpe(p, g)


def test_pa_degenerate():
    line = np.outer(np.arange(5.0), [1, 0, 0])
    with pytest.raises(DegenerateConfigurationError):
        pa_mpjpe(line, line)


def test_mpvpe(rng):
    g = rng.normal(size=(100, 3))
    assert mpvpe(g + [0, 0.02, 0], g) == pytest.approx(2.0, rel=1e-12)
    p = g + rng.normal(size=g.shape)
    assert mpvpe(p, g) == pytest.approx(100 * mean_norm_loop(p, g), abs=1e-12)


def test_mpere_scale_and_rigid():
    g = icosphere(2)
    assert mpere(g, g) == 0.0
    assert mpere(Mesh(g.vertices * 1.10, g.faces), g) == pytest.approx(0.10, abs=1e-15)
    R = random_rotation(np.random.default_rng(1))
    assert mpere(Mesh(g.vertices @ R.T + 3.0, g.faces), g) < 1e-14


def test_mpere_loop_oracle(rng):
    g = icosphere(1)
    for _ in range(5):
        p = Mesh(g.vertices + 0.1 * rng.normal(size=g.vertices.shape), g.faces)
        assert abs(mpere(p, g) - mpere_loop(p.vertices, g.vertices, g.faces)) <= 1e-12
    assert [tuple(e) for e in unique_edges(g.faces).tolist()] == unique_edges_loop(g.faces)


def test_mpere_zero_length_edge():
    v = np.array([[0.0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(NumericError, match=r"\(0, 1\)"):
        mpere(Mesh(v, [[0, 1, 2]]), Mesh(v, [[0, 1, 2]]))


def tetrahedron():
    v = np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def test_tetrahedron_mirror_normal_term(rigid_model):
    # hand computation: mirroring x keeps faces' index order, so each face normal
    # n becomes -(n_x', ...) with cos = -(1 - 2 n_x^2) = -1/3, giving 1 - cos = 4/3
    from bodykit.metrics import face_normals

    t = tetrahedron()
    n, _ = face_normals(t.vertices, t.faces)
    for i, f in enumerate(t.faces):
        np.testing.assert_allclose(n[i], face_normal_loop(t.vertices, f))
        assert np.dot(n[i], t.vertices[f].mean(axis=0)) > 0
    mirrored = Mesh(t.vertices * [-1, 1, 1], t.faces)
    nm, _ = face_normals(mirrored.vertices, t.faces)
    cos = np.sum(n * nm, axis=1)
    np.testing.assert_allclose(1 - cos, 4 / 3, atol=1e-15)


def _loss_loop(p, g, model):
    vertex = float(np.mean(np.abs(p.vertices - g.vertices)))
    joint = float(np.mean(np.abs(regress_joints(model, p.vertices) - regress_joints(model, g.vertices))))
    terms = []
    for f in g.faces:
        terms.append(1 - float(np.dot(face_normal_loop(p.vertices, f), face_normal_loop(g.vertices, f))))
    edges = unique_edges_loop(g.faces)
    edge = sum(abs(np.linalg.norm(p.vertices[a] - p.vertices[b]) - np.linalg.norm(g.vertices[a] - g.vertices[b]))
               for a, b in edges) / len(edges)
    return vertex, joint, sum(terms) / len(terms), edge


def test_mesh_loss_zero_and_oracle(soft_model, rng):
    g = lbs_forward(soft_model, PoseState(random_axis_angle(rng, 24, 0.5))).mesh
    zero = mesh_loss_F(g, g, soft_model)
    assert zero.total == 0.0 and zero.skipped_faces == 0
    p = g.with_vertices(g.vertices + 0.01 * rng.normal(size=g.vertices.shape))
    out = mesh_loss_F(p, g, soft_model)
    np.testing.assert_allclose(out[:4], _loss_loop(p, g, soft_model), rtol=0, atol=1e-12)
    assert out.total == pytest.approx(sum(out[:4]), rel=1e-13)
    w = mesh_loss_F(p, g, soft_model, LossWeights(2.0, 0.0, 1.0, 0.5))
    assert w.total == pytest.approx(2 * out.vertex + out.normal + 0.5 * out.edge, rel=1e-13)


def test_mesh_loss_skips_degenerate_faces(chain_model):
    g = chain_model.template_mesh()
    v = g.vertices.copy()
    f0 = g.faces[0]
    v[f0[2]] = v[f0[0]]  # collapse the first face
    bad = Mesh(v, g.faces)
    out = mesh_loss_F(bad, bad, chain_model)
    assert out.skipped_faces >= 1 and out.normal == 0.0


def test_macro_average_and_per_joint(rng):
    assert macro_average([1.0, 2.0, 6.0]) == 3.0
    assert np.isnan(macro_average([]))
    g = rng.normal(size=(5, 3))
    e = per_joint_errors(g + [0, 0, 0.03], g)
    np.testing.assert_allclose(e, 3.0)


def test_all_metrics_nonnegative(rng):
    for _ in range(20):
        g, p = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        assert mpjpe(p, g) >= 0 and pa_mpjpe(p, g) >= 0 and mpvpe(p, g) >= 0


def test_collapsed_prediction_face_costs_one(chain_model):
    g = chain_model.template_mesh()
    v = g.vertices.copy()
    f0 = g.faces[0]
    v[f0[1]] = v[f0[0]]
    out = mesh_loss_F(Mesh(v, g.faces), g, chain_model)
    from bodykit.geometry import face_normals

    n_p, _ = face_normals(v, g.faces)
    n_g, _ = face_normals(g.vertices, g.faces)
    expect = np.mean(1 - np.sum(n_p * n_g, axis=1))
    assert out.normal == pytest.approx(expect, abs=1e-12)
