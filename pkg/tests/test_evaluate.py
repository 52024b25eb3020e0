"""Metrics against analytic constructions; correspondence and latent sweeps."""

import copy

import numpy as np
import pytest

import imface.evaluate as E
import imface.model as M
import imface.training as T
from imface.geometry.mesh import TriangleMesh
from tests.conftest import SMALL_CFG


def make_plane(z, half=1.0, n=40):
    ticks = np.linspace(-half, half, n)
    uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
    verts = np.stack([uu.reshape(-1), vv.reshape(-1), np.full(n * n, z)], axis=1)
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    v00 = (i * n + j).reshape(-1)
    v10 = ((i + 1) * n + j).reshape(-1)
    v01 = (i * n + j + 1).reshape(-1)
    v11 = ((i + 1) * n + j + 1).reshape(-1)
    faces = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return TriangleMesh(verts, faces)


def rigid(mesh, rot, t):
    return TriangleMesh(mesh.vertices @ rot.T + t, mesh.faces.copy())


def test_identical_meshes_chamfer_zero_fscore_100():
    mesh = make_plane(0.05)
    assert E.chamfer(mesh, mesh, n=5000, seed=0) < 1e-9
    assert E.fscore(mesh, mesh, tau=0.001, n=5000, seed=0) == 100.0


def test_parallel_planes_chamfer():
    d = 0.07
    # equal footprints: every sample projects orthogonally onto the partner,
    # so both directed means equal d exactly (no rim effects)
    a = make_plane(0.0, half=1.0)
    b = make_plane(d, half=1.0, n=33)
    got = E.chamfer(a, b, n=20000, seed=1)
    assert got == pytest.approx(d * 100.0, rel=0.01)


def test_plane_pair_fscore_thresholds():
    tau = 0.001
    a = make_plane(0.0)
    near = make_plane(tau / 2)
    far = make_plane(2 * tau)
    assert E.fscore(a, near, tau=tau, n=4000, seed=0) == 100.0
    assert E.fscore(a, far, tau=tau, n=4000, seed=0) == 0.0


def test_chamfer_symmetry_and_rigid_invariance():
    a = make_plane(0.0, n=20)
    b = make_plane(0.03, n=25)
    assert E.chamfer(a, b, n=3000, seed=2) == E.chamfer(b, a, n=3000, seed=2)

    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                    [np.sin(theta), np.cos(theta), 0],
                    [0, 0, 1.0]])
    t = np.array([0.3, -0.2, 0.5])
    before = E.chamfer(a, b, n=3000, seed=2)
    after = E.chamfer(rigid(a, rot, t), rigid(b, rot, t), n=3000, seed=2)
    assert abs(before - after) < 1e-9


def test_chamfer_rejects_empty():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ValueError):
        E.chamfer(empty, make_plane(0.0))


def test_fscore_zero_when_no_overlap():
    a = make_plane(0.0, half=0.3)
    b = make_plane(0.9, half=0.3)
    assert E.fscore(a, b, tau=0.001, n=1000, seed=0) == 0.0


@pytest.fixture(scope="module")
def trained(tiny_dataset):
    scans = copy.deepcopy(tiny_dataset)
    cfg = T.TrainConfig(epochs=25, batch_scans=4, surface_per_scan=64, volume_per_scan=32,
                        seed=4, lr=1e-3, lr_decay_start=1000)
    return T.train(scans, SMALL_CFG, cfg), scans


def test_correspond_identical_scan_zero_residual(trained):
    result, scans = trained
    params = result.params
    z = (params["embed.expr"][1], params["embed.ident"][0])
    pts = scans[1].surface.points[:200]
    cmap = E.correspond(params, SMALL_CFG, z, z, points_a=pts, points_b=pts)
    assert np.max(cmap.template_residual) < 1e-12
    assert np.allclose(cmap.matched_points, cmap.source_points)


def test_correspond_uses_template_space(trained):
    result, scans = trained
    params = result.params
    za = (params["embed.expr"][1], params["embed.ident"][0])
    zb = (params["embed.expr"][3], params["embed.ident"][1])
    cmap = E.correspond(params, SMALL_CFG, za, zb,
                        points_a=scans[1].surface.points[:100],
                        points_b=scans[3].surface.points[:400])
    assert cmap.template_residual.shape == (100,)
    assert np.all(cmap.template_residual >= 0)
    assert cmap.matched_points.shape == (100, 3)


def test_warp_to_template_neutral_skips_expression(trained):
    result, scans = trained
    params = result.params
    pts = scans[0].surface.points[:50]
    z = (params["embed.expr"][0], params["embed.ident"][0])
    p2 = E.warp_to_template(params, SMALL_CFG, pts, *z, neutral=True)
    lmk = M.ident_landmarks(params, SMALL_CFG, z[1])
    expected, _ = M.identity_warp(params, SMALL_CFG, pts, z[1], lmk)
    assert np.allclose(p2, expected, atol=1e-12)


def test_pca_energies_sum_to_total_variance():
    rng = np.random.default_rng(0)
    table = rng.normal(size=(20, 6)) * np.array([3, 2, 1, 0.5, 0.1, 0.01])
    mean, directions, stds = E.pca(table)
    total_var = np.sum((table - table.mean(0)) ** 2) / len(table)
    assert np.sum(stds**2) == pytest.approx(total_var, rel=1e-9)


def test_latent_pca_sweeps(trained):
    result, _ = trained
    params = result.params
    meshes = E.latent_pca(params, SMALL_CFG, "expr", 0, [-1.0, 0.0, 1.0], resolution=12)
    assert len(meshes) == 3

    # sweep at 0 equals the mean-code reconstruction
    mean_code = params["embed.expr"].mean(axis=0)
    other = params["embed.ident"].mean(axis=0)
    from imface.reconstruction import marching_cubes

    ref = marching_cubes(lambda p: M.evaluate_sdf(params, SMALL_CFG, p, mean_code, other),
                         resolution=12)
    assert np.array_equal(meshes[1].vertices, ref.vertices)

    with pytest.raises(ValueError, match="component"):
        E.latent_pca(params, SMALL_CFG, "expr", 99, [0.0], resolution=8)
    with pytest.raises(ValueError, match="table"):
        E.latent_pca(params, SMALL_CFG, "bogus", 0, [0.0])


def test_latent_pca_zero_variance_table(trained):
    result, _ = trained
    params = dict(result.params)
    params["embed.expr"] = np.tile(params["embed.expr"][:1], (4, 1))
    meshes = E.latent_pca(params, SMALL_CFG, "expr", 0, [-2.0, 0.0, 2.0], resolution=10)
    for m in meshes[1:]:
        assert np.array_equal(m.vertices, meshes[0].vertices)
