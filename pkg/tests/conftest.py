"""Shared fixtures: a tiny preprocessed corpus and a small model config."""

import numpy as np
import pytest

import imface.model as M
import imface.training as T
from imface import preprocess as pp
from imface.synth import SynthSpec, canonical_landmark_template, gen_face

SMALL_CFG = M.ModelConfig(expr_dim=12, ident_dim=12, regions=5, pe_bands=3, mini_hidden=8,
                          hyper_hidden=10, landmark_hidden=16, fusion_hidden=6)


def preprocess_tiny(scan, n_surface=600, n_volume=250, seed=0):
    return pp.preprocess_scan(
        scan.mesh, scan.landmarks, 0.1, canonical_landmark_template(),
        n_surface, n_volume, seed, identity_id=scan.identity_id,
        neutral=scan.neutral, scan_id=scan.scan_id, verify_probes=2000,
    )


@pytest.fixture(scope="session")
def tiny_dataset():
    """Two identities, one expressive scan each plus neutrals; grid kept small."""
    rng = np.random.default_rng(0)
    scans = []
    for i in range(2):
        ident = rng.uniform(-0.7, 0.7, 8)
        for k, expr in enumerate([np.zeros(6), rng.uniform(-0.8, 0.8, 6)]):
            spec = SynthSpec(identity=ident, expression=expr, grid=48)
            raw = gen_face(spec, f"id{i}", f"id{i}_e{k}")
            processed = preprocess_tiny(raw, seed=10 * i + k)
            scans.append(
                T.TrainingScan(
                    scan_id=raw.scan_id,
                    identity_id=raw.identity_id,
                    neutral=raw.neutral,
                    surface=processed.surface,
                    volume=processed.volume,
                    landmarks=processed.landmarks,
                )
            )
    return scans
