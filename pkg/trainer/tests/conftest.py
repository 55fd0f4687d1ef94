"""Fixtures; dataset generation leans on the solver package as the oracle."""

import pytest

from gpearcg import generate_batch, sample_params_custom, write_dataset

MILD = dict(kappa=(50.0, 200.0), omega=(0.3, 0.6), v1=(1.0, 2.0))


@pytest.fixture(scope="session")
def tiny_gpds(tmp_path_factory):
    """Two mild n=32 runs, 40 samples; fast unit-test fuel."""
    samples, manifest = generate_batch(
        lambda rng: sample_params_custom(rng, n=32, **MILD),
        runs=2, seed=7, n=32,
    )
    assert manifest["kept_runs"] == 2, manifest
    path = tmp_path_factory.mktemp("data") / "tiny.gpds"
    write_dataset(samples, path)
    return path


@pytest.fixture(scope="session")
def mild_gpds_n64(tmp_path_factory):
    """30 mild-regime n=64 runs; the desk-scale training corpus."""
    samples, manifest = generate_batch(
        lambda rng: sample_params_custom(rng, n=64, **MILD),
        runs=30, seed=20250810, n=64,
    )
    assert manifest["kept_runs"] >= 25, manifest
    path = tmp_path_factory.mktemp("data") / "mild64.gpds"
    write_dataset(samples, path)
    return path
