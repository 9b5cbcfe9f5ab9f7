import os
import subprocess
import sys
import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SINGLE_THREAD_ENV = {
    "NUMBA_NUM_THREADS": "1",
    "OMP_NUM_THREADS": "1",
    "OPENBLAS_NUM_THREADS": "1",
    "MKL_NUM_THREADS": "1",
}
MULTI_THREAD_ENV = {
    "NUMBA_NUM_THREADS": "4",
    "OMP_NUM_THREADS": "4",
    "OPENBLAS_NUM_THREADS": "4",
    "MKL_NUM_THREADS": "4",
}


def run_cli(args, env_extra=None, check=True):
    """Run ``python -m tsnerisk`` in a fresh process; returns the CompletedProcess."""
    env = dict(os.environ)
    env.update(env_extra or {})
    proc = subprocess.run([sys.executable, "-m", "tsnerisk", *map(str, args)],
                          capture_output=True, text=True, env=env)
    if check and proc.returncode != 0:
        raise AssertionError(f"tsnerisk {' '.join(map(str, args))} exited {proc.returncode}:\n"
                             f"{proc.stderr}")
    return proc


def make_blobs(n_per_cluster, dim=14, seed=0, separation=6.0):
    """Three well separated isotropic Gaussian clusters."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((3, dim)) * separation
    labels = np.repeat(np.arange(3), n_per_cluster)
    x = centers[labels] + rng.standard_normal((labels.size, dim))
    return x, labels


def knn_purity(points, labels, k=5, ref_points=None, ref_labels=None):
    """Mean share of the k nearest reference neighbours carrying the point's label."""
    points = np.asarray(points, dtype=float)
    same_set = ref_points is None
    ref_points = points if same_set else np.asarray(ref_points, dtype=float)
    ref_labels = labels if same_set else ref_labels
    d = ((points[:, None, :] - ref_points[None, :, :]) ** 2).sum(-1)
    if same_set:
        np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    return float((ref_labels[nn] == labels[:, None]).mean())


@pytest.fixture(scope="session")
def e2e_run(tmp_path_factory):
    """Synthetic 9000-contract portfolio trained and evaluated through the CLI.

    Shared by the end-to-end acceptance criteria; the run is single-threaded
    so that the determinism criterion can compare it with a multi-threaded one.
    """
    root = tmp_path_factory.mktemp("e2e")
    run_cli(["synth", "--n", 9000, "--seed", 0, "--out", root / "data"])
    t0 = time.perf_counter()
    run_cli(["train", root / "data" / "portfolio.csv", "--seed", 0, "--out", root / "run1"],
            SINGLE_THREAD_ENV)
    run_cli(["evaluate", root / "run1" / "artifact.json", root / "run1" / "test.csv",
             "--insurer", "--out", root / "run1" / "eval"], SINGLE_THREAD_ENV)
    seconds = time.perf_counter() - t0
    return {"root": root, "data": root / "data" / "portfolio.csv", "run": root / "run1",
            "seconds": seconds}
