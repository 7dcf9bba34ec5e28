"""Smoke test for the `gfa` Python extension.

Build the extension first (`cargo build -p gfa-python`), then run
`python3 python/smoke_test.py`. The script loads the shared library straight
from the cargo target directory, so no install step is needed.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_extension():
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    names = ["libgfa.so", "libgfa.dylib", "gfa.dll"]
    candidates = [target / profile / n for profile in ("release", "debug") for n in names]
    found = [p for p in candidates if p.exists()]
    if not found:
        sys.exit("extension not built; run `cargo build -p gfa-python` first")
    path = max(found, key=lambda p: p.stat().st_mtime)
    loader = importlib.machinery.ExtensionFileLoader("gfa", str(path))
    spec = importlib.util.spec_from_file_location("gfa", path, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    gfa = load_extension()
    print("gfa", gfa.__version__, "presets:", ", ".join(gfa.presets()))

    # Two-state chain: closed-form occupation probability.
    two = gfa.Ctmc.from_rates(2, [(0, 1, 2.0), (1, 0, 1.0)])
    ident = gfa.Embedding.custom([[1.0, 0.0], [0.0, 1.0]])
    times = gfa.uniform_grid(3.0, 7)
    pm = gfa.projected_mean(two, 0, ident, times)
    for t, (p0, _) in zip(pm.times, pm.points()):
        exact = 1 / 3 + 2 / 3 * math.exp(-3 * t)
        assert abs(p0 - exact) < 1e-12, (t, p0, exact)

    # Full geometric-fluid chain on a small birth-death model.
    bd = gfa.Ctmc.birth_death(10)
    emb = gfa.Embedding.diffusion_map(bd, 2)
    field = gfa.DriftField.fit(bd, emb)
    s0 = bd.index_of([5, 5])
    grid = gfa.uniform_grid(10.0, 51)
    traj = gfa.integrate(field, emb.point(s0), grid)
    exact = gfa.projected_mean(bd, s0, emb, grid)
    err = max(math.dist(a, b) for a, b in zip(traj.points(), exact.points()))
    print(f"birth-death N=10: {bd.n_states} states, max fluid error {err:.3e} "
          f"(bbox {emb.bbox_diagonal():.3e})")
    assert err < 0.1 * emb.bbox_diagonal()

    mean, std = gfa.ssa_summary(bd, s0, emb, grid, 200, 1)
    assert len(mean) == len(grid) and len(std[0]) == 2

    # First passage on SIRS: fluid step against the SSA distribution.
    chain = gfa.Ctmc.sirs(10)
    emb = gfa.Embedding.diffusion_map(chain, 3)
    field = gfa.DriftField.fit(chain, emb)
    s0 = chain.index_of([9, 1, 0])
    grid = gfa.uniform_grid(50.0, 51)
    traj = gfa.integrate(field, emb.point(s0), grid)
    target = "R >= 2"
    step = gfa.fluid_fpt(traj, emb, chain, target)
    cdf = gfa.ssa_fpt(chain, s0, target, 50.0, 500, 2)
    print(f"fpt: fluid crossing {step.crossing_time:.3f}, "
          f"SSA median {cdf.median():.3f}, CDF at crossing {cdf(step.crossing_time):.3f}")
    assert 0.0 < cdf(step.crossing_time) < 1.0

    try:
        gfa.Embedding.diffusion_map(chain, chain.n_states)
    except ValueError as e:
        print("validation error surfaces as ValueError:", str(e)[:60])
    else:
        raise AssertionError("expected ValueError")

    with tempfile.TemporaryDirectory() as out:
        manifest = json.loads(gfa.run_experiment("birth_death", out, stage="gfa", fast=True))
        assert set(manifest["stages"]) == {"build", "embed", "drift", "gfa"}
        print("pipeline stages:", ", ".join(manifest["stages"]))

    print("smoke test passed")


if __name__ == "__main__":
    main()
