"""Smoke test for the Python bindings.

Build the extension first, either with `maturin develop -m crates/python/Cargo.toml`
or with `cargo build -p blindcount-py`; in the latter case this script loads
the library straight from target/.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import blindcount

        return blindcount
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libblindcount_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp())
            target = tmp / "blindcount.so"
            shutil.copy(lib, target)
            spec = importlib.util.spec_from_file_location("blindcount", target)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("blindcount extension not found; build it first")


def main():
    bc = load_module()

    d = bc.pseudo_density([(10.5, 12.5), (30.0, 40.0)], 64, 64, 2.0)
    assert d.shape == (64, 64)
    assert abs(d.count - 2.0) < 1e-9
    assert abs(bc.normalized_cost(d, d)) < 1e-12

    pairs, total = bc.solve_lap([[4.0, 1.0], [2.0, 3.0], [0.5, 9.0]])
    _, brute = bc.brute_force_lap([[4.0, 1.0], [2.0, 3.0], [0.5, 9.0]])
    assert pairs == [(2, 0), (0, 1)] and total == brute == 1.5, (pairs, total)

    m = bc.compute_metrics([(4.0, 6.0)])
    assert (m["mae"], m["rmse"], m["nae"], m["sre"]) == (2.0, 2.0, 0.5, 1.0), m
    assert bc.baseline_predict([1.0, 2.0, 9.0], "median") == 2.0

    scenes = bc.generate_scenes("train", 6, seed=1, classes_max=3, instances_max=15)
    assert len(scenes) == 6
    for s in scenes:
        maps = s.density_maps(4.0)
        assert [round(x.count) for x in maps] == s.counts

    model = bc.Model(64, 64, m_hat=4, seed=0)
    raw = model.forward(scenes[0].image)
    assert len(raw) == 4 and all(x.count >= 0 for x in raw)
    losses = model.train(scenes, epochs=2, sigma=4.0, learning_rate=1e-3)
    assert len(losses) == 2 and all(math.isfinite(x) for x in losses)
    report = model.evaluate(scenes, sigma=4.0)
    assert report["pairs"] == sum(len(s.counts) for s in scenes)
    counts = model.count(scenes[0].image, zero_threshold=0.0)
    assert len(counts) <= 4
    assert [c for _, c in counts] == sorted((c for _, c in counts), reverse=True)

    with tempfile.TemporaryDirectory() as tmp:
        path = pathlib.Path(tmp) / "m.bckp"
        model.save(str(path))
        again = bc.Model.load(str(path))
        assert [x.to_list() for x in again.forward(scenes[1].image)] == [
            x.to_list() for x in model.forward(scenes[1].image)
        ]

    try:
        model.forward([[[0.0] * 8] * 8] * 3)
    except ValueError:
        pass
    else:
        raise AssertionError("wrong image size accepted")

    print("python smoke test passed:", model, raw[0], report)


if __name__ == "__main__":
    main()
