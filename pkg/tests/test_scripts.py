import importlib.util
import sys
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def _load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    sys.modules[name] = mod
    spec.loader.exec_module(mod)
    return mod


def test_hilbert_oracle_script():
    mod = _load("hilbert_oracle")
    rows = mod.run(mod.Config(max_n=2, grid=128))
    assert [(n, depth) for n, _, depth, _ in rows] == [(1, 1), (2, 2)]


def test_eta_sweep_script():
    mod = _load("eta_sweep")
    rows = mod.run(mod.Config(stages=2, etas=["1/2"]))
    assert rows[0]["eta"] == "1/2" and len(rows[0]["log2_margins"]) == 2
