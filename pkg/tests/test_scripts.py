import importlib.util
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def _load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_inverse_gamma_script_reproduces_closed_form(capsys):
    mod = _load("inverse_gamma_prior")
    worst = mod.run(mod.Config(alpha=3.5, beta=0.7, points=5))
    assert worst <= 1e-10
    assert "laws: -log(theta), -1/theta" in capsys.readouterr().out
