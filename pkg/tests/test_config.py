import pytest

from vacstar.config import ConfigError, load_config, parse_config, render_config
from vacstar.eos import Polytrope, WhiteDwarf

BASE = """\
[eos]
kind = polytrope
kappa = 1
gamma = 2

[equilibrium]
rho_c = 1
G = 2.5

[sim]
n_cells = 64
t_final = 1
"""


def test_parse_minimal():
    cfg = parse_config(BASE)
    assert cfg.eos == Polytrope(1.0, 2.0)
    assert cfg.equilibrium.G == 2.5
    assert cfg.sim.n_cells == 64 and cfg.sim.t_final == 1.0
    assert cfg.perturbation.kind == "velocity_bump"
    assert cfg.diagnostics.theta == 0.1


def test_render_roundtrip():
    cfg = parse_config(BASE)
    again = parse_config(render_config(cfg.echo))
    assert again.eos == cfg.eos and again.sim == cfg.sim and again.equilibrium == cfg.equilibrium


def test_white_dwarf_and_target_mass():
    cfg = parse_config("[eos]\nkind = white_dwarf\ngamma1 = 1\ngamma2 = 1\n"
                       "[equilibrium]\ntarget_mass = 3\n")
    assert cfg.eos == WhiteDwarf(1.0, 1.0)
    assert cfg.equilibrium.rho_c is None and cfg.equilibrium.target_mass == 3.0


@pytest.mark.parametrize("text, fragment", [
    (BASE + "[bogus]\nx = 1\n", "unknown section [bogus]"),
    (BASE.replace("n_cells = 64", "n_cells = many"), "n_cells"),
    (BASE.replace("n_cells = 64", "n_cells = 6.5"), "integer"),
    (BASE.replace("G = 2.5", "g = 2.5"), "unknown key 'g'"),
    (BASE + "[diagnostics]\ntheta = 0.5\n", "theta"),
    (BASE + "[diagnostics]\nfits = D1:fast\n", "unknown rate"),
    (BASE + "[diagnostics]\nfits = D1\n", "quantity:rate"),
    (BASE + "[diagnostics]\nfit_t_lo = 5\nfit_t_hi = 2\n", "fit window"),
    (BASE.replace("rho_c = 1", "rho_c = 1\ntarget_mass = 2"), "exactly one"),
    (BASE.replace("gamma = 2", ""), "missing parameter"),
    (BASE.replace("polytrope", "ideal"), "unknown eos kind"),
    (BASE + "[perturbation]\nkind = shake\n", "perturbation"),
    (BASE.replace("t_final = 1", "t_final = -1"), "t_final"),
    ("[sim]\nn_cells = 4\n", "missing [eos]"),
    (BASE + "[sweep]\naxis = colour\n", "sweep axis"),
    (BASE + "[diagnostics]\nfits = density_min:density_min\n", "density_min"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.ini")
    assert fragment in str(exc.value)


def test_error_names_line():
    text = BASE.replace("n_cells = 64", "n_cells = many")
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.ini")
    assert exc.value.line == 11
    assert str(exc.value).startswith("run.ini:11:")


def test_malformed_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[eos]\nkind = polytrope\nthis is not a pair\n", "bad.ini")
    assert "bad.ini:3:" in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_sweep_axis_copies():
    cfg = parse_config(BASE)
    assert cfg.with_value("nu1", 0.3).sim.nu1 == 0.3
    assert cfg.with_value("gamma", 1.8).eos == Polytrope(1.0, 1.8)
    assert cfg.with_value("theta", 0.2).diagnostics.theta == 0.2
    assert cfg.with_value("rho_c", 3.0).echo["equilibrium"]["rho_c"] == "3.0"
    wd = parse_config("[eos]\nkind = white_dwarf\ngamma1 = 1\ngamma2 = 1\n")
    with pytest.raises(ConfigError):
        wd.with_value("gamma", 1.8)
