import numpy as np
import pytest
import yaml

from sheethom.config import ConfigError, load_config, parse_config
from sheethom.core import GraphSheet
from sheethom.profiles import ProfileError, build_field, build_height, build_scalar, parse_complex

BASE = {"omega": 1.0, "material": {"epsilon": "2+0.1i", "sigma": 0.0}, "geometry": {"resolution": 8}}


def with_changes(**changes):
    tree = {k: (dict(v) if isinstance(v, dict) else v) for k, v in BASE.items()}
    tree.update(changes)
    return tree


@pytest.mark.parametrize(
    "text, value",
    [(2, 2), (1.5, 1.5), ([2, 0.1], 2 + 0.1j), ("2+0.1i", 2 + 0.1j), ("0.3i", 0.3j), ("-1e-3j", -1e-3j)],
)
def test_complex_literals(text, value):
    assert parse_complex(text, "x") == value


@pytest.mark.parametrize("text", ["two", True, [1, 2, 3], None])
def test_bad_complex_literals(text):
    with pytest.raises(ProfileError, match="^x:"):
        parse_complex(text, "x")


def test_two_phase_profile():
    f = build_scalar({"profile": "two_phase", "eps1": 1, "eps2": 3, "fraction": 0.25, "axis": 2}, "p")
    y = np.array([[0, 0.1, 0], [0, 0.3, 0], [0, 1.1, 0.9]])
    np.testing.assert_array_equal(f(y), [1, 3, 1])


def test_sine_profile():
    f = build_scalar({"profile": "sine", "mean": 2, "amplitude": 0.5}, "p")
    assert f(np.array([0, 0, 0.25])) == pytest.approx(2.5)


def test_tabulated_profile():
    f = build_scalar({"profile": "tabulated", "values": [1, "2+1i", 3], "axis": 1}, "p")
    np.testing.assert_array_equal(f(np.array([[0.1, 0, 0], [0.5, 0, 0], [0.9, 0, 0]])), [1, 2 + 1j, 3])


def test_diagonal_layered_field():
    field = build_field(
        {"profile": "diagonal_layered", "eps_normal": 3, "eps_tangential": 2,
         "f": {"profile": "two_phase", "eps1": 1.5, "eps2": 0.5, "axis": 1}}, "p")
    value = field(np.zeros(3), np.array([0.75, 0, 0]))
    np.testing.assert_array_equal(value, np.diag([3, 1, 1]))


def test_sine_height_gradient():
    h, grad = build_height({"profile": "sine", "amplitude": 0.1, "k1": 2}, "h")
    assert grad(0.0, 0.0)[0] == pytest.approx(0.4 * np.pi)


@pytest.mark.parametrize(
    "spec, path",
    [
        ({"profile": "nope"}, "p.profile"),
        ({"profile": "sine", "mean": 1}, "p.amplitude"),
        ({"profile": "sine", "mean": 1, "amplitude": 1, "phse": 0}, "p.phse"),
        ({"profile": "two_phase", "eps1": 1, "eps2": 2, "axis": 4}, "p.axis"),
    ],
)
def test_profile_errors_carry_paths(spec, path):
    with pytest.raises(ProfileError) as info:
        build_scalar(spec, "p")
    assert info.value.path == path


def test_noninteger_height_wavenumber():
    with pytest.raises(ProfileError, match="k1"):
        build_height({"profile": "sine", "amplitude": 0.1, "k1": 1.5}, "h")


class TestRunConfig:
    def test_minimal(self):
        cfg = parse_config(BASE)
        assert cfg.omegas == (1.0,)
        assert cfg.geometry.resolution == 8
        assert cfg.solver.tol == 1e-10
        assert cfg.materials(1.0).epsilon == 2 + 0.1j

    def test_frequency_list(self):
        assert parse_config(with_changes(omega=[0.5, 1, 2])).omegas == (0.5, 1.0, 2.0)

    def test_graph_sheet(self):
        cfg = parse_config(with_changes(geometry={"resolution": 8, "sheet": {"type": "graph", "h": 0.25}}))
        assert isinstance(cfg.geometry.sheet, GraphSheet)

    @pytest.mark.parametrize(
        "tree, where",
        [
            ({"material": {"epsilon": 2}}, "omega"),
            (with_changes(omega=-1), "omega"),
            (with_changes(omega=[]), "omega"),
            (with_changes(colour="red"), "colour"),
            (with_changes(material={"epsilon": 2, "sigmaa": 0}), "material.sigmaa"),
            (with_changes(material={"sigma": 0}), "material.epsilon"),
            (with_changes(geometry={"resolution": "8"}), "geometry.resolution"),
            (with_changes(geometry={"resolution": 8, "sheet": {"type": "curved"}}), "geometry.sheet.type"),
            (with_changes(geometry={"resolution": 8, "sheet": {"offset": 0.3}}), "geometry"),
            (with_changes(solver={"method": "lu"}), "solver.method"),
            (with_changes(finescale={"L": 1}), "finescale.d"),
            (with_changes(finescale={"d": [0.1], "polarization": 3}), "finescale.polarization"),
            (with_changes(enz={"eps_host": 2}), "enz.sigma_sheet"),
            (with_changes(x_macro=[0, 0]), "x_macro"),
            (with_changes(material={"epsilon": {"profile": "sine", "mean": 2, "amplitud": 1}}), "material.epsilon.amplitud"),
        ],
    )
    def test_errors_name_the_field(self, tree, where):
        with pytest.raises(ConfigError) as info:
            parse_config(tree)
        assert str(info.value).startswith(where)

    def test_sections_required_on_demand(self):
        cfg = parse_config({"omega": 1.0})
        with pytest.raises(ConfigError, match="^geometry"):
            cfg.require_geometry()
        with pytest.raises(ConfigError, match="^material"):
            cfg.materials(1.0)

    def test_load_hashes_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(BASE))
        a = load_config(path)
        path.write_text(yaml.safe_dump(BASE) + "# comment\n")
        b = load_config(path)
        assert len(a.digest) == 64 and a.digest != b.digest

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("omega: [1,\n")
        with pytest.raises(ConfigError, match="YAML"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")
