"""Named coefficient and height profiles used by configuration files.

Every profile is built from a dict of parameters.  ``build_field`` returns a
coefficient accepted by :class:`~sheethom.core.MaterialModel` and
``build_height`` returns a height function for a graph sheet.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Callable, Mapping

import numpy as np


class ProfileError(ValueError):
    """Invalid profile specification; ``path`` locates the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def parse_complex(value: Any, path: str) -> complex:
    """Accepts a number, a ``[re, im]`` pair or a string such as ``"2+0.1i"``."""
    if isinstance(value, bool):
        raise ProfileError(path, f"expected a complex number, got {value!r}")
    if isinstance(value, (int, float, complex)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        text = value.replace(" ", "").replace("i", "j")
        try:
            return complex(text)
        except ValueError:
            pass
    raise ProfileError(path, f"expected a complex number, got {value!r}")


def parse_real(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProfileError(path, f"expected a real number, got {value!r}")
    return float(value)


def parse_axis(value: Any, path: str) -> int:
    if isinstance(value, bool) or value not in (1, 2, 3):
        raise ProfileError(path, f"expected an axis 1, 2 or 3, got {value!r}")
    return int(value)


_REQUIRED = object()


@dataclasses.dataclass(frozen=True)
class _Param:
    kind: str  # complex | real | axis | list | profile
    default: Any = _REQUIRED


def _params(spec: Mapping, schema: Mapping[str, _Param], path: str) -> dict:
    unknown = set(spec) - set(schema) - {"profile"}
    if unknown:
        raise ProfileError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    out = {}
    for name, param in schema.items():
        where = f"{path}.{name}"
        if name not in spec:
            if param.default is _REQUIRED:
                raise ProfileError(where, "missing required field")
            out[name] = param.default
            continue
        value = spec[name]
        if param.kind == "complex":
            out[name] = parse_complex(value, where)
        elif param.kind == "real":
            out[name] = parse_real(value, where)
        elif param.kind == "axis":
            out[name] = parse_axis(value, where)
        elif param.kind == "list":
            if not isinstance(value, (list, tuple)) or not value:
                raise ProfileError(where, "expected a nonempty list")
            out[name] = np.array([parse_complex(v, f"{where}[{i}]") for i, v in enumerate(value)])
        elif param.kind == "profile":
            out[name] = build_scalar(value, where)
    return out


def _scalar_profiles() -> dict[str, tuple[dict, Callable]]:
    def constant(p):
        value = p["value"]
        return lambda y: np.full(y.shape[:-1], value, dtype=complex)

    def two_phase(p):
        a, b, frac, axis = p["eps1"], p["eps2"], p["fraction"], p["axis"]
        if not 0 < frac < 1:
            raise ValueError("fraction must lie in (0, 1)")
        return lambda y: np.where(np.mod(y[..., axis - 1], 1.0) < frac, a, b).astype(complex)

    def sine(p):
        mean, amp, axis, phase = p["mean"], p["amplitude"], p["axis"], p["phase"]
        return lambda y: mean + amp * np.sin(2 * np.pi * y[..., axis - 1] + phase)

    def tabulated(p):
        values, axis = p["values"], p["axis"]
        n = values.size
        return lambda y: values[np.minimum((np.mod(y[..., axis - 1], 1.0) * n).astype(int), n - 1)]

    return {
        "constant": ({"value": _Param("complex")}, constant),
        "two_phase": (
            {
                "eps1": _Param("complex"),
                "eps2": _Param("complex"),
                "fraction": _Param("real", 0.5),
                "axis": _Param("axis", 3),
            },
            two_phase,
        ),
        "sine": (
            {
                "mean": _Param("complex"),
                "amplitude": _Param("complex"),
                "axis": _Param("axis", 3),
                "phase": _Param("real", 0.0),
            },
            sine,
        ),
        "tabulated": ({"values": _Param("list"), "axis": _Param("axis", 3)}, tabulated),
    }


SCALAR_PROFILES = _scalar_profiles()


def build_scalar(spec: Any, path: str) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar function of the cell point ``y`` from a constant or a profile dict."""
    if not isinstance(spec, Mapping):
        value = parse_complex(spec, path)
        return lambda y: np.full(y.shape[:-1], value, dtype=complex)
    name = spec.get("profile")
    if name not in SCALAR_PROFILES:
        raise ProfileError(f"{path}.profile", f"unknown profile {name!r}; known: {sorted(SCALAR_PROFILES)}")
    schema, builder = SCALAR_PROFILES[name]
    params = _params(spec, schema, path)
    try:
        return builder(params)
    except ValueError as exc:
        raise ProfileError(path, str(exc)) from None


def _diagonal_layered(spec: Mapping, path: str):
    schema = {
        "eps_normal": _Param("complex"),
        "eps_tangential": _Param("complex"),
        "f": _Param("profile"),
        "axis": _Param("axis", 1),
    }
    p = _params(spec, schema, path)
    axis, f = p["axis"] - 1, p["f"]

    def field(x, y):
        fy = f(y)
        out = np.zeros(fy.shape + (3, 3), dtype=complex)
        for a in range(3):
            out[..., a, a] = p["eps_normal"] if a == axis else p["eps_tangential"] * fy
        return out

    return field


def build_field(spec: Any, path: str):
    """Coefficient ``f(x, y)`` (or a constant) from a configuration entry.

    Besides the scalar profiles, ``diagonal_layered`` builds
    ``diag(eps_normal, eps_tangential f(y_a), eps_tangential f(y_a))`` with the
    constant entry on ``axis`` ``a``.
    """
    if not isinstance(spec, Mapping):
        return parse_complex(spec, path)
    if spec.get("profile") == "diagonal_layered":
        return _diagonal_layered(spec, path)
    scalar = build_scalar(spec, path)
    return lambda x, y: scalar(y)


def _height_profiles():
    def constant(p):
        value = p["value"]
        return (lambda a, b: np.full(np.shape(a), value)), (lambda a, b: np.zeros(np.shape(a) + (2,)))

    def sine(p):
        amp, k1, k2 = p["amplitude"], p["k1"], p["k2"]

        def h(a, b):
            return amp * np.sin(2 * np.pi * (k1 * a + k2 * b))

        def grad(a, b):
            c = 2 * np.pi * amp * np.cos(2 * np.pi * (k1 * a + k2 * b))
            return np.stack([k1 * c, k2 * c], axis=-1)

        return h, grad

    return {
        "constant": ({"value": _Param("real")}, constant),
        "sine": ({"amplitude": _Param("real"), "k1": _Param("real", 1.0), "k2": _Param("real", 0.0)}, sine),
    }


HEIGHT_PROFILES = _height_profiles()


def build_height(spec: Any, path: str):
    """``(h, grad_h)`` for a graph sheet from a constant or a profile dict."""
    if not isinstance(spec, Mapping):
        spec = {"profile": "constant", "value": spec}
    name = spec.get("profile")
    if name not in HEIGHT_PROFILES:
        raise ProfileError(f"{path}.profile", f"unknown height profile {name!r}; known: {sorted(HEIGHT_PROFILES)}")
    schema, builder = HEIGHT_PROFILES[name]
    params = _params(spec, schema, path)
    for key in ("k1", "k2"):
        if key in params and float(params[key]) != int(params[key]):
            raise ProfileError(f"{path}.{key}", "wavenumbers must be integers for a periodic height")
    return builder(params)
