"""Problem documents, built-in right-hand sides and the fixture registry."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .domain_grid import ConvexDomain, GridFunction, ProblemGrid, build_grid, from_csv
from .tensor_algebra import QuadraticForm, SHDecomposition, sh_from_json, tensor_from_json
from .viscosity_solver import EpsilonSchedule

FIXTURE_NAMES = ("lap", "ex1", "ex2", "sh2", "rot2")


def _bump(x):
    s = np.sum(np.asarray(x) ** 2, axis=1) / 0.25
    out = np.zeros(len(s))
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


BUILTIN_RHS: dict[str, Callable] = {
    "const1": lambda x: np.ones(len(x)),
    "zero": lambda x: np.zeros(len(x)),
    "sin_x1": lambda x: np.sin(x[:, 0]),
    "ramp_x1": lambda x: np.maximum(x[:, 0], 0.0),
    "bump": _bump,
}


def rhs_callable(rhs: dict, N: int) -> Optional[Callable]:
    """Vector-valued ``f(x) -> (N, M)`` for a built-in right-hand side, else ``None``."""
    if rhs.get("kind", "builtin") != "builtin":
        return None
    name = rhs.get("name", "const1")
    if name not in BUILTIN_RHS:
        raise ValueError(f"unknown built-in right-hand side {name!r}; choose from {sorted(BUILTIN_RHS)}")
    profile = BUILTIN_RHS[name]
    comps = np.asarray(rhs.get("components", [1.0] * N), dtype=float)
    if comps.shape != (N,):
        raise ValueError(f"rhs components must have length N={N}")
    return lambda x: comps[:, None] * profile(np.atleast_2d(x))[None, :]


@dataclass
class Problem:
    doc: dict
    tensor: QuadraticForm
    domain: ConvexDomain
    h: float
    schedule: EpsilonSchedule
    sh: Optional[SHDecomposition] = None
    base_dir: Optional[Path] = None

    @property
    def name(self) -> str:
        return self.doc.get("name", "problem")

    @property
    def rhs(self) -> dict:
        return self.doc.get("rhs", {"kind": "builtin", "name": "const1"})

    def grid(self) -> ProblemGrid:
        return build_grid(self.domain, self.h)

    def rhs_function(self) -> Optional[Callable]:
        return rhs_callable(self.rhs, self.tensor.N)

    def rhs_on(self, grid: ProblemGrid) -> GridFunction:
        func = self.rhs_function()
        if func is not None:
            return GridFunction(func(grid.points), grid)
        path = Path(self.rhs["path"])
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        f = from_csv(path.read_text(), grid)
        if f.N != self.tensor.N:
            raise ValueError(f"rhs CSV has {f.N} components, tensor has N={self.tensor.N}")
        return f

    def config_hash(self, **extra) -> str:
        payload = json.dumps({"problem": self.doc, **extra}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def problem_from_json(doc: dict, base_dir=None, h: Optional[float] = None,
                      schedule_overrides: Optional[dict] = None) -> Problem:
    """Build a :class:`Problem`; a bare tensor document is accepted too."""
    doc = copy.deepcopy(doc)
    if "tensor" not in doc:
        doc = {"tensor": doc}
    if h is not None:
        doc["h"] = float(h)
    if schedule_overrides:
        doc.setdefault("schedule", {}).update({k: v for k, v in schedule_overrides.items() if v is not None})
    tensor = tensor_from_json(doc["tensor"])
    domain = ConvexDomain.from_json(doc.get("domain", {"kind": "disc"}))
    sh = sh_from_json(doc["sh"]) if "sh" in doc else None
    return Problem(doc, tensor, domain, float(doc.get("h", 1 / 64)),
                   EpsilonSchedule.from_json(doc.get("schedule")), sh,
                   Path(base_dir) if base_dir else None)


def fixture_document(name: str) -> dict:
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURE_NAMES)}")
    text = resources.files("degensolve").joinpath("fixtures", f"{name}.json").read_text()
    return json.loads(text)


def load_fixture(name: str, **kwargs) -> Problem:
    return problem_from_json(fixture_document(name), **kwargs)


def read_problem_document(source: str):
    """Resolve ``source`` as a path or a fixture name; returns ``(doc, base_dir)``.

    Raises :class:`json.JSONDecodeError` for malformed files.
    """
    path = Path(source)
    if path.exists():
        return json.loads(path.read_text()), path.parent
    name = path.stem if path.suffix == ".json" else source
    return fixture_document(name), None
