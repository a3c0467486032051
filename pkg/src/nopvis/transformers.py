"""Transformer-style wrappers so injections compose like estimators.

Each transformer maps a list of parsed apps to their injected versions;
the manifests produced along the way are kept on ``manifests_`` after
``transform``, and methods that had to be skipped land on ``skips_``.
"""

from __future__ import annotations

from .inject import (
    AttackKind,
    AttackVariant,
    InjectionPlan,
    MethodSelector,
    apply_attack,
)
from .smali import SmaliApp
from .visibility import InjectionManifest


class _BaseInjector:
    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def fit(self, X=None, y=None):
        return self

    def _plan(self) -> InjectionPlan:
        raise NotImplementedError

    def transform(self, apps: list[SmaliApp]) -> list[SmaliApp]:
        out = []
        self.manifests_: list[InjectionManifest] = []
        self.skips_: list[dict] = []
        plan = self._plan()
        for app in apps:
            modified, manifest = apply_attack(app, plan, skip_log=self.skips_)
            out.append(modified)
            self.manifests_.append(manifest)
        return out

    def fit_transform(self, apps: list[SmaliApp], y=None) -> list[SmaliApp]:
        return self.fit(apps, y).transform(apps)


class SimpleNopInjector(_BaseInjector):
    """Insert literal nop lines into every method with a body."""

    _param_names = ("count", "horizon")

    def __init__(self, count: int = 3, horizon: int = 8192):
        self.count = count
        self.horizon = horizon

    def _plan(self) -> InjectionPlan:
        return InjectionPlan(
            variant=AttackVariant(kind=AttackKind.SIMPLE_NOP, nop_count=self.count),
            selector=MethodSelector(horizon=self.horizon),
        )


class SioInjector(_BaseInjector):
    """const, const, x1, x2 straight-line block at every method entry."""

    _param_names = ("x1", "x2", "horizon")

    def __init__(self, x1: str = "sub-int", x2: str = "xor-int", horizon: int = 8192):
        self.x1 = x1
        self.x2 = x2
        self.horizon = horizon

    def _plan(self) -> InjectionPlan:
        return InjectionPlan(
            variant=AttackVariant(kind=AttackKind.SIO, payload_opcodes=(self.x1, self.x2)),
            selector=MethodSelector(horizon=self.horizon),
        )


class ImiInjector(_BaseInjector):
    """const 1, if-eqz guarded dead block at every method entry."""

    _param_names = ("x1", "x2", "horizon")

    def __init__(self, x1: str = "sub-int", x2: str = "xor-int", horizon: int = 8192):
        self.x1 = x1
        self.x2 = x2
        self.horizon = horizon

    def _plan(self) -> InjectionPlan:
        return InjectionPlan(
            variant=AttackVariant(kind=AttackKind.IMI, payload_opcodes=(self.x1, self.x2)),
            selector=MethodSelector(horizon=self.horizon),
        )
