"""Service handlers: how invocation terms obtain their values.

Four kinds of handler:

  BuiltinGenpk  - the genpk() built-in; yields an integer fresh w.r.t. all
                  integers in key positions of the current snapshot and all
                  results it produced before (the caller owns that memory).
  TableHandler  - a fixed argument-tuple -> value mapping.
  Interactive   - the value must be supplied from outside (two-phase HTTP
                  apply, or a script's WITH clause).
  MockHandler   - finite representative results for state-space building,
                  either enumerated verbatim or derived from the active
                  domain of the return type plus one fresh value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from . import model
from .errors import (
    AwaitingInteractiveResult,
    MissingInvocationResult,
    MockConfigError,
    TypeMismatch,
    UnconfiguredService,
    UnregisteredService,
)

GENPK = "genpk"

FRESH_STRING_PREFIX = "ν"  # ν0, ν1, ... never collide with active values


@dataclass(frozen=True)
class BuiltinGenpk:
    pass


@dataclass(frozen=True)
class TableHandler:
    mapping: tuple  # of (args, value); tuple-of-pairs keeps it hashable

    def lookup(self, args: tuple):
        for a, v in self.mapping:
            if a == args:
                return v
        raise MissingInvocationResult(f"no table entry for {args!r}")


@dataclass(frozen=True)
class InteractiveHandler:
    pass


@dataclass(frozen=True)
class MockHandler:
    mode: str  # "enumerated" | "abstract"
    values: tuple = ()
    seed: int = 0


class GenpkCounter:
    """Freshness memory for genpk: remembers every value it handed out."""

    def __init__(self, prior=()):
        self.prior = set(prior)

    def fresh(self, spec: model.Spec, snapshot: Mapping) -> int:
        used = set(self.prior)
        for rel in spec.relations:
            names = rel.attr_names
            key_idx = [names.index(a) for a in rel.key]
            for row in snapshot.get(rel.name, ()):
                for i in key_idx:
                    if isinstance(row[i], int) and not isinstance(row[i], bool):
                        used.add(row[i])
        value = max(used, default=0) + 1
        self.prior.add(value)
        return value


def active_domain(spec: model.Spec, snapshot: Mapping, atype: model.AttrType):
    """Values of one type present in the snapshot or written in the spec."""
    values = set()
    for rows in snapshot.values():
        for row in rows:
            for v in row:
                if atype.check(v):
                    values.add(v)
    for v in model.spec_constants(spec):
        if atype.check(v):
            values.add(v)
    return values


def fresh_value(atype: model.AttrType, taken, seed: int = 0):
    """Smallest representative of `atype` outside `taken`, offset by seed."""
    if atype is model.AttrType.INT:
        v = seed
        while v in taken:
            v += 1
        return v
    i = seed
    while f"{FRESH_STRING_PREFIX}{i}" in taken:
        i += 1
    return f"{FRESH_STRING_PREFIX}{i}"


def load_mock_config(source) -> dict:
    """Mock handlers from a JSON file/dict: {"services": {name: {...}}}."""
    if isinstance(source, (str, Path)):
        try:
            data = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise MockConfigError(f"cannot read mock config: {e}") from None
    else:
        data = source
    if not isinstance(data, dict) or not isinstance(data.get("services"), dict):
        raise MockConfigError('mock config needs a "services" object')
    handlers = {}
    for name, entry in data["services"].items():
        if not isinstance(entry, dict):
            raise MockConfigError(f"service {name}: entry must be an object")
        mode = entry.get("mode")
        if mode == "enumerated":
            values = entry.get("values")
            if not isinstance(values, list) or not values:
                raise MockConfigError(f"service {name}: enumerated mode needs values")
            for v in values:
                if isinstance(v, bool) or not isinstance(v, (int, str)):
                    raise MockConfigError(f"service {name}: bad value {v!r}")
            handlers[name] = MockHandler("enumerated", tuple(values))
        elif mode == "abstract":
            seed = entry.get("seed", 0)
            if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
                raise MockConfigError(f"service {name}: seed must be a non-negative int")
            handlers[name] = MockHandler("abstract", seed=seed)
        else:
            raise MockConfigError(f"service {name}: mode must be enumerated or abstract")
    return handlers


@dataclass(frozen=True)
class ServiceRegistry:
    """Binds every declared service to a handler; genpk is always built in."""

    spec: model.Spec
    handlers: Mapping = field(default_factory=dict)

    @classmethod
    def interactive(cls, spec: model.Spec) -> "ServiceRegistry":
        return cls(spec, {
            s.name: BuiltinGenpk() if s.name == GENPK else InteractiveHandler()
            for s in spec.services
        })

    @classmethod
    def mocked(cls, spec: model.Spec, config: Mapping) -> "ServiceRegistry":
        """Mock registry; enumerated values are type-checked eagerly."""
        handlers = {}
        for s in spec.services:
            if s.name == GENPK:
                handlers[s.name] = BuiltinGenpk()
                continue
            handler = config.get(s.name)
            if handler is None:
                handlers[s.name] = None  # reported at first use
                continue
            if handler.mode == "enumerated":
                for v in handler.values:
                    if not s.return_type.check(v):
                        raise MockConfigError(
                            f"service {s.name}: value {v!r} is not {s.return_type.value}"
                        )
            handlers[s.name] = handler
        for name in config:
            if name not in handlers:
                raise MockConfigError(f"mock config names unknown service '{name}'")
        return cls(spec, handlers)

    def with_table(self, name: str, mapping: Mapping) -> "ServiceRegistry":
        handlers = dict(self.handlers)
        handlers[name] = TableHandler(tuple(sorted(mapping.items())))
        return ServiceRegistry(self.spec, handlers)

    def handler_for(self, name: str):
        if name not in self.handlers:
            raise UnregisteredService(name)
        handler = self.handlers[name]
        if handler is None:
            raise UnconfiguredService(f"service '{name}' is not in the mock config")
        return handler

    def is_interactive(self, name: str) -> bool:
        return isinstance(self.handler_for(name), InteractiveHandler)

    def invoke(self, pending, snapshot: Mapping, *, supplied=None,
               genpk: Optional[GenpkCounter] = None):
        """Resolve one invocation to a value; type-checks the result.

        `supplied` short-circuits any non-builtin handler (script WITH
        clauses, ticket results). Interactive handlers without a supplied
        value raise AwaitingInteractiveResult.
        """
        if pending.service not in self.spec._services:
            raise UnregisteredService(pending.service)
        sig = self.spec.service(pending.service)
        if len(pending.args) != len(sig.param_types):
            raise TypeMismatch(f"{pending.signature}: expected {len(sig.param_types)} arguments")
        for v, t in zip(pending.args, sig.param_types):
            if not t.check(v):
                raise TypeMismatch(f"{pending.signature}: argument {v!r} is not {t.value}")
        handler = self.handler_for(pending.service)
        if isinstance(handler, BuiltinGenpk):
            result = (genpk or GenpkCounter()).fresh(self.spec, snapshot)
        elif supplied is not None:
            result = supplied
        elif isinstance(handler, TableHandler):
            result = handler.lookup(pending.args)
        elif isinstance(handler, MockHandler):
            result = self.representative_results(pending, snapshot)[0]
        else:
            raise AwaitingInteractiveResult(pending)
        if not sig.return_type.check(result):
            raise TypeMismatch(f"{pending.signature}: result {result!r} is not {sig.return_type.value}")
        return result

    def representative_results(self, pending, snapshot: Mapping) -> list:
        """Finitely many results standing in for all possible ones.

        Enumerated mocks: the configured values, verbatim. Abstract mocks:
        the active-domain values of the return type in sorted order, then
        exactly one fresh representative. genpk: the one fresh key.
        """
        sig = self.spec.service(pending.service)
        handler = self.handler_for(pending.service)
        if isinstance(handler, BuiltinGenpk):
            return [GenpkCounter().fresh(self.spec, snapshot)]
        if isinstance(handler, TableHandler):
            return [handler.lookup(pending.args)]
        if isinstance(handler, MockHandler):
            if handler.mode == "enumerated":
                return list(handler.values)
            domain = active_domain(self.spec, snapshot, sig.return_type)
            return sorted(domain) + [fresh_value(sig.return_type, domain, handler.seed)]
        raise UnconfiguredService(
            f"service '{pending.service}' is interactive; state-space building needs a mock"
        )
