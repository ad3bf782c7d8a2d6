"""HTTP facade for one running enactment.

Reads expose the spec, states, bindings and history; writes go through a
two-phase apply: if the chosen binding needs interactive service results,
the server answers 202 with a ticket listing the open invocations, and the
commit happens when the results are posted. One ticket may be open at a
time; tickets expire after TICKET_TTL seconds. A voided, rejected or
expired ticket leaves the store untouched.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse

from . import model, parser, services, statespace
from .engine import Engine, GroundAction
from .errors import (
    ConstraintViolation,
    DaprocError,
    MissingInvocationResult,
    MockConfigError,
    TypeMismatch,
)

TICKET_TTL = 600.0  # seconds
DEFAULT_ADDR = "127.0.0.1:8765"


@dataclass
class Ticket:
    ticket_id: str
    state: int
    action: str
    values: tuple
    pending: list  # interactive PendingInvocations
    expires_at: float


@dataclass
class _Api:
    engine: Engine
    clock: object = time.monotonic
    ttl: float = TICKET_TTL
    lock: threading.Lock = field(default_factory=threading.Lock)
    ticket: Ticket = None
    ticket_seq: int = 0
    space: statespace.TransitionSystem = None

    def open_ticket(self):
        if self.ticket is not None and self.clock() >= self.ticket.expires_at:
            self.ticket = None  # expired: the slot frees up, nothing committed
        return self.ticket


def _err(status: int, message: str, **extra):
    return JSONResponse({"error": message, **extra}, status_code=status)


def _invocation_domains(spec: model.Spec, action_name: str) -> dict:
    """Domain value list per invocation id, for invocations that directly
    feed a domain-constrained column. Ids count textual invocation terms
    the same way effect grounding does."""
    out: dict = {}
    pid = 0
    for eff in spec.action(action_name).effects:
        if not isinstance(eff, model.InsertEffect):
            continue
        if isinstance(eff.source, model.SelectQuery):
            continue
        rel = spec.relation(eff.relation)
        for col, term in zip(eff.columns, eff.source):
            if isinstance(term, model.Invocation):
                pid += 1
                dom = rel.domain_of(col)
                if dom is not None:
                    out[pid] = list(dom)
    return out


def _spec_doc(spec: model.Spec) -> dict:
    return {
        "text": parser.render_spec(spec),
        "relations": [
            {
                "name": r.name,
                "attributes": [{"name": n, "type": t.value} for n, t in r.attrs],
                "key": list(r.key),
                "domains": {d.attr: list(d.values) for d in r.domains},
            }
            for r in spec.relations
        ],
        "services": [
            {
                "name": s.name,
                "params": [t.value for t in s.param_types],
                "returns": s.return_type.value,
            }
            for s in spec.services
        ],
        "actions": [
            {
                "name": a.name,
                "params": [{"name": n, "type": t.value} for n, t in a.params],
            }
            for a in spec.actions
        ],
    }


def create_app(engine: Engine, *, clock=time.monotonic, ticket_ttl: float = TICKET_TTL) -> FastAPI:
    app = FastAPI(title="daproc", docs_url=None, redoc_url=None)
    api = _Api(engine, clock=clock, ttl=ticket_ttl)
    app.state.api = api

    @app.get("/spec")
    def get_spec():
        return _spec_doc(engine.spec)

    @app.get("/states")
    def get_states():
        return {"states": sorted(engine.store.states), "current": engine.store.current}

    @app.get("/states/{state_id}/relations/{name}")
    def get_relation(state_id: int, name: str):
        if name not in engine.spec._relations:
            return _err(404, f"unknown relation '{name}'")
        if state_id not in engine.store.states:
            return _err(404, f"unknown state {state_id}")
        rel = engine.spec.relation(name)
        rows = sorted(engine.store.reconstruct(name, state_id))
        return {
            "relation": name,
            "state": state_id,
            "attributes": list(rel.attr_names),
            "rows": [list(r) for r in rows],
        }

    @app.get("/actions/enabled")
    def get_enabled():
        with api.lock:
            return engine.enabled_actions(engine.store.current)

    @app.get("/actions/{name}/bindings")
    def get_bindings(name: str):
        if name not in engine.spec._actions:
            return _err(404, f"unknown action '{name}'")
        with api.lock:
            bindings = engine.enumerate_bindings(engine.store.current, name)
            return [
                {"bindingId": b.binding_id, "values": list(b.values), "marked": b.marked}
                for b in bindings
            ]

    @app.post("/actions/{name}/apply")
    def apply_action(name: str, body: dict):
        if name not in engine.spec._actions:
            return _err(404, f"unknown action '{name}'")
        binding_id = body.get("bindingId")
        if not isinstance(binding_id, int) or isinstance(binding_id, bool):
            return _err(422, "bindingId must be an integer")
        with api.lock:
            if api.open_ticket() is not None:
                return _err(409, "another apply is awaiting results", ticketId=api.ticket.ticket_id)
            s = engine.store.current
            bindings = engine.enumerate_bindings(s, name)
            binding = next((b for b in bindings if b.binding_id == binding_id), None)
            if binding is None:
                return _err(404, f"no binding {binding_id} for {name}")
            g = GroundAction(name, binding.values)
            _, pendings = engine.evaluate_effects(s, g)
            interactive = [p for p in pendings if engine.registry.is_interactive(p.service)]
            if interactive:
                api.ticket_seq += 1
                api.ticket = Ticket(
                    f"t{api.ticket_seq}",
                    s,
                    name,
                    binding.values,
                    interactive,
                    api.clock() + ticket_ttl,
                )
                domains = _invocation_domains(engine.spec, name)
                pending_doc = []
                for p in interactive:
                    entry = {
                        "invocationId": p.invocation_id,
                        "service": p.service,
                        "args": list(p.args),
                        "signature": p.signature,
                        "returns": engine.spec.service(p.service).return_type.value,
                    }
                    if p.invocation_id in domains:
                        entry["domain"] = domains[p.invocation_id]
                    pending_doc.append(entry)
                return JSONResponse(
                    {
                        "ticketId": api.ticket.ticket_id,
                        "action": name,
                        "bindingId": binding_id,
                        "expiresIn": ticket_ttl,
                        "pending": pending_doc,
                    },
                    status_code=202,
                )
            return _commit(api, s, g, {})

    @app.post("/tickets/{ticket_id}/results")
    def post_results(ticket_id: str, body: dict):
        with api.lock:
            ticket = api.ticket
            if ticket is None or ticket.ticket_id != ticket_id:
                return _err(404, f"unknown ticket '{ticket_id}'")
            api.ticket = None  # consumed whatever happens next
            if api.clock() >= ticket.expires_at:
                return _err(410, "ticket expired")
            results = {}
            for key, value in body.items():
                try:
                    results[int(key)] = value
                except (TypeError, ValueError):
                    return _err(422, f"bad invocation id {key!r}")
            return _commit(api, ticket.state, GroundAction(ticket.action, ticket.values), results)

    @app.get("/history")
    def get_history():
        return [
            {
                "from": t.from_state,
                "to": t.to_state,
                "action": t.label.action if t.label else None,
                "binding": list(t.label.binding) if t.label else [],
                "results": [
                    {"service": svc, "args": list(args), "value": v}
                    for svc, args, v in (t.label.results if t.label else ())
                ],
                "timestamp": t.timestamp,
            }
            for t in engine.store.transitions
        ]

    @app.post("/statespace/build")
    def build_space(body: dict):
        path = body.get("mockConfigPath")
        max_states = body.get("maxStates", 10000)
        if not isinstance(path, str):
            return _err(422, "mockConfigPath must be a string")
        if not isinstance(max_states, int) or isinstance(max_states, bool) or max_states < 1:
            return _err(422, "maxStates must be a positive integer")
        try:
            config = services.load_mock_config(path)
        except MockConfigError as e:
            return _err(422, str(e))
        with api.lock:
            initial = engine.store.snapshot(engine.store.current)
            try:
                api.space = statespace.build(
                    engine.spec, initial, config, max_states=max_states
                )
            except DaprocError as e:
                return _err(422, str(e))
            return {
                "states": len(api.space.states),
                "edges": len(api.space.edges),
                "complete": api.space.complete,
            }

    @app.get("/statespace")
    def get_space():
        if api.space is None:
            return _err(404, "no state space has been built")
        return JSONResponse(content=json.loads(statespace.export_json(api.space)))

    @app.get("/statespace.dot")
    def get_space_dot():
        if api.space is None:
            return _err(404, "no state space has been built")
        return PlainTextResponse(statespace.export_dot(api.space))

    return app


def _commit(api: _Api, s: int, g: GroundAction, results: dict):
    engine = api.engine
    try:
        new_state = engine.commit_ground_action(s, g, results)
    except ConstraintViolation as e:
        return _err(422, "constraint violation", violations=e.violations)
    except (MissingInvocationResult, TypeMismatch) as e:
        return _err(422, str(e))
    snapshot = engine.store.snapshot(new_state)
    return {
        "state": new_state,
        "action": g.action,
        "binding": list(g.values),
        "relations": {rel: sorted(list(r) for r in rows) for rel, rows in snapshot.items()},
    }


def serve(engine: Engine, addr: str = None):
    """Run uvicorn on `addr` (host:port); DAPROC_ADDR overrides the default."""
    import uvicorn

    addr = addr or os.environ.get("DAPROC_ADDR", DEFAULT_ADDR)
    host, _, port = addr.rpartition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port))
