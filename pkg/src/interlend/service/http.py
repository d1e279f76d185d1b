"""HTTP API over one node.

Every mutating endpoint maps 1:1 onto an engine/routing/ledger operation
and surfaces its domain error as a structured body; validation failures
never turn into bare 500s. Request bodies are parsed by hand so the
error taxonomy stays exactly the package's own.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import errors as err
from ..bibliography import BibRef, parse_openurl, resolve_identifier
from ..compliance import Deny
from ..routing import ALL_LIBRARIES, build_rota
from ..transitions import transition_table
from .auth import TokenStore
from .node import ServiceNode

# one status per machine-readable code; tests assert totality
ERROR_STATUS: dict[str, int] = {
    "EMPTY_CITATION": 400, "MALFORMED_QUERY": 400, "MALFORMED_IDENTIFIER": 400,
    "INVALID_BIB": 400, "SCHEMA_VIOLATION": 400, "CONFIG_INVALID": 400,
    "INVALID_ENTRY": 400, "INVALID_COORDINATES": 400, "MISSING_PAGE_COUNTS": 400,
    "INVALID_PAYLOAD": 400, "DIVISION_BY_ZERO": 400,
    "UNAUTHORIZED": 401,
    "FORBIDDEN": 403,
    "NOT_FOUND": 404, "UNKNOWN_REQUEST": 404, "UNKNOWN_USER": 404,
    "UNKNOWN_PARTNER": 404, "UNKNOWN_CORRELATION": 404,
    "INVALID_STATE": 409, "ALREADY_CLAIMED": 409, "SELF_REQUEST": 409,
    "PARTNER_IS_BASIC": 409, "QUOTA_EXCEEDED": 409,
    "PATRON_REQUESTS_DISABLED": 409, "QUARANTINE_NOT_ELAPSED": 409,
    "LOAN_CAP_EXCEEDED": 409, "BARCODE_REQUIRED": 409, "MISSING_RECEIPT": 409,
    "METHOD_NOT_ALLOWED": 409, "DUPLICATE_ID": 409, "INSUFFICIENT_DEPOSIT": 409,
    "NO_CANDIDATES": 409, "EMPTY_SOURCE": 409, "EMPTY_WINDOW": 409,
    "CHECKSUM_MISMATCH": 409,
    "SOURCE_UNAVAILABLE": 502, "RASTERIZER_FAILURE": 502,
}


def error_body(code: str, message: str, **extra) -> dict:
    body = {"error": {"code": code, "message": message}}
    body["error"].update(extra)
    return body


async def read_json(request: Request) -> dict:
    raw = await request.body()
    if not raw:
        return {}
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise err.SchemaViolation(f"body is not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise err.SchemaViolation("body must be a JSON object")
    return data


def create_app(node: ServiceNode, tokens: TokenStore | None = None) -> FastAPI:
    app = FastAPI(title=f"interlend node {node.node_id}", docs_url=None,
                  redoc_url=None, openapi_url=None)
    tokens = tokens or TokenStore(node.clock, node.config.token_ttl_hours)
    app.state.node = node
    app.state.tokens = tokens

    @app.exception_handler(err.InterlendError)
    async def domain_error(_request, exc: err.InterlendError):
        status = ERROR_STATUS.get(exc.code, 500)
        return JSONResponse(status_code=status,
                            content=error_body(exc.code, exc.message))

    @app.exception_handler(ValueError)
    async def value_error(_request, exc: ValueError):
        return JSONResponse(status_code=400,
                            content=error_body("SCHEMA_VIOLATION", str(exc)))

    def session_of(request: Request):
        header = request.headers.get("authorization", "")
        token = header[7:] if header.lower().startswith("bearer ") else None
        return tokens.resolve(token)

    # -- registration and auth ---------------------------------------------

    @app.post("/libraries", status_code=201)
    async def register_library(request: Request):
        body = await read_json(request)
        library_id = node.register_library(body)
        return {"id": library_id}

    @app.post("/auth/token")
    async def issue_token(request: Request):
        body = await read_json(request)
        user = body.get("user")
        library = body.get("library")
        if not user or not library:
            raise err.SchemaViolation("user and library required")
        if not node.roles.roles_at(user, library):
            raise err.Unauthorized(f"{user} holds no role at {library}")
        session = tokens.issue(user, library)
        return {"token": session.token, "user": user, "library": library,
                "expires_at": session.expires_at.isoformat()}

    @app.post("/operators")
    async def operators(request: Request):
        session = session_of(request)
        body = await read_json(request)
        node.manage_operators(
            manager=session.user,
            library=body.get("library", session.library),
            action=body.get("action", ""),
            target=body.get("user", ""),
            roles=body.get("roles"),
        )
        return {"ok": True}

    # -- request lifecycle ----------------------------------------------------

    def build_bib(body: dict) -> BibRef:
        if "openurl" in body:
            return parse_openurl(body["openurl"])
        if "identifier" in body:
            if node.metadata_source is None:
                raise err.SourceUnavailable("no metadata source configured")
            return resolve_identifier(body["identifier"], node.metadata_source)
        if "bib" in body:
            if not isinstance(body["bib"], dict):
                raise err.SchemaViolation("bib must be an object")
            return BibRef.from_dict(body["bib"]).validate()
        raise err.SchemaViolation("one of bib, openurl, identifier required")

    @app.post("/requests", status_code=201)
    async def create_request(request: Request):
        session = session_of(request)
        body = await read_json(request)
        bib = build_bib(body)
        created = node.engine.create_request(
            bib, session.library, body.get("flow", "non_returnable"),
            session.user, patron=body.get("patron"),
            tags=body.get("tags"))
        return {"id": created.id, "status": created.status}

    @app.get("/requests/{request_id}")
    async def get_request(request_id: str, request: Request):
        session_of(request)
        return node.engine.get(request_id).to_dict()

    @app.post("/requests/{request_id}/precheck")
    async def precheck(request_id: str, request: Request):
        session = session_of(request)
        advice = node.engine.precheck(request_id, node.holdings,
                                      node.oa_source, session.user)
        record = node.engine.get(request_id)
        return {"advice": advice.kind, "location": advice.location,
                "url": advice.url, "status": record.status}

    @app.post("/requests/{request_id}/send")
    async def send(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        record = node.engine.get(request_id)
        partner = body.get("partner")
        if not partner:
            # route from the rota, building it if none was assigned yet
            if not record.rota:
                plan = build_rota(record.bib, record.requester_library,
                                  record.flow, node.routing, node.config.pods,
                                  purchase_eligible=bool(body.get(
                                      "purchase_eligible")))
                node.engine.assign_rota(request_id, list(plan.entries),
                                        session.user)
            entry = record.rota[record.rota_index]
            if entry == ALL_LIBRARIES:
                node.engine.send_to_all(request_id, session.user)
                return {"status": record.status, "lender": None}
            partner = entry
        node.engine.send_to_partner(request_id, partner, session.user)
        return {"status": record.status, "lender": record.current_lender}

    @app.post("/requests/{request_id}/send-all")
    async def send_all(request_id: str, request: Request):
        session = session_of(request)
        record = node.engine.send_to_all(request_id, session.user)
        return {"status": record.status, "lender": None}

    @app.post("/requests/{request_id}/accept")
    async def accept(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        lender = body.get("lender", session.library)
        record = node.engine.accept(request_id, lender, session.user)
        return {"status": record.status, "lender": record.current_lender}

    @app.post("/requests/{request_id}/unfulfil")
    async def unfulfil(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        reason = body.get("reason")
        if reason is None:
            raise err.SchemaViolation("reason code required")
        record = node.engine.unfulfil(request_id, int(reason), session.user)
        return {"status": record.status,
                "unfulfil_reason": record.unfulfil_reason}

    @app.post("/requests/{request_id}/reiterate")
    async def reiterate(request_id: str, request: Request):
        session = session_of(request)
        record = node.engine.reiterate(request_id, session.user)
        return {"status": record.status, "lender": record.current_lender}

    @app.post("/requests/{request_id}/cancel")
    async def cancel(request_id: str, request: Request):
        session = session_of(request)
        record = node.engine.request_cancel(request_id, session.user)
        return {"status": record.status}

    @app.post("/requests/{request_id}/cancel-decision")
    async def cancel_decision(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        if "approve" not in body:
            raise err.SchemaViolation("approve required")
        record = node.engine.decide_cancel(request_id, bool(body["approve"]),
                                           session.user)
        return {"status": record.status}

    @app.post("/requests/{request_id}/fulfil")
    async def fulfil(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        method = body.get("method", "SED")
        verdict, receipt = node.fulfil_request(
            request_id, method, session.user,
            source_pages=int(body.get("pages", 1)),
            url=body.get("url"),
            borrower_country=body.get("borrower_country"),
        )
        if isinstance(verdict, Deny):
            return JSONResponse(status_code=409, content=error_body(
                "SUPPLY_DENIED", verdict.detail,
                reason_code=verdict.reason_code))
        record = node.engine.get(request_id)
        return {"status": record.status, "receipt": receipt.to_dict()}

    @app.post("/requests/{request_id}/receive")
    async def receive(request_id: str, request: Request):
        session = session_of(request)
        body = await read_json(request)
        node.receive_request(request_id, session.user,
                             barcode=body.get("barcode"))
        record = node.engine.get(request_id)
        return {"status": record.status, "temp_barcode": record.temp_barcode}

    def chain_step(operation):
        async def step(request_id: str, request: Request):
            session = session_of(request)
            record = getattr(node.engine, operation)(request_id, session.user)
            return {"status": record.status}
        return step

    app.post("/requests/{request_id}/loan")(chain_step("loan_to_patron"))
    app.post("/requests/{request_id}/return")(chain_step("return_from_patron"))
    app.post("/requests/{request_id}/quarantine-release")(
        chain_step("release_quarantine"))
    app.post("/requests/{request_id}/return-to-lender")(
        chain_step("return_to_lender"))
    app.post("/requests/{request_id}/complete")(chain_step("complete"))

    # -- panels, stats, exports ------------------------------------------------

    @app.get("/panels/{side}/{name}")
    async def panels(side: str, name: str, request: Request):
        session = session_of(request)
        return {"library": session.library,
                "rows": node.panel(side, name, session.library)}

    @app.get("/stats")
    async def stats(request: Request, mode: str = "OF_TOTAL", decimals: int = 0):
        session_of(request)
        return node.stats_report(mode=mode, decimals=decimals)

    @app.get("/ledger/report")
    async def ledger_report(request: Request):
        session_of(request)
        return node.ledger_report()

    @app.get("/transitions")
    async def transitions():
        return transition_table()

    @app.get("/packages/{package_id}")
    async def get_package(package_id: str, request: Request):
        session_of(request)
        package = node.packages.get(package_id)
        if package is None:
            raise err.UnknownCorrelation(package_id)
        return {"manifest": package.manifest, "downloaded": package.downloaded,
                "disclaimer": package.disclaimer_text}

    @app.post("/packages/{package_id}/download")
    async def download_package(package_id: str, request: Request):
        session_of(request)
        node.mark_package_downloaded(package_id)
        return {"ok": True}

    # -- inter-node wire ----------------------------------------------------------

    @app.post("/wire")
    async def wire(request: Request):
        body = await read_json(request)
        return node.ingest_wire(body)

    return app
