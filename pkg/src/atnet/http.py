"""HTTP gateway: every simulated service behind one FastAPI app.

Routes are grouped by service prefix (``/plc``, ``/pds/{n}``, ``/relay``,
``/appview``, ``/labeler/{n}``, ``/feeds/{n}``). Requests are serialized,
and every state-changing request is followed by a settle so that reads
see the network caught up.
"""

from __future__ import annotations

import asyncio
import base64
import threading
from typing import Any

from fastapi import Body, FastAPI, Header, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response

from atnet import codec
from atnet.appview import ViewerContext
from atnet.codec import Cid
from atnet.events import RepoEvent
from atnet.identity import IdentityError, PlcOperation, resolve_did, resolve_handle
from atnet.pds import Unauthorized, Write
from atnet.sim.topology import APPVIEW_URL, Sim
from atnet.stream import OutdatedCursor

STATUS = {
    "Unauthorized": 401,
    "BadCredentials": 401,
    "Takedown": 410,
    "HandleTaken": 409,
    "DirectoryRejected": 409,
    "GeneratorUnavailable": 502,
    "Unreachable": 503,
    "Timeout": 504,
    "TooLarge": 413,
    "FutureCursor": 400,
}


def _status(exc: Exception) -> int:
    for cls in type(exc).__mro__:
        if cls.__name__ in STATUS:
            return STATUS[cls.__name__]
    if isinstance(exc, KeyError):
        return 404
    if isinstance(exc, (ValueError, IdentityError)):
        return 400
    return 500


def event_json(event: RepoEvent, with_blocks: bool = False) -> dict[str, Any]:
    out = {
        "seq": event.seq,
        "did": event.did,
        "commit": str(event.commit),
        "prev": str(event.prev) if event.prev else None,
        "time": event.time,
        "ops": [{"action": op.action, "path": op.path, "cid": str(op.cid) if op.cid else None} for op in event.ops],
    }
    if with_blocks:
        out["blocks"] = base64.b64encode(event.blocks).decode()
    return out


def _bearer(authorization: str | None) -> str:
    if not authorization or not authorization.startswith("Bearer "):
        raise Unauthorized("missing bearer token")
    return authorization[7:]


def create_app(sim: Sim) -> FastAPI:
    app = FastAPI(title="atnet gateway")
    lock = threading.RLock()
    app.state.sim = sim

    # a middleware rather than an Exception handler: the latter still re-raises
    @app.middleware("http")
    async def _errors(request: Request, call_next):
        try:
            return await call_next(request)
        except Exception as exc:  # noqa: BLE001 - every service error becomes a JSON body
            return JSONResponse({"error": type(exc).__name__, "message": str(exc)}, status_code=_status(exc))

    def mutate(fn):
        with lock:
            result = fn()
            sim.settle()
            return result

    def viewer_ctx(viewer: str | None) -> ViewerContext:
        if viewer is None:
            return ViewerContext()
        return ViewerContext(viewer)

    # directory

    @app.get("/plc/{did}")
    def plc_document(did: str):
        with lock:
            return sim.plc.get_document(did).to_json()

    @app.get("/plc/{did}/log/audit")
    def plc_audit(did: str):
        with lock:
            return [op.to_json() for op in sim.plc.get_audit_log(did)]

    @app.post("/plc/{did}")
    def plc_submit(did: str, op: dict = Body(...)):
        result = mutate(lambda: sim.plc.submit_operation(did, PlcOperation.from_json(op)))
        if not result.accepted:
            return JSONResponse({"error": "DirectoryRejected", "message": result.reason}, status_code=409)
        return {"accepted": True}

    # identity helpers (what any client would do with DNS and HTTPS)

    @app.get("/identity/resolveHandle")
    def identity_resolve_handle(handle: str):
        with lock:
            did = resolve_handle(handle, sim.network.resolver(APPVIEW_URL))
        if did is None:
            return JSONResponse({"error": "HandleNotFound", "message": handle}, status_code=404)
        return {"did": did}

    @app.get("/identity/resolveDid")
    def identity_resolve_did(did: str):
        with lock:
            return resolve_did(did, sim.network.resolver(APPVIEW_URL)).to_json()

    # PDS

    @app.get("/pds/{n}/describeServer")
    def pds_describe(n: int):
        pds = sim.pds(n)
        return {"url": pds.url, "accounts": len(pds.sync_list_repos())}

    @app.post("/pds/{n}/createAccount")
    def pds_create_account(n: int, body: dict = Body(...)):
        def run():
            pds = sim.pds(n)
            did = pds.create_account(body["handle"], body["password"], rotation_keys=body.get("rotationKeys", ()))
            # the gateway doubles as DNS host for handles it is asked to create
            sim.network.set_txt(f"_atproto.{body['handle'].lower()}", [f"did={did}"])
            return {"did": did, "handle": body["handle"].lower()}

        return mutate(run)

    @app.post("/pds/{n}/createSession")
    def pds_create_session(n: int, body: dict = Body(...)):
        with lock:
            token = sim.pds(n).create_session(body["identifier"], body["password"])
            return {"accessJwt": token, "did": sim.pds(n).sessions[token].did}

    @app.post("/pds/{n}/applyWrites")
    def pds_apply_writes(n: int, body: dict = Body(...), authorization: str | None = Header(None)):
        token = _bearer(authorization)
        writes = [
            Write(w["action"], w["collection"], w.get("rkey"),
                  codec.from_json(w["record"]) if w.get("record") is not None else None)
            for w in body["writes"]
        ]
        result = mutate(lambda: sim.pds(n).write_records(token, writes))
        return {"commit": str(result.commit),
                "results": [{"uri": uri, "cid": str(cid) if cid else None} for uri, cid in result.results]}

    @app.get("/pds/{n}/getRecord")
    def pds_get_record(n: int, did: str, collection: str, rkey: str):
        with lock:
            value, cid = sim.pds(n).get_record(did, collection, rkey)
            return {"uri": f"at://{did}/{collection}/{rkey}", "cid": str(cid), "value": codec.to_json(value)}

    @app.post("/pds/{n}/uploadBlob")
    async def pds_upload_blob(n: int, request: Request, authorization: str | None = Header(None)):
        data = await request.body()
        token = _bearer(authorization)
        with lock:
            cid = sim.pds(n).put_blob(token, data)
        return {"cid": str(cid), "size": len(data)}

    @app.get("/pds/{n}/getBlob")
    def pds_get_blob(n: int, did: str, cid: str):
        with lock:
            return Response(sim.pds(n).get_blob(did, Cid.parse(cid)), media_type="application/octet-stream")

    @app.get("/pds/{n}/exportBlobs")
    def pds_export_blobs(n: int, did: str):
        with lock:
            return [base64.b64encode(b).decode() for b in sim.pds(n).export_blobs(did)]

    @app.get("/pds/{n}/getRepo")
    def pds_get_repo(n: int, did: str):
        with lock:
            return Response(sim.pds(n).sync_get_repo(did), media_type="application/vnd.ipld.car")

    @app.post("/pds/{n}/reserveKeys")
    def pds_reserve_keys(n: int, did: str):
        with lock:
            return sim.pds(n).reserve_keys(did)

    @app.post("/pds/{n}/migrateIn")
    def pds_migrate_in(n: int, body: dict = Body(...)):
        archive = base64.b64decode(body["archive"])
        blobs = [base64.b64decode(b) for b in body.get("blobs", [])]
        op = PlcOperation.from_json(body["plcOperation"])
        did = mutate(lambda: sim.pds(n).migrate_in(archive, blobs, op, body["password"]))
        return {"did": did}

    @app.post("/pds/{n}/deactivate")
    def pds_deactivate(n: int, status: str = "deactivated", authorization: str | None = Header(None)):
        token = _bearer(authorization)
        mutate(lambda: sim.pds(n).deactivate(token, status))
        return {"status": status}

    @app.get("/pds/{n}/events")
    def pds_events(n: int, cursor: int = 0, limit: int = 100):
        with lock:
            events, outdated = sim.pds(n).events.read(cursor, limit)
            return {"outdated": outdated is not None, "events": [event_json(e) for e in events]}

    # relay

    @app.get("/relay/events")
    def relay_events(cursor: int = 0, limit: int = 100, blocks: bool = False):
        with lock:
            events, outdated = sim.relay.firehose.read(cursor, limit)
            return {
                "outdated": outdated.oldest_seq if outdated else None,
                "events": [event_json(e, blocks) for e in events],
            }

    @app.websocket("/relay/subscribe")
    async def relay_subscribe(ws: WebSocket, cursor: int = 0):
        await ws.accept()
        with lock:
            sub = sim.relay.firehose_subscribe(cursor)
        try:
            while True:
                with lock:
                    items = sub.poll(100)
                for item in items:
                    if isinstance(item, OutdatedCursor):
                        await ws.send_json({"outdated": item.oldest_seq})
                    else:
                        await ws.send_json(event_json(item))
                if not items:
                    await asyncio.sleep(0.05)
        except WebSocketDisconnect:
            sub.close()

    # app view

    @app.get("/appview/getTimeline")
    def av_timeline(viewer: str, cursor: str | None = None, limit: int = 50):
        with lock:
            return sim.appview.get_timeline(viewer, viewer_ctx(viewer), cursor, limit)

    @app.get("/appview/getPostThread")
    def av_thread(uri: str, viewer: str | None = None):
        with lock:
            return sim.appview.get_thread(uri, viewer_ctx(viewer))

    @app.get("/appview/getPost")
    def av_post(uri: str, viewer: str | None = None):
        with lock:
            return sim.appview.get_post(uri, viewer_ctx(viewer))

    @app.get("/appview/getProfile")
    def av_profile(actor: str):
        with lock:
            return sim.appview.get_profile(actor)

    @app.get("/appview/getFollowers")
    def av_followers(actor: str):
        with lock:
            return {"followers": sim.appview.get_followers(actor)}

    @app.get("/appview/getFollows")
    def av_follows(actor: str):
        with lock:
            return {"follows": sim.appview.get_follows(actor)}

    @app.get("/appview/getLikes")
    def av_likes(uri: str):
        with lock:
            return {"likes": sim.appview.get_likes(uri)}

    @app.get("/appview/getFeed")
    def av_feed(feed: str, viewer: str | None = None, cursor: str | None = None, limit: int = 50):
        with lock:
            return sim.appview.get_feed(feed, viewer_ctx(viewer), cursor, limit)

    @app.post("/appview/takedown")
    def av_takedown(subject: str, reverse: bool = False, authorization: str | None = Header(None)):
        token = _bearer(authorization)
        if reverse:
            mutate(lambda: sim.appview.reverse_takedown(subject, token))
        else:
            mutate(lambda: sim.appview.admin_takedown(subject, token))
        return {"subject": subject, "takendown": not reverse}

    # labelers and feed generators

    @app.get("/labeler/{n}/labels")
    def labeler_labels(n: int, cursor: int = 0, limit: int = 100):
        with lock:
            events = sim.labelers[n - 1].query_labels(cursor, limit)
            return [{"seq": e.seq, **codec.to_json(e.label.to_value())} for e in events]

    @app.get("/feeds/{n}/getFeedSkeleton")
    def feed_skeleton(n: int, feed: str, cursor: str | None = None, limit: int = Query(50, ge=1, le=100)):
        with lock:
            skeleton = sim.feedgens[n - 1].get_skeleton(feed, cursor, limit)
            return {"feed": [{"post": uri} for uri in skeleton.posts], "cursor": skeleton.cursor}

    return app
