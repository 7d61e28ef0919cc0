"""Operator and user command line. Talks to a gateway over HTTP.

Start a gateway with ``atnet serve``; every other command (except ``run``)
is a thin client of it.
"""

from __future__ import annotations

import base64
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import click
import httpx

from atnet.crypto import Keypair
from atnet.identity import PlcOperation

DEFAULT_ENDPOINT = "http://127.0.0.1:8700"


class ServiceError(click.ClickException):
    exit_code = 2


def _client(ctx: click.Context) -> httpx.Client:
    obj = ctx.find_root().obj
    if obj.get("client") is None:
        obj["client"] = httpx.Client(base_url=obj["endpoint"], timeout=30.0)
    return obj["client"]


def call(ctx: click.Context, method: str, path: str, *, token: str | None = None, **kwargs) -> Any:
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    try:
        response = _client(ctx).request(method, path, headers=headers, **kwargs)
    except httpx.HTTPError as exc:
        raise ServiceError(f"cannot reach gateway: {exc}") from exc
    if response.status_code >= 400:
        try:
            body = response.json()
            message = f"{body.get('error')}: {body.get('message')}"
        except ValueError:
            message = response.text
        raise ServiceError(f"{response.status_code} {message}")
    if response.headers.get("content-type", "").startswith("application/json"):
        return response.json()
    return response.content


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _emit(data: Any) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--endpoint", envvar="ATNET_ENDPOINT", default=DEFAULT_ENDPOINT, show_default=True,
              help="Gateway base URL.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON config: ports, retention sizes, hash-cost profile.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for simulation randomness.")
@click.pass_context
def main(ctx: click.Context, endpoint: str, config_path: str | None, seed: int) -> None:
    """Personal data servers, relay, app view and friends, simulated in one process."""
    ctx.ensure_object(dict)
    ctx.obj.setdefault("client", None)
    ctx.obj.update(endpoint=endpoint, config_path=config_path, seed=seed)


def _config(ctx: click.Context):
    from atnet.sim.topology import SimConfig

    path = ctx.find_root().obj.get("config_path")
    return SimConfig.load(path) if path else SimConfig()


# accounts


@main.group()
def account() -> None:
    """Create accounts and sessions."""


@account.command("create")
@click.option("--pds", type=int, default=1, show_default=True)
@click.option("--handle", required=True)
@click.option("--password", required=True, prompt=True, hide_input=True)
@click.option("--key-file", type=click.Path(dir_okay=False), help="Where to keep your own rotation key.")
@click.pass_context
def account_create(ctx, pds: int, handle: str, password: str, key_file: str | None) -> None:
    body: dict[str, Any] = {"handle": handle, "password": password}
    if key_file:
        key = Keypair.generate()
        Path(key_file).write_text(key.seed().hex() + "\n")
        os.chmod(key_file, 0o600)
        body["rotationKeys"] = [key.public_key]
    _emit(call(ctx, "POST", f"/pds/{pds}/createAccount", json=body))


@account.command("login")
@click.option("--pds", type=int, default=1, show_default=True)
@click.option("--identifier", required=True, help="Handle or DID.")
@click.option("--password", required=True, prompt=True, hide_input=True)
@click.pass_context
def account_login(ctx, pds: int, identifier: str, password: str) -> None:
    _emit(call(ctx, "POST", f"/pds/{pds}/createSession", json={"identifier": identifier, "password": password}))


# writes

_token = click.option("--token", envvar="ATNET_TOKEN", required=True, help="Session token from 'account login'.")
_pds = click.option("--pds", type=int, default=1, show_default=True)


def _write(ctx, pds: int, token: str, collection: str, record: dict[str, Any]) -> None:
    body = {"writes": [{"action": "create", "collection": collection, "record": record}]}
    _emit(call(ctx, "POST", f"/pds/{pds}/applyWrites", token=token, json=body))


def _strong_ref(ctx, uri: str) -> dict[str, Any]:
    view = call(ctx, "GET", "/appview/getPost", params={"uri": uri})
    return {"uri": view["uri"], "cid": {"/": view["cid"]}}


@main.command()
@_pds
@_token
@click.option("--text", required=True)
@click.option("--reply-to", help="at:// URI of the post being replied to.")
@click.pass_context
def post(ctx, pds: int, token: str, text: str, reply_to: str | None) -> None:
    """Publish a post."""
    record: dict[str, Any] = {"text": text, "createdAt": _now()}
    if reply_to:
        parent = call(ctx, "GET", "/appview/getPost", params={"uri": reply_to})
        root_uri = parent["reply"]["root"] if parent["reply"] else parent["uri"]
        record["reply"] = {"root": _strong_ref(ctx, root_uri), "parent": _strong_ref(ctx, reply_to)}
    _write(ctx, pds, token, "app.bsky.feed.post", record)


@main.command()
@_pds
@_token
@click.option("--uri", required=True)
@click.pass_context
def like(ctx, pds: int, token: str, uri: str) -> None:
    """Like a post."""
    _write(ctx, pds, token, "app.bsky.feed.like", {"subject": _strong_ref(ctx, uri), "createdAt": _now()})


@main.command()
@_pds
@_token
@click.option("--did", required=True)
@click.pass_context
def follow(ctx, pds: int, token: str, did: str) -> None:
    """Follow an account."""
    _write(ctx, pds, token, "app.bsky.graph.follow", {"subject": did, "createdAt": _now()})


@main.command()
@_pds
@_token
@click.option("--did", required=True)
@click.pass_context
def block(ctx, pds: int, token: str, did: str) -> None:
    """Block an account (blocks are public records)."""
    _write(ctx, pds, token, "app.bsky.graph.block", {"subject": did, "createdAt": _now()})


@main.command()
@click.option("--did", required=True)
@click.option("--password", required=True, prompt=True, hide_input=True)
@click.option("--key-file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Your rotation key, as written by 'account create'.")
@click.option("--from", "source", type=int, required=True, help="Current PDS number.")
@click.option("--to", "target", type=int, required=True, help="New PDS number.")
@_token
@click.pass_context
def migrate(ctx, did: str, password: str, key_file: str, source: int, target: int, token: str) -> None:
    """Move an account to another PDS, keeping its DID and handle."""
    key = Keypair.from_seed(bytes.fromhex(Path(key_file).read_text().strip()))
    archive = call(ctx, "GET", f"/pds/{source}/getRepo", params={"did": did})
    blobs = call(ctx, "GET", f"/pds/{source}/exportBlobs", params={"did": did})
    keys = call(ctx, "POST", f"/pds/{target}/reserveKeys", params={"did": did})
    log = [PlcOperation.from_json(op) for op in call(ctx, "GET", f"/plc/{did}/log/audit")]
    head = log[-1]
    if key.public_key not in head.rotation_keys:
        raise ServiceError("the key file does not hold one of this account's rotation keys")
    target_url = call(ctx, "GET", f"/pds/{target}/describeServer")["url"]
    update = PlcOperation.create(
        key,
        prev=head.cid,
        handle=head.handle,
        pds_url=target_url,
        signing_key=keys["signing_key"],
        rotation_keys=[key.public_key, keys["rotation_key"]],
    )
    body = {
        "archive": base64.b64encode(archive).decode(),
        "blobs": blobs,
        "plcOperation": update.to_json(),
        "password": password,
    }
    _emit(call(ctx, "POST", f"/pds/{target}/migrateIn", json=body))
    call(ctx, "POST", f"/pds/{source}/deactivate", token=token, params={"status": "migrated-away"})


# identity


@main.command("resolve-handle")
@click.argument("handle")
@click.pass_context
def resolve_handle_cmd(ctx, handle: str) -> None:
    """Resolve a handle and check that the DID document points back at it."""
    did = call(ctx, "GET", "/identity/resolveHandle", params={"handle": handle})["did"]
    doc = call(ctx, "GET", "/identity/resolveDid", params={"did": did})
    if doc["handle"].lower() != handle.lower():
        raise ServiceError(f"{handle} points at {did}, but that DID claims {doc['handle']}")
    _emit({"handle": handle.lower(), "did": did, "verified": True})


@main.command("resolve-did")
@click.argument("did")
@click.pass_context
def resolve_did_cmd(ctx, did: str) -> None:
    """Print the DID document."""
    _emit(call(ctx, "GET", "/identity/resolveDid", params={"did": did}))


# streams


def format_event(event: dict[str, Any]) -> list[str]:
    if not event["ops"]:
        return [f"{event['seq']} {event['did']} commit -"]
    return [f"{event['seq']} {event['did']} {op['action']} {op['path']}" for op in event["ops"]]


@main.group()
def firehose() -> None:
    """Read the relay's firehose."""


@firehose.command("tail")
@click.option("--cursor", type=int, default=0, show_default=True)
@click.option("--limit", type=int, default=100, show_default=True)
@click.option("--follow", is_flag=True, help="Keep polling for new events.")
@click.option("--interval", type=float, default=1.0, show_default=True)
@click.pass_context
def firehose_tail(ctx, cursor: int, limit: int, follow: bool, interval: float) -> None:
    """One line per op: seq, did, action, path."""
    while True:
        page = call(ctx, "GET", "/relay/events", params={"cursor": cursor, "limit": limit})
        if page["outdated"] is not None:
            click.echo(f"# cursor {cursor} is older than retention; resuming at {page['outdated']}", err=True)
        for event in page["events"]:
            for line in format_event(event):
                click.echo(line)
            cursor = event["seq"]
        if page["events"] and len(page["events"]) == limit:
            continue
        if not follow:
            return
        time.sleep(interval)


@main.group()
def feed() -> None:
    """Custom feeds."""


@feed.command("read")
@click.option("--feed", "feed_uri", required=True)
@click.option("--viewer")
@click.option("--cursor")
@click.option("--limit", type=int, default=50, show_default=True)
@click.pass_context
def feed_read(ctx, feed_uri: str, viewer: str | None, cursor: str | None, limit: int) -> None:
    """Fetch a feed through the app view, which hydrates the generator's skeleton."""
    params = {"feed": feed_uri, "limit": limit}
    if viewer:
        params["viewer"] = viewer
    if cursor:
        params["cursor"] = cursor
    _emit(call(ctx, "GET", "/appview/getFeed", params=params))


@main.group()
def label() -> None:
    """Labeler streams."""


@label.command("tail")
@click.option("--labeler", type=int, default=1, show_default=True)
@click.option("--cursor", type=int, default=0, show_default=True)
@click.pass_context
def label_tail(ctx, labeler: int, cursor: int) -> None:
    """One line per label: seq, labeler, value (with ! for negation), subject."""
    for entry in call(ctx, "GET", f"/labeler/{labeler}/labels", params={"cursor": cursor}):
        mark = "!" if entry["neg"] else ""
        click.echo(f"{entry['seq']} {entry['src']} {mark}{entry['val']} {entry['uri']}")


# simulation


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), help="Also write the report here.")
@click.pass_context
def run(ctx, scenario_path: str, report_path: str | None) -> None:
    """Run a scenario in-process and print its JSON report. Exit 1 on failure."""
    from atnet.sim.scenario import ScenarioParseError, load_scenario, run_scenario

    try:
        scenario = load_scenario(scenario_path)
    except ScenarioParseError as exc:
        raise click.BadParameter(str(exc), param_hint="--scenario") from exc
    report = run_scenario(scenario, ctx.find_root().obj["seed"], _config(ctx))
    text = report.to_json()
    if report_path:
        Path(report_path).write_text(text)
    click.echo(text, nl=False)
    if not report.passed:
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, help="Defaults to the config file's port, else 8700.")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False),
              help="Run this scenario first, then serve the resulting network.")
@click.pass_context
def serve(ctx, host: str, port: int | None, scenario_path: str | None) -> None:
    """Serve the whole simulated network over HTTP."""
    import uvicorn

    from atnet.http import create_app
    from atnet.sim.scenario import Runner, load_scenario
    from atnet.sim.topology import Sim

    config = _config(ctx)
    sim = Sim(ctx.find_root().obj["seed"], config)
    if scenario_path:
        report = Runner(sim).run(load_scenario(scenario_path))
        click.echo(f"scenario {'passed' if report.passed else 'FAILED'}", err=True)
    uvicorn.run(create_app(sim), host=host, port=port or config.port, log_level="warning")


if __name__ == "__main__":  # pragma: no cover
    main()
