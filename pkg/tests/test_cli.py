import json
from pathlib import Path

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from atnet.cli import main
from atnet.feedgen import FeedRule
from atnet.http import create_app
from atnet.sim import Sim

FLAGSHIP = Path(__file__).parent.parent / "scenarios" / "flagship.txt"


@pytest.fixture
def gateway():
    sim = Sim(3)
    return sim, TestClient(create_app(sim))


def invoke(client, *args):
    return CliRunner().invoke(main, list(args), obj={"client": client})


def cli_json(client, *args):
    result = invoke(client, *args)
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


def test_account_post_and_tail(gateway, tmp_path):
    sim, client = gateway
    key = tmp_path / "zoe.key"
    did = cli_json(client, "account", "create", "--handle", "zoe.test", "--password", "pw", "--key-file", str(key))["did"]
    assert key.stat().st_mode & 0o077 == 0
    token = cli_json(client, "account", "login", "--identifier", "zoe.test", "--password", "pw")["accessJwt"]
    uri = cli_json(client, "post", "--token", token, "--text", "hello")["results"][0]["uri"]
    reply = cli_json(client, "post", "--token", token, "--text", "again", "--reply-to", uri)["results"][0]["uri"]
    lines = invoke(client, "firehose", "tail").output.splitlines()
    assert f"{did} create {uri.split('/', 3)[3]}" in " ".join(lines)
    thread = client.get("/appview/getPostThread", params={"uri": uri}).json()
    assert thread["replies"][0]["post"]["uri"] == reply


def test_resolve_handle(gateway):
    sim, client = gateway
    sim.create_account("amy")
    sim.settle()
    assert cli_json(client, "resolve-handle", "amy.test")["did"] == sim.user("amy").did
    assert invoke(client, "resolve-handle", "nobody.test").exit_code != 0
    sim.break_handle("amy")
    assert invoke(client, "resolve-handle", "amy.test").exit_code != 0


def test_bad_token_is_an_error(gateway):
    sim, client = gateway
    result = invoke(client, "post", "--token", "nope", "--text", "x")
    assert result.exit_code == 2 and "401" in result.output


def test_feed_read_matches_endpoint(gateway):
    sim, client = gateway
    sim.create_account("amy")
    sim.post("amy", "hi #cli")
    sim.post("amy", "bye #cli")
    feed = sim.publish_feed("amy", "cli", FeedRule("cli"))
    sim.settle()
    got = cli_json(client, "feed", "read", "--feed", feed)
    assert got == client.get("/appview/getFeed", params={"feed": feed}).json()
    assert [i["post"]["text"] for i in got["feed"]] == ["bye #cli", "hi #cli"]


def test_migrate(gateway, tmp_path):
    sim, client = gateway
    key = tmp_path / "k"
    did = cli_json(client, "account", "create", "--handle", "mo.test", "--password", "pw", "--key-file", str(key))["did"]
    sim.network.set_txt("_atproto.mo.test", [f"did={did}"])
    token = cli_json(client, "account", "login", "--identifier", "mo.test", "--password", "pw")["accessJwt"]
    cli_json(client, "post", "--token", token, "--text", "before")
    invoke(client, "migrate", "--did", did, "--password", "pw2", "--key-file", str(key),
           "--from", "1", "--to", "2", "--token", token)
    doc = cli_json(client, "resolve-did", did)
    assert doc["pds_url"] == sim.pds(2).url and doc["handle"] == "mo.test"
    token2 = cli_json(client, "account", "login", "--pds", "2", "--identifier", "mo.test", "--password", "pw2")["accessJwt"]
    cli_json(client, "post", "--pds", "2", "--token", token2, "--text", "after")
    assert sorted(r["text"] for r in sim.pds(2).accounts[did].repo.records().values()) == ["after", "before"]


def test_migrate_with_wrong_key(gateway, tmp_path):
    sim, client = gateway
    mine, other = tmp_path / "mine", tmp_path / "other"
    did = cli_json(client, "account", "create", "--handle", "a.test", "--password", "pw", "--key-file", str(mine))["did"]
    cli_json(client, "account", "create", "--handle", "b.test", "--password", "pw", "--key-file", str(other))
    token = cli_json(client, "account", "login", "--identifier", "a.test", "--password", "pw")["accessJwt"]
    result = invoke(client, "migrate", "--did", did, "--password", "pw", "--key-file", str(other),
                    "--from", "1", "--to", "2", "--token", token)
    assert result.exit_code == 2 and "rotation" in result.output


def test_run_scenario(tmp_path):
    report = tmp_path / "report.json"
    result = CliRunner().invoke(main, ["run", "--scenario", str(FLAGSHIP), "--report", str(report)])
    assert result.exit_code == 0
    assert json.loads(report.read_text())["passed"] is True
    bad = tmp_path / "bad.txt"
    bad.write_text("create-account user=a\nassert-likes post=nope count=1\n")
    assert CliRunner().invoke(main, ["run", "--scenario", str(bad)]).exit_code == 1
    bad.write_text("fly away=1\n")
    assert CliRunner().invoke(main, ["run", "--scenario", str(bad)]).exit_code == 2
