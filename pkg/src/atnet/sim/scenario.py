"""Plain-text scenarios: one action per line, ``key=value`` arguments.

    # comments and blank lines are ignored
    topology pds=3 labelers=1 feedgens=1
    create-account user=alice pds=1
    post user=alice as=p1 text="hello #cats"
    reply user=bob to=p1 as=p2 text="hi"
    settle
    assert-likes post=p1 count=0

Names given with ``as=`` refer to the created record's URI in later lines.
Any action may carry ``expect=<ErrorClass>``; the line then passes only if
that error is raised.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from atnet.appview import INVALID_HANDLE, AppViewError, NotFound, ViewerContext
from atnet.events import RepoEvent
from atnet.feedgen import FeedRule
from atnet.identity import IdentityError
from atnet.repo import import_archive
from atnet.sim.oracle import Oracle
from atnet.sim.topology import Sim, SimConfig
from atnet.stream import OutdatedCursor


class ScenarioParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AssertionFailed(Exception):
    pass


@dataclass(frozen=True)
class Action:
    line: int
    name: str
    args: dict[str, str]

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.args.get(key, default)

    def need(self, key: str) -> str:
        if key not in self.args:
            raise ScenarioParseError(self.line, f"{self.name} needs {key}=")
        return self.args[key]

    def int(self, key: str, default: int | None = None) -> int:
        raw = self.args.get(key)
        if raw is None:
            if default is None:
                raise ScenarioParseError(self.line, f"{self.name} needs {key}=")
            return default
        try:
            return int(raw)
        except ValueError:
            raise ScenarioParseError(self.line, f"{key}= must be an integer, got {raw!r}") from None

    def names(self, key: str) -> list[str]:
        raw = self.args.get(key, "")
        return [part for part in raw.split(",") if part]


@dataclass
class Scenario:
    actions: list[Action]
    topology: dict[str, int] = field(default_factory=dict)


def parse_scenario(text: str) -> Scenario:
    actions = []
    topology: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            words = shlex.split(stripped, comments=True)
        except ValueError as exc:
            raise ScenarioParseError(number, str(exc)) from None
        if not words:
            continue
        name, args = words[0], {}
        for word in words[1:]:
            key, sep, value = word.partition("=")
            if not sep or not key:
                raise ScenarioParseError(number, f"expected key=value, got {word!r}")
            if key in args:
                raise ScenarioParseError(number, f"duplicate argument {key}")
            args[key] = value
        if name not in HANDLERS and name != "topology":
            raise ScenarioParseError(number, f"unknown action {name!r}")
        action = Action(number, name, args)
        if name == "topology":
            if actions:
                raise ScenarioParseError(number, "topology must come before any action")
            for key in args:
                if key not in ("pds", "labelers", "feedgens"):
                    raise ScenarioParseError(number, f"unknown topology key {key}")
                topology[key] = action.int(key)
            continue
        actions.append(action)
    return Scenario(actions, topology)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


# report


@dataclass
class Result:
    line: int
    action: str
    ok: bool
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"line": self.line, "action": self.action, "ok": self.ok, "detail": self.detail}


@dataclass
class Report:
    seed: int
    results: list[Result]
    metrics: dict[str, Any]

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def failures(self) -> list[Result]:
        return [r for r in self.results if not r.ok]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "results": [r.to_dict() for r in self.results if r.action.startswith("assert") or not r.ok
                        or r.detail.startswith("raised")],
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class Runner:
    def __init__(self, sim: Sim):
        self.sim = sim
        self.names: dict[str, str] = {}

    def ref(self, action: Action, key: str) -> str:
        """A record URI from an ``as=`` name, or a literal at:// URI."""
        raw = action.need(key)
        if raw.startswith("at://"):
            return raw
        if raw not in self.names:
            raise AssertionFailed(f"line {action.line}: unknown record name {raw!r}")
        return self.names[raw]

    def subject(self, action: Action, key: str) -> str:
        """A record name, at:// URI, or user name (meaning their DID)."""
        raw = action.need(key)
        if raw in self.names or raw.startswith("at://"):
            return self.ref(action, key)
        return self.sim.user(raw).did

    def remember(self, action: Action, uri: str) -> None:
        if "as" in action.args:
            self.names[action.args["as"]] = uri

    def run(self, scenario: Scenario) -> Report:
        results = []
        for action in scenario.actions:
            expect = action.get("expect")
            try:
                detail = HANDLERS[action.name](self, action) or ""
            except AssertionFailed as exc:
                results.append(Result(action.line, action.name, False, str(exc)))
                continue
            except ScenarioParseError:
                raise
            except Exception as exc:  # noqa: BLE001 - every failure is reported on its line
                kind = type(exc).__name__
                if expect is not None:
                    ok = kind == expect or any(c.__name__ == expect for c in type(exc).__mro__)
                    results.append(Result(action.line, action.name, ok, f"raised {kind}"))
                else:
                    results.append(Result(action.line, action.name, False, f"raised {kind}: {exc}"))
                continue
            if expect is not None:
                results.append(Result(action.line, action.name, False, f"expected {expect}, nothing raised"))
            else:
                results.append(Result(action.line, action.name, True, detail))
        return Report(self.sim.seed, results, self.metrics())

    def metrics(self) -> dict[str, Any]:
        sim = self.sim
        return {
            "accounts": len(sim.users),
            "relay_seq": sim.relay.firehose.seq,
            "relay_drops": dict(sorted(sim.relay.drops.items())),
            "records_indexed": len(sim.appview.records),
            "ignored_records": sim.appview.ignored,
            "malformed_records": sim.appview.malformed,
            "labels_emitted": sum(lab.labels.seq for lab in sim.labelers),
            "plc_log_hash": sim.plc.running_hash,
            "clock_us": sim.clock.now(),
        }


def run_scenario(scenario: Scenario | str, seed: int = 0, config: SimConfig | None = None) -> Report:
    if isinstance(scenario, str):
        scenario = parse_scenario(scenario)
    config = config or SimConfig()
    overrides = {"pds": "pds_count", "labelers": "labelers", "feedgens": "feedgens"}
    for key, attr in overrides.items():
        if key in scenario.topology:
            setattr(config, attr, scenario.topology[key])
    return Runner(Sim(seed, config)).run(scenario)


# checks shared by assertions and tests


def oracle_mismatches(sim: Sim, max_items: int = 5) -> list[str]:
    """Compare app view aggregates with a brute-force pass over exported archives."""
    sim.settle()
    appview = sim.appview
    handles = {u.did: u.handle for u in sim.users.values()}
    oracle = Oracle(sim.export_repos(), frozenset(appview.takedowns), handles)
    problems: list[str] = []
    for uri, count in oracle.like_counts().items():
        got = appview.like_count(uri)
        if got != count:
            problems.append(f"likes {uri}: appview {got} oracle {count}")
    for did, expected in oracle.followers().items():
        got = appview.get_followers(did) if did in appview.known else []
        if got != expected:
            problems.append(f"followers {did}: appview {got} oracle {expected}")
    for root in oracle.thread_roots():
        expected = oracle.thread(root)
        try:
            got = _skeleton(appview.get_thread(root))
        except NotFound:
            problems.append(f"thread {root} missing")
            continue
        if got != expected:
            problems.append(f"thread {root} differs")
    for did in oracle.dids:
        if did not in appview.known:
            continue
        expected = oracle.timeline(did)
        got = [(p, r) for p, r in walk_timeline(sim, did)]
        if got != expected:
            problems.append(f"timeline {did}: appview {len(got)} items oracle {len(expected)}")
    return problems[:max_items] if max_items else problems


def _skeleton(node: dict[str, Any]) -> tuple[str, list]:
    uri = node["post"]["uri"] if "post" in node else node["uri"]
    return (uri, [_skeleton(c) for c in node["replies"]])


def walk_timeline(sim: Sim, did: str, limit: int = 17, ctx: ViewerContext | None = None):
    cursor = None
    while True:
        page = sim.appview.get_timeline(did, ctx, cursor, limit)
        for item in page["feed"]:
            reason = item["reason"]
            yield item["post"]["uri"], reason["repostBy"] if reason else None
        cursor = page["cursor"]
        if cursor is None:
            return


def replica_mismatches(sim: Sim) -> list[str]:
    sim.settle()
    problems = []
    for did, archive in sim.export_repos().items():
        user = sim.by_did[did]
        if did not in sim.relay.replicas:
            problems.append(f"relay has no replica of {user.name}")
            continue
        expected = dict(import_archive(archive).record_cids())
        if sim.relay.replica_records(did) != expected:
            problems.append(f"replica of {user.name} differs")
    return problems


def firehose_mismatches(sim: Sim) -> list[str]:
    """Replay the whole firehose from zero; it must rebuild every repo's record set."""
    sim.settle()
    sub = sim.relay.firehose_subscribe(0)
    state: dict[str, dict[str, Any]] = {}
    last = 0
    for item in sub.poll():
        if isinstance(item, OutdatedCursor):
            return ["firehose retention too small to replay from zero"]
        event: RepoEvent = item
        if event.seq <= last:
            return [f"sequence went backwards at {event.seq}"]
        last = event.seq
        records = state.setdefault(event.did, {})
        for op in event.ops:
            if op.cid is None:
                records.pop(op.path, None)
            else:
                records[op.path] = op.cid
    problems = []
    for did, archive in sim.export_repos().items():
        if state.get(did, {}) != dict(import_archive(archive).record_cids()):
            problems.append(f"firehose replay of {sim.by_did[did].name} differs")
    return problems


def _check(problems: list[str]) -> str:
    if problems:
        raise AssertionFailed("; ".join(problems))
    return "ok"


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise AssertionFailed(message)


# handlers


def _create_account(r: Runner, a: Action):
    user = r.sim.create_account(a.need("user"), a.int("pds", 1), a.get("handle"))
    return user.did


def _post(r: Runner, a: Action):
    uri = r.sim.post(a.need("user"), a.get("text", ""), images=a.int("images", 0))
    r.remember(a, uri)


def _reply(r: Runner, a: Action):
    uri = r.sim.post(a.need("user"), a.get("text", ""), reply_to=r.ref(a, "to"), images=a.int("images", 0))
    r.remember(a, uri)


def _like(r: Runner, a: Action):
    r.remember(a, r.sim.like(a.need("user"), r.ref(a, "post")))


def _repost(r: Runner, a: Action):
    r.remember(a, r.sim.repost(a.need("user"), r.ref(a, "post")))


def _delete(r: Runner, a: Action):
    r.sim.delete(a.need("user"), r.ref(a, "record"))


def _follow(r: Runner, a: Action):
    r.remember(a, r.sim.follow(a.need("user"), a.need("target")))


def _unfollow(r: Runner, a: Action):
    r.sim.unfollow(a.need("user"), a.need("target"))


def _block(r: Runner, a: Action):
    r.remember(a, r.sim.block(a.need("user"), a.need("target")))


def _unblock(r: Runner, a: Action):
    r.sim.unblock(a.need("user"), a.need("target"))


def _mute(r: Runner, a: Action):
    r.sim.mute(a.need("user"), a.need("target"))


def _unmute(r: Runner, a: Action):
    r.sim.unmute(a.need("user"), a.need("target"))


def _threadgate(r: Runner, a: Action):
    allow = a.names("allow")
    resolved = [f"list:{r.names[x[5:]]}" if x.startswith("list:") and x[5:] in r.names else x for x in allow]
    r.remember(a, r.sim.threadgate(a.need("user"), r.ref(a, "post"), resolved))


def _list(r: Runner, a: Action):
    uri = r.sim.create_list(a.need("user"), a.get("name", "list"), a.get("purpose", "modlist"))
    r.remember(a, uri)
    for member in a.names("members"):
        r.sim.list_add(a.need("user"), uri, member)


def _mute_list(r: Runner, a: Action):
    ctx = r.sim.viewer(a.need("user"))
    r.sim.update_prefs(a.need("user"), muteLists=[*ctx.mute_lists, r.ref(a, "list")])


def _profile(r: Runner, a: Action):
    r.sim.profile(a.need("user"), a.get("name", a.need("user")), a.get("description", ""))


def _widget(r: Runner, a: Action):
    r.remember(a, r.sim.widget(a.need("user")))


def _feed(r: Runner, a: Action):
    authors = a.names("authors")
    rule = FeedRule(a.get("hashtag"), frozenset(r.sim.user(n).did for n in authors) if authors else None)
    r.remember(a, r.sim.publish_feed(a.need("user"), a.get("name", "feed"), rule, a.int("feedgen", 1)))


def _migrate(r: Runner, a: Action):
    r.sim.migrate(a.need("user"), a.int("to"))


def _backup(r: Runner, a: Action):
    r.sim.backup(a.need("user"))


def _recover(r: Runner, a: Action):
    r.sim.recover(a.need("user"), a.int("to"))


def _kill(r: Runner, a: Action):
    r.sim.kill_pds(a.int("pds"))


def _restore(r: Runner, a: Action):
    r.sim.restore_pds(a.int("pds"))


def _partition(r: Runner, a: Action):
    r.sim.network.partition(r.sim.host_url(a.need("a")), r.sim.host_url(a.need("b")))


def _heal(r: Runner, a: Action):
    if "a" in a.args:
        r.sim.network.heal(r.sim.host_url(a.need("a")), r.sim.host_url(a.need("b")))
    else:
        r.sim.network.heal()


def _disconnect(r: Runner, a: Action):
    r.sim.relay.disconnect(r.sim.pds(a.int("pds")).url)


def _tick(r: Runner, a: Action):
    r.sim.clock.advance(a.int("seconds", 0), hours=a.int("hours", 0))


def _settle(r: Runner, a: Action):
    r.sim.settle()


def _check_handles(r: Runner, a: Action):
    r.sim.settle()
    r.sim.appview.check_handles()


def _break_handle(r: Runner, a: Action):
    r.sim.break_handle(a.need("user"))


def _fix_handle(r: Runner, a: Action):
    r.sim.fix_handle(a.need("user"))


def _takedown(r: Runner, a: Action):
    r.sim.appview.admin_takedown(r.subject(a, "target"), a.get("token", r.sim.config.admin_token))


def _untakedown(r: Runner, a: Action):
    r.sim.appview.reverse_takedown(r.subject(a, "target"), a.get("token", r.sim.config.admin_token))


def _label(r: Runner, a: Action):
    labeler = r.sim.labelers[a.int("labeler", 1) - 1]
    labeler.emit(r.subject(a, "target"), a.need("val"), neg=a.get("neg", "false") == "true")


def _subscribe_labeler(r: Runner, a: Action):
    r.sim.subscribe_labeler(a.need("user"), a.int("labeler", 1))


def _label_pref(r: Runner, a: Action):
    r.sim.label_pref(a.need("user"), a.need("val"), a.need("pref"))


def _assert_oracle(r: Runner, a: Action):
    return _check(oracle_mismatches(r.sim))


def _assert_replicas(r: Runner, a: Action):
    return _check(replica_mismatches(r.sim))


def _assert_firehose(r: Runner, a: Action):
    return _check(firehose_mismatches(r.sim))


def _assert_handle(r: Runner, a: Action):
    r.sim.settle()
    user = r.sim.user(a.need("user"))
    state = r.sim.appview.handle_status(user.did)
    _expect(state == a.need("state"), f"handle of {user.name} is {state}")
    shown = r.sim.appview.get_profile(user.did)["handle"]
    if state == "invalid":
        _expect(shown == INVALID_HANDLE, f"profile shows {shown} for an invalid handle")
    return state


def _assert_did(r: Runner, a: Action):
    user = r.sim.user(a.need("user"))
    doc = r.sim.resolve(user.name)
    expected = r.sim.pds(a.int("pds")).url
    _expect(doc.pds_url == expected, f"{user.name} resolves to {doc.pds_url}, expected {expected}")
    if "handle" in a.args:
        _expect(doc.handle == a.args["handle"], f"{user.name} has handle {doc.handle}")
    return doc.pds_url


def _viewer_ctx(r: Runner, a: Action) -> ViewerContext:
    viewer = a.get("viewer")
    return r.sim.viewer(viewer) if viewer else ViewerContext()


def _visible_uris(r: Runner, a: Action, where: str, ctx: ViewerContext) -> set[str]:
    appview = r.sim.appview
    if where == "timeline":
        return {uri for uri, _ in walk_timeline(r.sim, ctx.viewer, ctx=ctx)}
    if where == "feed":
        return {item["post"]["uri"] for item in appview.get_feed(r.ref(a, "feed"), ctx, None, 1000)["feed"]}
    if where == "thread":
        try:
            tree = appview.get_thread(r.ref(a, "root"), ctx)
        except AppViewError:
            return set()
        out: set[str] = set()

        def walk(node):
            if "post" in node:
                out.add(node["post"]["uri"])
            for child in node["replies"]:
                walk(child)

        walk(tree)
        return out
    raise AssertionFailed(f"unknown where={where}")


def _assert_visible(r: Runner, a: Action, want: bool):
    r.sim.settle()
    ctx = _viewer_ctx(r, a)
    uri = r.ref(a, "post")
    seen = uri in _visible_uris(r, a, a.get("where", "thread"), ctx)
    _expect(seen == want, f"{uri} {'missing' if want else 'visible'} for {a.get('viewer', 'anyone')}")
    return "visible" if seen else "hidden"


def _assert_likes(r: Runner, a: Action):
    r.sim.settle()
    got = r.sim.appview.like_count(r.ref(a, "post"))
    _expect(got == a.int("count"), f"like count {got}")
    return str(got)


def _assert_followers(r: Runner, a: Action):
    r.sim.settle()
    user = r.sim.user(a.need("user"))
    got = r.sim.appview.get_followers(user.did)
    expected = sorted(r.sim.user(n).did for n in a.names("set"))
    _expect(got == expected, f"followers of {user.name}: {[r.sim.by_did[d].name for d in got]}")
    return ",".join(r.sim.by_did[d].name for d in got)


def _assert_labels(r: Runner, a: Action):
    r.sim.settle()
    view = r.sim.appview.get_post(r.ref(a, "post"), _viewer_ctx(r, a))
    expected = sorted(a.names("labels"))
    _expect(view["labels"] == expected, f"labels {view['labels']}")
    return ",".join(view["labels"])


def _assert_records(r: Runner, a: Action):
    user = r.sim.user(a.need("user"))
    repo = import_archive(r.sim.home(user).sync_get_repo(user.did))
    got = sum(1 for _ in repo.record_cids())
    _expect(got == a.int("count"), f"{user.name} has {got} records")
    return str(got)


def _assert_resolves(r: Runner, a: Action):
    try:
        doc = r.sim.resolve(a.need("user"))
    except IdentityError as exc:
        raise AssertionFailed(f"resolution failed: {exc}") from exc
    return doc.did


HANDLERS = {
    "create-account": _create_account,
    "post": _post,
    "reply": _reply,
    "like": _like,
    "repost": _repost,
    "delete": _delete,
    "follow": _follow,
    "unfollow": _unfollow,
    "block": _block,
    "unblock": _unblock,
    "mute": _mute,
    "unmute": _unmute,
    "threadgate": _threadgate,
    "list": _list,
    "mute-list": _mute_list,
    "profile": _profile,
    "widget": _widget,
    "feed": _feed,
    "migrate": _migrate,
    "backup": _backup,
    "recover": _recover,
    "kill-pds": _kill,
    "restore-pds": _restore,
    "partition": _partition,
    "heal": _heal,
    "disconnect": _disconnect,
    "tick": _tick,
    "settle": _settle,
    "check-handles": _check_handles,
    "break-handle": _break_handle,
    "fix-handle": _fix_handle,
    "takedown": _takedown,
    "untakedown": _untakedown,
    "label": _label,
    "subscribe-labeler": _subscribe_labeler,
    "label-pref": _label_pref,
    "assert-oracle": _assert_oracle,
    "assert-replicas": _assert_replicas,
    "assert-firehose": _assert_firehose,
    "assert-handle": _assert_handle,
    "assert-did": _assert_did,
    "assert-visible": lambda r, a: _assert_visible(r, a, True),
    "assert-hidden": lambda r, a: _assert_visible(r, a, False),
    "assert-likes": _assert_likes,
    "assert-followers": _assert_followers,
    "assert-labels": _assert_labels,
    "assert-records": _assert_records,
    "assert-resolves": _assert_resolves,
}
