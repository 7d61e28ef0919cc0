"""The whole network in one process: directory, PDSes, relay, app view and services."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from atnet import lexicon
from atnet.appview import AppView, ViewerContext
from atnet.clock import VirtualClock
from atnet.crypto import Keypair
from atnet.feedgen import FeedGenerator, FeedRule
from atnet.identity import PlcOperation, resolve_did
from atnet.labeler import Labeler, Rule
from atnet.lexicon import blob_ref, parse_at_uri, strong_ref
from atnet.net import PLC_URL, Network
from atnet.pds import MIGRATED_AWAY, PDS, PasswordHasher, Unauthorized, Write
from atnet.plc import PlcDirectory
from atnet.relay import Relay, allow_all, denylist_policy

logger = logging.getLogger(__name__)

RELAY_URL = "https://relay.test"
APPVIEW_URL = "https://appview.test"


@dataclass
class SimConfig:
    pds_count: int = 3
    labelers: int = 1
    feedgens: int = 1
    retention: int = 100_000
    pds_retention: int = 100_000
    hash_profile: str = "fast"
    session_ttl: float = 2 * 3600
    denylist: list[str] = field(default_factory=list)
    label_rules: list[dict[str, Any]] = field(default_factory=lambda: [{"val": "spam", "text_contains": "BUYNOW"}])
    admin_token: str = "operator-secret"
    settle_rounds: int = 10_000
    port: int = 8700

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SimConfig:
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> SimConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class User:
    name: str
    did: str
    handle: str
    password: str
    pds: int
    rotation_key: Keypair
    token: str | None = None
    backup: tuple[bytes, list[bytes]] | None = None
    follows: dict[str, str] = field(default_factory=dict)
    blocks: dict[str, str] = field(default_factory=dict)


class Sim:
    """Builds the topology and offers user-level actions on it.

    Nothing moves on its own: ``settle`` pumps every stream until all
    services are caught up.
    """

    def __init__(self, seed: int = 0, config: SimConfig | None = None):
        self.seed = seed
        self.config = config or SimConfig()
        self.rng = random.Random(f"sim:{seed}")
        self.clock = VirtualClock()
        self.network = Network(self.clock)
        self.plc = PlcDirectory()
        self.network.serve(PLC_URL, self.plc)
        hasher = PasswordHasher(self.config.hash_profile)
        self.pdses = [
            PDS(
                f"https://pds{i}.test",
                self.network,
                rng=random.Random(f"pds{i}:{seed}"),
                retention=self.config.pds_retention,
                hasher=hasher,
                session_ttl=self.config.session_ttl,
            )
            for i in range(1, self.config.pds_count + 1)
        ]
        policy = denylist_policy(self.config.denylist) if self.config.denylist else allow_all
        self.relay = Relay(RELAY_URL, self.network, retention=self.config.retention, policy=policy)
        for pds in self.pdses:
            self.relay.register_pds(pds.url)
        rules = [
            Rule(r["val"], r.get("collection", lexicon.POST), r.get("text_contains"),
                 frozenset(r["authors"]) if r.get("authors") else None)
            for r in self.config.label_rules
        ]
        self.labelers = [
            Labeler(f"https://labeler{i}.test", self.network, Keypair.generate(self.rng), rules,
                    relay_url=RELAY_URL)
            for i in range(1, self.config.labelers + 1)
        ]
        self.feedgens = [
            FeedGenerator(f"https://feeds{i}.test", self.network, Keypair.generate(self.rng), relay_url=RELAY_URL)
            for i in range(1, self.config.feedgens + 1)
        ]
        self.appview = AppView(APPVIEW_URL, self.network, relay_url=RELAY_URL, admin_token=self.config.admin_token)
        for labeler in self.labelers:
            self.appview.subscribe_labeler(labeler.did)
        self.users: dict[str, User] = {}
        self.by_did: dict[str, User] = {}

    # plumbing

    def pds(self, index: int) -> PDS:
        """1-based, matching the host names."""
        return self.pdses[index - 1]

    def user(self, name: str) -> User:
        try:
            return self.users[name]
        except KeyError:
            raise KeyError(f"no such user {name!r}") from None

    def home(self, user: User) -> PDS:
        return self.pds(user.pds)

    def token(self, user: User) -> str:
        pds = self.home(user)
        if user.token is not None:
            try:
                pds.authenticate(user.token)
                return user.token
            except Unauthorized:
                pass
        user.token = pds.create_session(user.did, user.password)
        return user.token

    def settle(self) -> int:
        """Pump relay, services and app view until nothing moves. Returns rounds."""
        for rounds in range(1, self.config.settle_rounds + 1):
            self.clock.tick()
            moved = self.relay.poll(rng=self.rng)
            for service in [*self.labelers, *self.feedgens]:
                moved += service.run()
            moved += self.appview.run()
            if not moved:
                return rounds
        raise RuntimeError("network did not settle")

    def _now(self) -> str:
        return self.clock.iso(self.clock.tick())

    def write(self, name: str, writes: list[Write]):
        user = self.user(name)
        self.clock.tick()
        return self.home(user).write_records(self.token(user), writes)

    def record_ref(self, uri: str) -> dict[str, Any]:
        """Strong ref to a record, read from whichever PDS hosts it now."""
        at = parse_at_uri(uri)
        owner = self.by_did[at.did]
        _, cid = self.home(owner).get_record(at.did, at.collection, at.rkey)
        return strong_ref(uri, cid)

    # accounts

    def create_account(self, name: str, pds: int = 1, handle: str | None = None, password: str | None = None) -> User:
        handle = handle or f"{name}.test"
        password = password or f"pw-{name}"
        rotation = Keypair.generate(self.rng)
        self.clock.tick()
        did = self.pds(pds).create_account(handle, password, rotation_keys=[rotation.public_key])
        # the user controls DNS for their own domain
        self.network.set_txt(f"_atproto.{handle}", [f"did={did}"])
        user = User(name, did, handle, password, pds, rotation)
        self.users[name] = user
        self.by_did[did] = user
        return user

    def viewer(self, name: str | None) -> ViewerContext:
        if name is None:
            return ViewerContext()
        user = self.user(name)
        return ViewerContext.from_preferences(user.did, self.home(user).get_preferences(self.token(user)))

    def update_prefs(self, name: str, **changes: Any) -> None:
        user = self.user(name)
        pds = self.home(user)
        prefs = pds.get_preferences(self.token(user))
        prefs.update(changes)
        pds.put_preferences(self.token(user), prefs)

    # records

    def post(self, name: str, text: str, reply_to: str | None = None, images: int = 0,
             rkey: str | None = None) -> str:
        record: dict[str, Any] = {"text": text, "createdAt": self._now()}
        if reply_to is not None:
            parent = self.record_ref(reply_to)
            at = parse_at_uri(reply_to)
            parent_value, _ = self.home(self.by_did[at.did]).get_record(at.did, at.collection, at.rkey)
            root = parent_value["reply"]["root"] if "reply" in parent_value else parent
            record["reply"] = {"root": root, "parent": parent}
        if images:
            user = self.user(name)
            refs = []
            for i in range(images):
                data = self.rng.randbytes(64)
                cid = self.home(user).put_blob(self.token(user), data)
                refs.append({"image": blob_ref(cid, "image/png", len(data)), "alt": f"image {i + 1}"})
            record["embed"] = {"images": refs}
        return self.write(name, [Write("create", lexicon.POST, rkey, record)]).uri

    def like(self, name: str, uri: str) -> str:
        record = {"subject": self.record_ref(uri), "createdAt": self._now()}
        return self.write(name, [Write("create", lexicon.LIKE, None, record)]).uri

    def repost(self, name: str, uri: str) -> str:
        record = {"subject": self.record_ref(uri), "createdAt": self._now()}
        return self.write(name, [Write("create", lexicon.REPOST, None, record)]).uri

    def follow(self, name: str, target: str) -> str:
        subject = self.user(target).did
        record = {"subject": subject, "createdAt": self._now()}
        uri = self.write(name, [Write("create", lexicon.FOLLOW, None, record)]).uri
        self.user(name).follows[target] = uri
        return uri

    def unfollow(self, name: str, target: str) -> None:
        self.delete(name, self.user(name).follows.pop(target))

    def block(self, name: str, target: str) -> str:
        record = {"subject": self.user(target).did, "createdAt": self._now()}
        uri = self.write(name, [Write("create", lexicon.BLOCK, None, record)]).uri
        self.user(name).blocks[target] = uri
        return uri

    def unblock(self, name: str, target: str) -> None:
        self.delete(name, self.user(name).blocks.pop(target))

    def threadgate(self, name: str, post_uri: str, allow: list[str]) -> str:
        rules = []
        for rule in allow:
            kind, _, target = rule.partition(":")
            rules.append({"rule": kind, "list": target} if target else {"rule": kind})
        record = {"post": post_uri, "allow": rules, "createdAt": self._now()}
        rkey = parse_at_uri(post_uri).rkey
        return self.write(name, [Write("create", lexicon.THREADGATE, rkey, record)]).uri

    def create_list(self, name: str, title: str, purpose: str = "modlist") -> str:
        record = {"name": title, "purpose": purpose, "createdAt": self._now()}
        return self.write(name, [Write("create", lexicon.LIST, None, record)]).uri

    def list_add(self, name: str, list_uri: str, target: str) -> str:
        record = {"subject": self.user(target).did, "list": list_uri, "createdAt": self._now()}
        return self.write(name, [Write("create", lexicon.LISTITEM, None, record)]).uri

    def profile(self, name: str, display_name: str, description: str = "") -> str:
        user = self.user(name)
        try:
            self.home(user).get_record(user.did, lexicon.PROFILE, "self")
            action = "update"
        except KeyError:
            action = "create"
        record = {"displayName": display_name, "description": description}
        return self.write(name, [Write(action, lexicon.PROFILE, "self", record)]).uri

    def widget(self, name: str, payload: dict[str, Any] | None = None) -> str:
        """A record in a collection nobody in the network has a schema for."""
        record = {"$type": "com.example.widget", "createdAt": self._now(), **(payload or {"knobs": 3})}
        return self.write(name, [Write("create", "com.example.widget", None, record)]).uri

    def delete(self, name: str, uri: str) -> None:
        at = parse_at_uri(uri)
        if at.did != self.user(name).did:
            raise PermissionError(f"{name} does not own {uri}")
        self.write(name, [Write("delete", at.collection, at.rkey)])

    def publish_feed(self, name: str, display_name: str, rule: FeedRule, feedgen: int = 1) -> str:
        gen = self.feedgens[feedgen - 1]
        record = {"did": gen.did, "displayName": display_name, "createdAt": self._now()}
        uri = self.write(name, [Write("create", lexicon.GENERATOR, None, record)]).uri
        gen.register_feed(uri, rule)
        return uri

    # moderation preferences (private, stored on the user's PDS)

    def mute(self, name: str, target: str) -> None:
        muted = set(self.viewer(name).muted) | {self.user(target).did}
        self.update_prefs(name, muted=sorted(muted))

    def unmute(self, name: str, target: str) -> None:
        muted = set(self.viewer(name).muted) - {self.user(target).did}
        self.update_prefs(name, muted=sorted(muted))

    def subscribe_labeler(self, name: str, labeler: int = 1) -> None:
        labelers = [*self.viewer(name).labelers, self.labelers[labeler - 1].did]
        self.update_prefs(name, labelers=sorted(set(labelers)))

    def label_pref(self, name: str, val: str, pref: str) -> None:
        prefs = dict(self.viewer(name).label_prefs)
        prefs[val] = pref
        self.update_prefs(name, labelPrefs=prefs)

    # identity and hosting

    def _plc_update(self, user: User, *, pds_url: str | None = None, signing_key: str | None = None,
                    rotation_key: str | None = None, handle: str | None = None) -> PlcOperation:
        log = self.plc.accepted_log(user.did)
        doc = log[-1].to_document(user.did)
        rotation = [user.rotation_key.public_key]
        rotation.append(rotation_key or doc.rotation_keys[-1])
        return PlcOperation.create(
            user.rotation_key,
            prev=log[-1].cid,
            handle=handle or doc.handle,
            pds_url=pds_url or doc.pds_url,
            signing_key=signing_key or doc.signing_key,
            rotation_keys=rotation,
        )

    def backup(self, name: str) -> None:
        """User-held copy of repo and blobs, as a client app would keep."""
        user = self.user(name)
        pds = self.home(user)
        user.backup = (pds.sync_get_repo(user.did), pds.export_blobs(user.did))

    def migrate(self, name: str, to: int) -> None:
        user = self.user(name)
        old = self.home(user)
        archive, blobs = old.sync_get_repo(user.did), old.export_blobs(user.did)
        self._move(user, to, archive, blobs)
        old.deactivate(self.token(user), MIGRATED_AWAY)
        user.pds = to
        user.token = None

    def recover(self, name: str, to: int) -> None:
        """Re-host from the user's own backup; the old PDS is not consulted."""
        user = self.user(name)
        if user.backup is None:
            raise RuntimeError(f"{name} has no backup")
        self._move(user, to, *user.backup)
        user.pds = to
        user.token = None

    def _move(self, user: User, to: int, archive: bytes, blobs: list[bytes]) -> None:
        target = self.pds(to)
        keys = target.reserve_keys(user.did)
        update = self._plc_update(user, pds_url=target.url, signing_key=keys["signing_key"],
                                  rotation_key=keys["rotation_key"])
        self.clock.tick()
        target.migrate_in(archive, blobs, update, user.password)

    def resolve(self, name: str):
        return resolve_did(self.user(name).did, self.network.resolver(APPVIEW_URL))

    def kill_pds(self, index: int) -> None:
        self.network.kill(self.pds(index).url)

    def restore_pds(self, index: int) -> None:
        self.network.restore(self.pds(index).url)

    def break_handle(self, name: str) -> None:
        self.network.clear_txt(f"_atproto.{self.user(name).handle}")

    def fix_handle(self, name: str) -> None:
        user = self.user(name)
        self.network.set_txt(f"_atproto.{user.handle}", [f"did={user.did}"])

    def host_url(self, host: str) -> str:
        """Short names used in scenarios: pds1, relay, appview, labeler1, feeds1, plc."""
        if host == "plc":
            return PLC_URL
        return f"https://{host}.test"

    # exports for the oracle

    def export_repos(self) -> dict[str, bytes]:
        """Current archive of every account, fetched from its current host."""
        out = {}
        for did in sorted(self.by_did):
            user = self.by_did[did]
            out[did] = self.home(user).sync_get_repo(did)
        return out
