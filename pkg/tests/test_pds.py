import pytest

from atnet import codec
from atnet.events import verify_event
from atnet.identity import PlcOperation, resolve_did, verify_handle
from atnet.lexicon import LIKE, POST, strong_ref
from atnet.net import PLC_URL
from atnet.pds import (
    MIGRATED_AWAY,
    BadCredentials,
    BlobNotFound,
    DirectoryRejected,
    HandleTaken,
    ImportFailed,
    InvalidWrite,
    LexiconViolation,
    PasswordHasher,
    TidClock,
    TooLarge,
    Unauthorized,
    UnknownDid,
    Write,
    encode_tid,
)
from atnet.repo import PathNotFound, import_archive
from atnet.stream import FutureCursor, OutdatedCursor

from conftest import keypair
from helpers import post_write, signup, world


@pytest.fixture
def one():
    network, plc, (pds,) = world(1)
    return network, plc, pds


def test_create_account_resolves(one):
    network, plc, pds = one
    did = pds.create_account("alice.pds1.test", "pw")
    doc = resolve_did(did, network.resolver())
    assert doc.pds_url == "https://pds1.test" and doc.handle == "alice.pds1.test"
    assert verify_handle("alice.pds1.test", did, network.resolver()).verified
    assert pds.events.seq == 1
    with pytest.raises(HandleTaken):
        pds.create_account("ALICE.pds1.test", "pw")


def test_own_domain_handle_with_txt(one):
    network, plc, pds = one
    did = pds.create_account("nytimes.test", "pw")
    assert not verify_handle("nytimes.test", did, network.resolver()).verified
    network.set_txt("_atproto.nytimes.test", [f"did={did}"])
    assert verify_handle("nytimes.test", did, network.resolver()).verified


def test_directory_down(one):
    network, plc, pds = one
    network.kill(PLC_URL)
    with pytest.raises(DirectoryRejected):
        pds.create_account("bob.pds1.test", "pw")


def test_sessions(one):
    network, plc, pds = one
    did = pds.create_account("alice.pds1.test", "pw")
    with pytest.raises(BadCredentials):
        pds.create_session("alice.pds1.test", "nope")
    with pytest.raises(BadCredentials):
        pds.create_session("ghost.pds1.test", "pw")
    token = pds.create_session("alice.pds1.test", "pw")
    pds.write_records(token, [post_write("hi")])
    network.clock.advance(hours=2)
    with pytest.raises(Unauthorized):
        pds.write_records(token, [post_write("late")])
    with pytest.raises(Unauthorized):
        pds.write_records("bogus", [post_write("x")])
    assert pds.create_session(did, "pw")


def test_password_hasher():
    h = PasswordHasher("fast")
    salt = b"s" * 16
    assert h.verify("pw", salt, h.hash("pw", salt))
    assert not h.verify("px", salt, h.hash("pw", salt))


def test_tids_sort_and_are_13_chars():
    from atnet.clock import VirtualClock

    clock = VirtualClock()
    tids = TidClock(clock, 7)
    keys = [tids.next() for _ in range(50)]
    clock.advance(5)
    keys.append(tids.next())
    assert keys == sorted(keys) and len(set(keys)) == 51
    assert all(len(k) == 13 for k in keys)
    assert encode_tid(0) == "2222222222222"


def test_writes_and_events(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    result = pds.write_records(token, [post_write("hello")])
    assert result.uri.startswith(f"at://{did}/{POST}/")
    value, cid = pds.get_record(did, POST, result.uri.rsplit("/", 1)[1])
    assert value["text"] == "hello" and value["$type"] == POST and cid == result.cid
    event = pds.events.read(1)[0][0]
    assert [op.action for op in event.ops] == ["create"]
    assert verify_event(event, resolve_did(did, network.resolver()).signing_key) is None


def test_batch_is_one_commit(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    p = pds.write_records(token, [post_write("p")])
    ref = strong_ref(p.uri, p.cid)
    like = {"subject": ref, "createdAt": "2024-01-01T00:00:00Z"}
    pds.write_records(token, [Write("create", LIKE, "old", like)])
    seq = pds.seq
    pds.write_records(token, [Write("create", LIKE, "new", like), Write("delete", LIKE, "old")])
    assert pds.seq == seq + 1
    assert [(op.action, op.path) for op in pds.events.read(seq)[0][0].ops] == [
        ("create", f"{LIKE}/new"), ("delete", f"{LIKE}/old")]


def test_write_rejections(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    with pytest.raises(LexiconViolation) as err:
        pds.write_records(token, [post_write("x" * 301)])
    assert err.value.violations[0].code == "text-too-long"
    pds.write_records(token, [post_write("a", "k1")])
    with pytest.raises(InvalidWrite):
        pds.write_records(token, [post_write("again", "k1")])
    with pytest.raises(PathNotFound):
        pds.write_records(token, [Write("delete", POST, "missing")])
    with pytest.raises(PathNotFound):
        pds.write_records(token, [Write("update", POST, "missing", {"text": "u", "createdAt": "2024-01-01T00:00:00Z"})])
    with pytest.raises(InvalidWrite):
        pds.write_records(token, [Write("update", POST, "k1", {"text": "u", "createdAt": "2024-01-01T00:00:00Z"}),
                                  Write("delete", POST, "k1")])
    with pytest.raises(InvalidWrite):
        pds.write_records(token, [Write("replace", POST, "k1")])


def test_unknown_collection_accepted(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    pds.write_records(token, [Write("create", "com.example.widget", "w", {"spin": 3})])
    assert pds.get_record(did, "com.example.widget", "w")[0] == {"$type": "com.example.widget", "spin": 3}


def test_stream_cursors(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    for i in range(4):
        pds.write_records(token, [post_write(str(i))])
    events, outdated = pds.events.read(0)
    assert [e.seq for e in events] == [1, 2, 3, 4, 5] and outdated is None
    sub = pds.subscribe_repos(3)
    assert [e.seq for e in sub.poll()] == [4, 5]
    assert sub.poll() == []
    pds.write_records(token, [post_write("live")])
    assert [e.seq for e in sub.poll()] == [6]
    with pytest.raises(FutureCursor):
        pds.subscribe_repos(99)


def test_retention_too_old():
    network, plc, (pds,) = world(1, retention=2)
    did, token = signup(pds, "alice")
    for i in range(5):
        pds.write_records(token, [post_write(str(i))])
    items = pds.subscribe_repos(0).poll()
    assert isinstance(items[0], OutdatedCursor)
    assert [e.seq for e in items[1:]] == [5, 6]


def test_sync(one):
    network, plc, pds = one
    dids = [signup(pds, n)[0] for n in ("a", "b", "c")]
    assert [d for d, _ in pds.sync_list_repos()] == dids
    repo = import_archive(pds.sync_get_repo(dids[0]))
    assert repo.head == pds.accounts[dids[0]].repo.head
    with pytest.raises(UnknownDid):
        pds.sync_get_repo("did:plc:aaaaaaaaaaaaaaaaaaaaaaaa")


def test_blobs(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    cid = pds.put_blob(token, b"\x89PNG")
    assert pds.get_blob(did, cid) == b"\x89PNG"
    with pytest.raises(BlobNotFound):
        pds.get_blob(did, codec.cid_of(b"other", codec.RAW))
    pds.blob_cap = 3
    with pytest.raises(TooLarge):
        pds.put_blob(token, b"1234")


def test_preferences_are_private(one):
    network, plc, pds = one
    did, token = signup(pds, "alice")
    pds.put_preferences(token, {"muted": ["did:plc:x"]})
    assert pds.get_preferences(token) == {"muted": ["did:plc:x"]}
    assert all("muted" not in str(e.ops) for e in pds.events.read(0)[0])


def migrate(network, src, dst, did, token, user_key):
    archive = src.sync_get_repo(did)
    keys = dst.reserve_keys(did)
    head = network.connect(PLC_URL).get_audit_log(did)[-1]
    op = PlcOperation.create(user_key, prev=head.cid, handle=head.handle, pds_url=dst.url,
                             signing_key=keys["signing_key"], rotation_keys=[user_key.public_key, keys["rotation_key"]])
    dst.migrate_in(archive, src.export_blobs(did), op, "pw2")
    src.deactivate(token, MIGRATED_AWAY)


def test_migration_keeps_identity():
    network, plc, (a, b) = world(2)
    user = keypair("user")
    did = a.create_account("alice.test", "pw", rotation_keys=[user.public_key])
    network.set_txt("_atproto.alice.test", [f"did={did}"])
    token = a.create_session(did, "pw")
    for i in range(3):
        a.write_records(token, [post_write(str(i))])
    before = a.accounts[did].repo.records()
    old_key = resolve_did(did, network.resolver()).signing_key
    migrate(network, a, b, did, token, user)
    doc = resolve_did(did, network.resolver())
    assert doc.pds_url == "https://pds2.test" and doc.handle == "alice.test"
    assert doc.signing_key != old_key
    assert b.accounts[did].repo.records() == before
    event = b.events.read(0)[0][-1]
    assert event.ops == () and verify_event(event, doc.signing_key) is None
    new_token = b.create_session("alice.test", "pw2")
    b.write_records(new_token, [post_write("from b")])
    assert verify_event(b.events.read(0)[0][-1], doc.signing_key) is None
    with pytest.raises(UnknownDid):
        a.sync_get_repo(did)


def test_migration_rejections():
    network, plc, (a, b) = world(2)
    user = keypair("user")
    did = a.create_account("alice.test", "pw", rotation_keys=[user.public_key])
    keys = b.reserve_keys(did)
    head = plc.get_audit_log(did)[-1]
    stranger = keypair("stranger")
    op = PlcOperation.create(stranger, prev=head.cid, handle=head.handle, pds_url=b.url,
                             signing_key=keys["signing_key"], rotation_keys=[stranger.public_key])
    with pytest.raises(DirectoryRejected):
        b.migrate_in(a.sync_get_repo(did), [], op, "pw")
    with pytest.raises(ImportFailed):
        b.migrate_in(b"junk", [], op, "pw")
    wrong_target = PlcOperation.create(user, prev=head.cid, handle=head.handle, pds_url="https://elsewhere.test",
                                       signing_key=keys["signing_key"], rotation_keys=[user.public_key])
    with pytest.raises(DirectoryRejected):
        b.migrate_in(a.sync_get_repo(did), [], wrong_target, "pw")


def test_recovery_from_backup_after_kill():
    network, plc, (a, b) = world(2)
    user = keypair("user")
    did = a.create_account("dave.test", "pw", rotation_keys=[user.public_key])
    token = a.create_session(did, "pw")
    a.write_records(token, [post_write("keep me")])
    backup = a.sync_get_repo(did)
    network.kill(a.url)
    keys = b.reserve_keys(did)
    head = plc.get_audit_log(did)[-1]
    op = PlcOperation.create(user, prev=head.cid, handle=head.handle, pds_url=b.url,
                             signing_key=keys["signing_key"], rotation_keys=[user.public_key])
    b.migrate_in(backup, [], op, "pw")
    assert [v["text"] for v in b.accounts[did].repo.records().values()] == ["keep me"]
    assert resolve_did(did, network.resolver()).pds_url == b.url


def test_well_known_handle(one):
    network, plc, pds = one
    did = pds.create_account("alice.pds1.test", "pw")
    assert pds.well_known("alice.pds1.test", "/.well-known/atproto-did") == did
    assert pds.well_known("nobody.pds1.test", "/.well-known/atproto-did") is None
