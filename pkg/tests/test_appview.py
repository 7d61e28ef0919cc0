import random

import pytest

from atnet.appview import (
    INVALID_HANDLE,
    GeneratorUnavailable,
    NotFound,
    Takedown,
    Unauthorized,
    UnknownDid,
    ViewerContext,
)
from atnet.feedgen import FeedRule
from atnet.identity import INVALID, UNCHECKED, VERIFIED
from atnet.lexicon import POST
from atnet.sim import Sim, SimConfig
from atnet.sim.scenario import walk_timeline


@pytest.fixture
def sim():
    s = Sim(1, SimConfig(pds_count=2))
    for i, name in enumerate(["alice", "bob", "carol", "dave"]):
        s.create_account(name, pds=i % 2 + 1)
    s.settle()
    return s


def did(sim, name):
    return sim.user(name).did


def tree_uris(node):
    if "post" not in node:
        return []
    return [node["post"]["uri"]] + [u for child in node["replies"] for u in tree_uris(child)]


def test_like_inverse_and_idempotence(sim):
    p = sim.post("alice", "hello")
    sim.settle()
    like = sim.like("bob", p)
    sim.settle()
    assert sim.appview.like_count(p) == 1
    event = sim.relay.firehose.read(sim.relay.firehose.seq - 1)[0][0]
    sim.appview.ingest_event(event)
    sim.appview.ingest_event(event)
    assert sim.appview.like_count(p) == 1
    sim.delete("bob", like)
    sim.settle()
    assert sim.appview.like_count(p) == 0
    assert sim.appview.get_likes(p) == []


def test_thread_depth_three(sim):
    a = sim.post("alice", "root")
    b = sim.post("bob", "reply", reply_to=a)
    c = sim.post("carol", "nested", reply_to=b)
    sim.settle()
    thread = sim.appview.get_thread(c)
    assert thread["post"]["uri"] == a
    assert thread["replies"][0]["post"]["uri"] == b
    assert thread["replies"][0]["replies"][0]["post"]["uri"] == c
    assert thread["post"]["replyCount"] == 1


def test_threadgate_following_only(sim):
    sim.follow("alice", "bob")
    root = sim.post("alice", "gated")
    sim.threadgate("alice", root, ["following"])
    ok = sim.post("bob", "friend", reply_to=root)
    no = sim.post("dave", "stranger", reply_to=root)
    own = sim.post("alice", "self reply", reply_to=root)
    sim.settle()
    uris = tree_uris(sim.appview.get_thread(root))
    assert ok in uris and own in uris and no not in uris
    with pytest.raises(NotFound):
        sim.appview.get_thread(f"at://{did(sim, 'alice')}/{POST}/nope")


def test_threadgate_applies_to_earlier_replies(sim):
    root = sim.post("alice", "later gate")
    early = sim.post("dave", "early", reply_to=root)
    sim.settle()
    assert early in tree_uris(sim.appview.get_thread(root))
    sim.threadgate("alice", root, ["following"])
    sim.settle()
    assert early not in tree_uris(sim.appview.get_thread(root))


def test_threadgate_list_and_mention(sim):
    lst = sim.create_list("alice", "pals", "curatelist")
    sim.list_add("alice", lst, "carol")
    root = sim.post("alice", "hey @dave.test")
    sim.threadgate("alice", root, [f"list:{lst}", "mention"])
    c = sim.post("carol", "listed", reply_to=root)
    d = sim.post("dave", "mentioned", reply_to=root)
    b = sim.post("bob", "neither", reply_to=root)
    sim.settle()
    uris = tree_uris(sim.appview.get_thread(root))
    assert c in uris and d in uris and b not in uris


def test_block_hides_interactions_for_everyone(sim):
    root = sim.post("alice", "root")
    reply = sim.post("bob", "reply", reply_to=root)
    sim.like("bob", root)
    sim.follow("bob", "alice")
    sim.settle()
    sim.block("bob", "alice")
    sim.settle()
    for viewer in [None, "alice", "bob", "carol"]:
        assert reply not in tree_uris(sim.appview.get_thread(root, sim.viewer(viewer)))
    assert sim.appview.like_count(root) == 0
    assert did(sim, "bob") not in sim.appview.get_followers(did(sim, "alice"))
    sim.unblock("bob", "alice")
    sim.settle()
    assert reply in tree_uris(sim.appview.get_thread(root))
    assert sim.appview.like_count(root) == 1


def test_blocked_author_hidden_from_blocker(sim):
    p = sim.post("carol", "hi")
    sim.block("alice", "carol")
    sim.settle()
    assert sim.appview.get_thread(p, sim.viewer("alice"))["collapsed"] == "blocked"
    assert "post" in sim.appview.get_thread(p, sim.viewer("bob"))


def test_mute_is_local(sim):
    p = sim.post("dave", "noise")
    sim.mute("alice", "dave")
    sim.follow("alice", "dave")
    sim.follow("bob", "dave")
    sim.settle()
    assert sim.appview.get_thread(p, sim.viewer("alice"))["collapsed"] == "muted"
    assert "post" in sim.appview.get_thread(p, sim.viewer("bob"))
    assert sim.appview.get_timeline(did(sim, "alice"), sim.viewer("alice"))["feed"] == []
    assert len(sim.appview.get_timeline(did(sim, "bob"), sim.viewer("bob"))["feed"]) == 1
    sim.unmute("alice", "dave")
    assert len(sim.appview.get_timeline(did(sim, "alice"), sim.viewer("alice"))["feed"]) == 1


def test_mute_list(sim):
    lst = sim.create_list("alice", "quiet")
    sim.list_add("alice", lst, "dave")
    p = sim.post("dave", "noise")
    sim.update_prefs("alice", muteLists=[lst])
    sim.settle()
    assert sim.appview.get_thread(p, sim.viewer("alice"))["collapsed"] == "muted"


def test_timeline_merge_and_pages(sim):
    sim.follow("alice", "bob")
    sim.follow("alice", "carol")
    expected = []
    for i in range(23):
        expected.append(sim.post(random.Random(i).choice(["bob", "carol"]), f"n{i}"))
    sim.post("dave", "not followed")
    sim.settle()
    feed = sim.appview.get_timeline(did(sim, "alice"))["feed"]
    times = [item["post"]["createdAt"] for item in feed]
    assert times == sorted(times, reverse=True)
    assert [item["post"]["uri"] for item in feed] == expected[::-1]
    for limit in (1, 4, 7, 50):
        assert list(walk_timeline(sim, did(sim, "alice"), limit)) == [(u, None) for u in expected[::-1]]
    assert sim.appview.get_timeline(did(sim, "dave"))["feed"] == []
    with pytest.raises(UnknownDid):
        sim.appview.get_timeline("did:plc:aaaaaaaaaaaaaaaaaaaaaaaa")


def test_reposts_attributed_and_deduplicated(sim):
    sim.follow("alice", "bob")
    sim.follow("alice", "carol")
    p = sim.post("dave", "original")
    sim.repost("bob", p)
    sim.repost("carol", p)
    sim.settle()
    feed = sim.appview.get_timeline(did(sim, "alice"))["feed"]
    assert len(feed) == 1
    assert feed[0]["post"]["uri"] == p
    assert feed[0]["reason"]["repostBy"] == did(sim, "carol")
    assert feed[0]["post"]["repostCount"] == 2


def test_followers_across_servers(sim):
    sim.follow("alice", "bob")
    sim.follow("carol", "bob")
    sim.settle()
    assert sim.user("alice").pds != sim.user("bob").pds
    assert sim.appview.get_followers(did(sim, "bob")) == sorted([did(sim, "alice"), did(sim, "carol")])
    sim.unfollow("alice", "bob")
    sim.settle()
    assert sim.appview.get_followers(did(sim, "bob")) == [did(sim, "carol")]
    profile = sim.appview.get_profile(did(sim, "bob"))
    assert profile["followersCount"] == 1 and profile["followsCount"] == 0


def test_profile_record(sim):
    sim.profile("alice", "Alice", "hi")
    sim.settle()
    assert sim.appview.get_profile(did(sim, "alice"))["displayName"] == "Alice"
    sim.profile("alice", "Alice B")
    sim.settle()
    assert sim.appview.get_profile(did(sim, "alice"))["displayName"] == "Alice B"


def test_takedown(sim):
    sim.follow("bob", "alice")
    p = sim.post("alice", "bad")
    q = sim.post("alice", "fine")
    sim.settle()
    with pytest.raises(Unauthorized):
        sim.appview.admin_takedown(p, "wrong")
    sim.appview.admin_takedown(p, sim.config.admin_token)
    with pytest.raises(Takedown):
        sim.appview.get_thread(p)
    assert [i["post"]["uri"] for i in sim.appview.get_timeline(did(sim, "bob"))["feed"]] == [q]
    sim.appview.admin_takedown(did(sim, "alice"), sim.config.admin_token)
    assert sim.appview.get_timeline(did(sim, "bob"))["feed"] == []
    assert sim.pds(1).get_record(did(sim, "alice"), POST, p.rsplit("/", 1)[1])
    sim.appview.reverse_takedown(did(sim, "alice"), sim.config.admin_token)
    sim.appview.reverse_takedown(p, sim.config.admin_token)
    assert len(sim.appview.get_timeline(did(sim, "bob"))["feed"]) == 2


def test_labels_follow_subscription(sim):
    p = sim.post("bob", "BUYNOW cheap pills")
    sim.post("bob", "ordinary")
    sim.subscribe_labeler("alice")
    sim.label_pref("alice", "spam", "hide")
    sim.subscribe_labeler("carol")
    sim.label_pref("carol", "spam", "warn")
    sim.settle()
    assert sim.appview.get_thread(p, sim.viewer("alice"))["collapsed"] == "hidden"
    carol = sim.appview.get_post(p, sim.viewer("carol"))
    assert carol["labels"] == ["spam"] and carol["warnings"] == ["spam"]
    assert sim.appview.get_post(p, sim.viewer("dave"))["labels"] == []
    sim.delete("bob", p)
    sim.settle()
    labeler = sim.labelers[0]
    assert [e.label.neg for e in labeler.query_labels()] == [False, True]
    assert p not in sim.appview.labels or not sim.appview.labels[p].get(labeler.did)


def test_feed_hydration(sim):
    sim.post("alice", "morning #tea")
    sim.post("bob", "no tag here")
    sim.post("bob", "green #Tea.")
    sim.post("carol", "outsider #tea")
    feed = sim.publish_feed("dave", "Tea", FeedRule("tea", frozenset({did(sim, "alice"), did(sim, "bob")})))
    sim.settle()
    result = sim.appview.get_feed(feed)
    assert [i["post"]["text"] for i in result["feed"]] == ["green #Tea.", "morning #tea"]
    sim.network.latency["feeds1.test"] = 10.0
    with pytest.raises(GeneratorUnavailable) as err:
        sim.appview.get_feed(feed)
    assert err.value.fallback == {"feed": [], "cursor": None}


def test_feed_drops_unknown_and_hidden(sim):
    gen = sim.feedgens[0]
    a = sim.post("alice", "one #x")
    b = sim.post("alice", "BUYNOW two #x")
    c = sim.post("alice", "three #x")
    feed = sim.publish_feed("dave", "X", FeedRule("x"))
    sim.subscribe_labeler("carol")
    sim.label_pref("carol", "spam", "hide")
    sim.settle()
    gen.index[feed][f"at://{did(sim, 'alice')}/{POST}/zzzzzzzzzzzzz"] = "2099-01-01T00:00:00Z"
    assert [i["post"]["uri"] for i in sim.appview.get_feed(feed)["feed"]] == [c, b, a]
    assert [i["post"]["uri"] for i in sim.appview.get_feed(feed, sim.viewer("carol"))["feed"]] == [c, a]


def test_handles_checked_periodically(sim):
    alice = did(sim, "alice")
    assert sim.appview.handle_status(alice) == UNCHECKED
    sim.appview.check_handles(force=True)
    assert sim.appview.handle_status(alice) == VERIFIED
    sim.break_handle("alice")
    sim.appview.check_handles()
    assert sim.appview.handle_status(alice) == VERIFIED
    sim.clock.advance(hours=25)
    sim.appview.check_handles()
    assert sim.appview.handle_status(alice) == INVALID
    assert sim.appview.get_profile(alice)["handle"] == INVALID_HANDLE
    sim.fix_handle("alice")
    sim.appview.check_handles(force=True)
    assert sim.appview.get_profile(alice)["handle"] == "alice.test"


def test_blob_hydration(sim):
    p = sim.post("alice", "pic", images=2)
    sim.settle()
    view = sim.appview.get_post(p)
    assert len(view["images"]) == 2
    from atnet.codec import Cid

    cid = Cid.parse(view["images"][0]["cid"])
    data = sim.appview.get_blob(did(sim, "alice"), cid)
    sim.kill_pds(1)
    assert sim.appview.get_blob(did(sim, "alice"), cid) == data


def test_unknown_collection_ignored(sim):
    before = sim.appview.ignored
    sim.widget("alice")
    sim.settle()
    assert sim.appview.ignored == before + 1
    assert sim.appview.malformed == 0


def test_outdated_cursor_resyncs():
    s = Sim(2, SimConfig(pds_count=1, retention=3))
    s.create_account("alice")
    s.create_account("bob")
    s.settle()
    s.follow("bob", "alice")
    s.settle()
    pds = s.pds(1)
    alice = s.user("alice")
    for i in range(8):
        pds.write_records(s.token(alice), [{"action": "create", "collection": POST,
                                             "record": {"text": f"t{i}", "createdAt": s.clock.iso(i + 10**6)}}])
        s.relay.poll()
    s.appview.run()
    assert len(s.appview.get_timeline(s.user("bob").did)["feed"]) == 8


def test_same_query_same_answer(sim):
    sim.follow("alice", "bob")
    for i in range(5):
        sim.post("bob", f"p{i}")
    sim.settle()
    ctx = ViewerContext(did(sim, "alice"))
    assert sim.appview.get_timeline(did(sim, "alice"), ctx) == sim.appview.get_timeline(did(sim, "alice"), ctx)
