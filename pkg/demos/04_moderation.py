"""
Moderation in layers: blocks, mutes, labels and feeds
=====================================================

"""

from atnet.feedgen import FeedRule
from atnet.sim import Sim

sim = Sim(4)
for name in ["ann", "ben", "cat", "dan"]:
    sim.create_account(name)
for name in ["ben", "cat", "dan"]:
    sim.follow("ann", name)
    sim.follow(name, "ann")
sim.follow("ben", "dan")
sim.follow("cat", "dan")

root = sim.post("ann", "what is everyone reading?")
reply = sim.post("ben", "a long novel", reply_to=root)
sim.post("dan", "BUYNOW cheap books")
sim.settle()


def thread(viewer=None):
    view = sim.appview.get_thread(root, sim.viewer(viewer))
    return [child.get("post", {}).get("text", child.get("collapsed")) for child in view["replies"]]


print("replies:", thread())

# a block is public and hides the pair's interactions from everyone
sim.block("ann", "ben")
sim.settle()
print("after block:", thread(), thread("cat"))

# a mute is private and local to the muter
sim.unblock("ann", "ben")
sim.mute("cat", "ben")
sim.settle()
print("cat:", thread("cat"), " dan:", thread("dan"))

# labels are opinions; only subscribers who asked to hide them lose the post
sim.subscribe_labeler("cat")
sim.label_pref("cat", "spam", "hide")
sim.settle()
for viewer in ["cat", "ben"]:
    feed = sim.appview.get_timeline(sim.user(viewer).did, sim.viewer(viewer))["feed"]
    print(viewer, "sees", [item["post"]["text"] for item in feed])

# a custom feed is a list of post ids from someone else's service
feed = sim.publish_feed("dan", "books", FeedRule("books"))
sim.post("cat", "new shelf #books")
sim.post("ann", "library day #books")
sim.settle()
print("feed:", [item["post"]["text"] for item in sim.appview.get_feed(feed)["feed"]])
