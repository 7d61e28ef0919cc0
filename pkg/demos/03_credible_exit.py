"""
Changing hosts without losing anyone
====================================

"""

from atnet.sim import Sim, SimConfig

sim = Sim(3, SimConfig(pds_count=3))
for name, pds in [("alice", 1), ("bob", 2), ("carol", 3)]:
    sim.create_account(name, pds)
sim.follow("bob", "alice")
sim.follow("carol", "alice")
sim.follow("bob", "carol")
first = sim.post("alice", "hello from pds1")
sim.like("bob", first)
sim.settle()


def show(name):
    user = sim.user(name)
    doc = sim.resolve(name)
    print(f"{name}: {user.did} at {doc.pds_url}, followers", sim.appview.get_followers(user.did))


show("alice")

# planned move: pds1 hands over the archive, the DID document is repointed
sim.migrate("alice", 2)
sim.post("alice", "hello from pds2")
sim.settle()
show("alice")
print("likes on the first post:", sim.appview.like_count(first))

# unplanned: carol's host disappears; she restores the copy her client kept
sim.backup("carol")
sim.post("carol", "this one is not in the backup")
sim.kill_pds(3)
sim.recover("carol", 1)
sim.post("carol", "back")
sim.settle()
show("carol")
records = sim.pds(1).accounts[sim.user("carol").did].repo.records()
print("carol's posts:", sorted(v["text"] for path, v in records.items() if path.startswith("app.bsky.feed.post/")))

timeline = sim.appview.get_timeline(sim.user("bob").did)
print("bob's timeline:", [item["post"]["text"] for item in timeline["feed"]])
