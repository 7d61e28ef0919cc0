"""
A signed repository, from records to proofs
===========================================

"""

import random

from atnet import codec
from atnet.crypto import Keypair
from atnet.repo import Delete, Put, Repository, diff, export_archive, import_archive, verify_commit, verify_proof

key = Keypair.generate(random.Random(0))
repo = Repository.create("did:plc:ewvi7nxzyoun6zhxrhs64oiz", key)

# forty posts in one atomic commit
posts = {f"app.bsky.feed.post/{i:04d}": {"$type": "app.bsky.feed.post", "text": f"note {i}",
                                         "createdAt": "2024-01-01T00:00:00Z"} for i in range(40)}
repo.apply_writes([Put(path, value) for path, value in posts.items()], key)
print("head", repo.head)
print("signature ok:", verify_commit(repo.commit, key.public_key))

# the same records in another order give the same tree
shuffled = list(posts.items())
random.Random(1).shuffle(shuffled)
other = Repository.create(repo.did, key)
other.apply_writes([Put(path, value) for path, value in shuffled], key)
print("same data root:", other.data_root == repo.data_root)

# anyone holding only the root can check a claim about one record
proof = repo.prove("app.bsky.feed.post/0007")
print(proof.kind, len(proof.blocks), "blocks, verifies:", verify_proof(repo.data_root, proof))
absent = repo.prove("app.bsky.feed.post/9999")
print(absent.kind, "verifies:", verify_proof(repo.data_root, absent))

# what changed between two commits
before = repo.data_root
repo.apply_writes([Delete("app.bsky.feed.post/0003"),
                   Put("app.bsky.feed.post/0100", {"$type": "app.bsky.feed.post", "text": "late",
                                                   "createdAt": "2024-01-02T00:00:00Z"})], key)
for change in diff(before, repo.data_root, repo.store).changes():
    print("  ", change.path, change.old, "->", change.new)

# the whole repo as one archive; importing checks every hash and the signature
archive = export_archive(repo)
copy = import_archive(archive, did=repo.did, public_key=key.public_key)
print(len(archive), "bytes,", len(copy.records()), "records, head matches:", copy.head == repo.head)

# the encoding is canonical: one value, one byte string
print(codec.encode({"b": 1, "a": [True, None]}).hex())
