"""
Self-certifying identifiers and a directory that lies
=====================================================

"""

import random

from atnet.crypto import Keypair
from atnet.identity import IdentityError, PlcOperation, ResolverEnv, plc_derive_did, resolve_did, verify_handle
from atnet.plc import OMIT_TAIL, PlcDirectory

r = random.Random(7)
rotation = Keypair.generate(r)
genesis = PlcOperation.create(rotation, prev=None, handle="alice.test", pds_url="https://pds1.test",
                              signing_key=Keypair.generate(r).public_key, rotation_keys=[rotation.public_key])
did = plc_derive_did(genesis)
print(did)

directory = PlcDirectory()
print(directory.submit_operation(did, genesis))

# move to another host: a new operation signed by the rotation key
move = PlcOperation.create(rotation, prev=genesis.cid, handle="alice.test", pds_url="https://pds2.test",
                           signing_key=Keypair.generate(r).public_key, rotation_keys=[rotation.public_key])
print(directory.submit_operation(did, move))

env = ResolverEnv(plc_audit_log=directory.get_audit_log)
print("now hosted at", resolve_did(did, env).pds_url)

# a stranger cannot extend the log
mallory = Keypair.generate(r)
hijack = PlcOperation.create(mallory, prev=move.cid, handle="alice.test", pds_url="https://evil.test",
                             signing_key=mallory.public_key, rotation_keys=[mallory.public_key])
print("hijack:", directory.submit_operation(did, hijack))

# a directory can hide the tail, which gives a stale but genuine document
directory.mode, directory.omit = OMIT_TAIL, 1
print("withheld:", resolve_did(did, env).pds_url)

# ...but whatever it invents fails validation on the client
forged = directory.get_audit_log(did) + [hijack]
try:
    resolve_did(did, ResolverEnv(plc_audit_log=lambda d: forged))
except IdentityError as exc:
    print("rejected:", type(exc).__name__)

# handles need both directions: DNS points at the DID, and the document names the handle
directory.mode = "honest"
txt = {"_atproto.alice.test": [f"did={did}"]}
env = ResolverEnv(dns_txt=lambda name: txt.get(name, []), plc_audit_log=directory.get_audit_log)
print(verify_handle("alice.test", did, env))
txt.clear()
print(verify_handle("alice.test", did, env))
