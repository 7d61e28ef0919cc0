"""Shared builders for identity tests and the acceptance suite."""

import random
from dataclasses import replace

from atnet import codec
from atnet.identity import (
    IdentityError,
    PlcOperation,
    ResolverEnv,
    plc_derive_did,
    resolve_did,
)
from atnet.plc import OMIT_TAIL, SERVE_FORK, PlcDirectory

from conftest import keypair


def genesis(label: str, handle: str = "alice.test", pds: str = "https://pds1.test"):
    rot = keypair(f"{label}:rot")
    sign = keypair(f"{label}:sign")
    op = PlcOperation.create(rot, prev=None, handle=handle, pds_url=pds,
                             signing_key=sign.public_key, rotation_keys=[rot.public_key])
    return op, rot


def chain(label: str, length: int = 5):
    """A valid log whose later ops move the PDS; returns (did, ops, rotation key)."""
    op, rot = genesis(label)
    ops = [op]
    for i in range(1, length):
        ops.append(PlcOperation.create(rot, prev=ops[-1].cid, handle="alice.test",
                                       pds_url=f"https://pds{i + 1}.test",
                                       signing_key=keypair(f"{label}:sign{i}").public_key,
                                       rotation_keys=[rot.public_key]))
    return plc_derive_did(ops[0]), ops, rot


def directory_env(directory) -> ResolverEnv:
    return ResolverEnv(plc_audit_log=directory.get_audit_log)


def adversarial_trial(seed: int) -> bool:
    """One run against a lying directory. True when nothing forged validated.

    The directory may omit the tail, serve a key-holder fork, splice in
    operations signed by its own key, or rewrite fields of honest ones. A
    document counts as forged unless it materializes some prefix of an
    operation sequence the user actually signed.
    """
    r = random.Random(f"adversary:{seed}")
    did, ops, rot = chain(f"adv{seed % 7}", r.randint(2, 6))
    directory = PlcDirectory()
    for op in ops:
        assert directory.submit_operation(did, op)
    signed = [list(ops)]
    mode = r.choice(["omit", "fork", "splice", "rewrite", "reorder"])
    if mode == "omit":
        directory.mode = OMIT_TAIL
        directory.omit = r.randint(1, len(ops))
    elif mode == "fork":
        k = r.randrange(len(ops) - 1)
        fork = PlcOperation.create(rot, prev=ops[k].cid, handle="alice.test", pds_url="https://fork.test",
                                   signing_key=keypair("fork").public_key, rotation_keys=[rot.public_key])
        directory.submit_operation(did, fork)
        directory.mode = SERVE_FORK
        signed.append(ops[: k + 1] + [fork])
    evil = keypair(f"evil{seed}")
    served = directory.get_audit_log(did)
    if mode == "splice":
        k = r.randrange(len(served))
        bogus = PlcOperation.create(evil, prev=served[k].cid, handle="alice.test", pds_url="https://evil.test",
                                    signing_key=evil.public_key, rotation_keys=[evil.public_key])
        served = served[: k + 1] + [bogus]
    elif mode == "rewrite":
        k = r.randrange(len(served))
        field = r.choice(["pds_url", "signing_key", "handle", "rotation_keys"])
        value = {"pds_url": "https://evil.test", "signing_key": evil.public_key,
                 "handle": "evil.test", "rotation_keys": (evil.public_key,)}[field]
        served = served[:k] + [replace(served[k], **{field: value})] + served[k + 1:]
    elif mode == "reorder" and len(served) > 2:
        i, j = r.sample(range(1, len(served)), 2)
        served[i], served[j] = served[j], served[i]
    env = ResolverEnv(plc_audit_log=lambda d: served)
    try:
        doc = resolve_did(did, env)
    except IdentityError:
        return True
    honest = {op.to_document(did) for branch in signed for op in branch}
    return doc in honest


def handle_env(did, ops, txt=None, well_known=None):
    return ResolverEnv(
        dns_txt=lambda name: [f"did={txt}"] if txt and name == "_atproto.nytimes.test" else [],
        https_get=lambda url: well_known if url == "https://nytimes.test/.well-known/atproto-did" else None,
        plc_audit_log=lambda d: ops if d == did else [],
    )


def org_chain(handle):
    rot = keypair("org:rot")
    op = PlcOperation.create(rot, prev=None, handle=handle, pds_url="https://pds1.test",
                             signing_key=keypair("org:sign").public_key, rotation_keys=[rot.public_key])
    return plc_derive_did(op), [op]


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def reparse(data: bytes):
    try:
        return PlcOperation.from_bytes(data)
    except (ValueError, codec.CodecError):
        return None


def world(pds_count: int = 1, retention: int = 10_000, seed: int = 0):
    """Directory plus ``pds_count`` servers on one simulated network."""
    from atnet.net import PLC_URL, Network
    from atnet.pds import PDS, PasswordHasher

    network = Network()
    plc = PlcDirectory()
    network.serve(PLC_URL, plc)
    servers = [
        PDS(f"https://pds{i + 1}.test", network, rng=random.Random(f"pds{i}:{seed}"), retention=retention,
            hasher=PasswordHasher("fast"))
        for i in range(pds_count)
    ]
    return network, plc, servers


def signup(pds, name: str):
    """Account on ``pds`` with a hosting-domain handle; returns (did, token)."""
    did = pds.create_account(f"{name}.{pds.host}", "pw")
    return did, pds.create_session(did, "pw")


def post_write(text: str, rkey: str | None = None):
    from atnet.pds import Write

    return Write("create", "app.bsky.feed.post", rkey, {"text": text, "createdAt": "2024-01-01T00:00:00Z"})


def firehose_run(seed: int = 0, commits_per_pds: int = 100):
    """Three servers, interleaved commits, lane and subscriber disconnects,
    and one forced gap that only a re-crawl can close.

    Returns (servers, relay, per-DID create paths in commit order,
    per-DID create paths as the subscriber saw them, seqs the subscriber saw).
    """
    from atnet.relay import Relay

    r = random.Random(f"firehose:{seed}")
    network, plc, servers = world(3, seed=seed)
    accounts = [(pds, *signup(pds, f"user{i}")) for i, pds in enumerate(servers)]
    relay = Relay("https://relay.test", network)
    for pds in servers:
        relay.register_pds(pds.url)
    written = {did: [] for _, did, _ in accounts}
    seen = {did: [] for _, did, _ in accounts}
    seqs = []
    sub_cursor = 0
    sub = relay.firehose_subscribe(sub_cursor)
    gap_at = r.randrange(40, 60)
    remaining = {did: commits_per_pds for _, did, _ in accounts}

    def consume():
        nonlocal sub_cursor
        for event in sub.poll():
            seqs.append(event.seq)
            sub_cursor = event.seq
            for op in event.ops:
                if op.action == "create":
                    seen[event.did].append(op.path)

    step = 0
    while any(remaining.values()):
        pds, did, token = r.choice([a for a in accounts if remaining[a[1]]])
        result = pds.write_records(token, [post_write(f"{did} {step}")])
        written[did].append(result.uri.split("/", 3)[3])
        remaining[did] -= 1
        step += 1
        if step == gap_at:
            # the relay misses two commits of this server: a lost connection
            # that resumes past them
            lane = relay.lanes[pds.url]
            relay.poll_lane(pds.url)
            lane.client.disconnect()
            pds.write_records(token, [post_write("gap a")])
            pds.write_records(token, [post_write("gap b")])
            written[did] += [e.ops[0].path for e in pds.events.read(pds.seq - 2)[0]]
            lane.client.cursor = pds.seq
        if r.random() < 0.1:
            relay.disconnect(r.choice(servers).url)
        if r.random() < 0.3:
            relay.poll(rng=r)
        if r.random() < 0.2:
            consume()
        if r.random() < 0.05:
            sub.close()
            sub = relay.firehose_subscribe(sub_cursor)
    while relay.poll(rng=r):
        pass
    consume()
    return servers, relay, written, seen, seqs
