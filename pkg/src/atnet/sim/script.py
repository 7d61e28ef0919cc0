"""Seeded random action scripts, emitted as scenario text."""

from __future__ import annotations

import random

WEIGHTS = {
    "post": 26,
    "reply": 16,
    "like": 20,
    "unlike": 3,
    "repost": 5,
    "follow": 14,
    "unfollow": 3,
    "block": 2,
    "unblock": 1,
    "delete": 3,
    "threadgate": 2,
    "widget": 1,
}

WORDS = ["sun", "tea", "rain", "cats", "code", "jazz", "moss", "tide", "kites", "maps"]


def generate_script(seed: int, accounts: int = 50, pds_count: int = 3, actions: int = 2000,
                    settle_every: int = 100) -> str:
    """Every generated action is valid against the state the script has built so far."""
    rng = random.Random(f"script:{seed}")
    lines = [f"topology pds={pds_count}"]
    users = [f"u{i:02d}" for i in range(accounts)]
    for i, user in enumerate(users):
        lines.append(f"create-account user={user} pds={i % pds_count + 1}")
    posts: dict[str, str] = {}  # name -> author
    likes: dict[tuple[str, str], str] = {}
    follows: set[tuple[str, str]] = set()
    blocks: set[tuple[str, str]] = set()
    gated: set[str] = set()
    counter = 0
    kinds = list(WEIGHTS)
    weights = [WEIGHTS[k] for k in kinds]
    for step in range(actions):
        counter += 1
        kind = rng.choices(kinds, weights)[0]
        user = rng.choice(users)
        if kind in ("reply", "like", "repost", "delete", "threadgate") and not posts:
            kind = "post"
        if kind == "post":
            name = f"p{counter}"
            text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6)))
            if rng.random() < 0.2:
                text += f" #{rng.choice(WORDS)}"
            lines.append(f'post user={user} as={name} text="{text}"')
            posts[name] = user
        elif kind == "reply":
            target = rng.choice(sorted(posts))
            name = f"p{counter}"
            lines.append(f'reply user={user} to={target} as={name} text="re {rng.choice(WORDS)}"')
            posts[name] = user
        elif kind == "like":
            target = rng.choice(sorted(posts))
            if (user, target) in likes:
                continue
            name = f"l{counter}"
            likes[(user, target)] = name
            lines.append(f"like user={user} post={target} as={name}")
        elif kind == "unlike":
            if not likes:
                continue
            key = rng.choice(sorted(likes))
            lines.append(f"delete user={key[0]} record={likes.pop(key)}")
        elif kind == "repost":
            lines.append(f"repost user={user} post={rng.choice(sorted(posts))} as=r{counter}")
        elif kind == "follow":
            target = rng.choice(users)
            if target == user or (user, target) in follows:
                continue
            follows.add((user, target))
            lines.append(f"follow user={user} target={target}")
        elif kind == "unfollow":
            if not follows:
                continue
            a, b = rng.choice(sorted(follows))
            follows.discard((a, b))
            lines.append(f"unfollow user={a} target={b}")
        elif kind == "block":
            target = rng.choice(users)
            if target == user or (user, target) in blocks:
                continue
            blocks.add((user, target))
            lines.append(f"block user={user} target={target}")
        elif kind == "unblock":
            if not blocks:
                continue
            a, b = rng.choice(sorted(blocks))
            blocks.discard((a, b))
            lines.append(f"unblock user={a} target={b}")
        elif kind == "delete":
            name = rng.choice(sorted(posts))
            author = posts.pop(name)
            gated.discard(name)
            for key in [k for k in likes if k[1] == name]:
                del likes[key]
            lines.append(f"delete user={author} record={name}")
        elif kind == "threadgate":
            name = rng.choice(sorted(posts))
            if name in gated:
                continue
            gated.add(name)
            lines.append(f"threadgate user={posts[name]} post={name} allow=following")
        elif kind == "widget":
            lines.append(f"widget user={user}")
        if (step + 1) % settle_every == 0:
            lines.append("settle")
    lines.append("assert-oracle")
    lines.append("assert-replicas")
    return "\n".join(lines) + "\n"
