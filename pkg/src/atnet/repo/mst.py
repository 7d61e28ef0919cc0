"""Merkle Search Tree over ``collection/rkey`` keys.

Nodes are immutable; insert and delete copy the path they touch, so a
commit only re-encodes O(depth) nodes. The tree shape is a pure function of
the key set: a key lives at ``layer(key)`` and each node at layer L holds the
layer-L keys of its interval, with the gaps between them delegated to
subtrees rooted at layer L-1.
"""

from __future__ import annotations

import hashlib
import re
from bisect import bisect_left
from collections.abc import Iterator, Mapping

from atnet import codec
from atnet.codec import Cid

_COLLECTION = re.compile(r"^[a-z][a-z0-9-]*(\.[a-z][a-zA-Z0-9-]*){2,}$")
_RKEY = re.compile(r"^[A-Za-z0-9._:~-]{1,512}$")


class InvalidKey(ValueError):
    pass


class MissingBlock(KeyError):
    def __init__(self, cid: Cid):
        super().__init__(str(cid))
        self.cid = cid


class MalformedNode(ValueError):
    pass


def validate_key(key: str) -> str:
    collection, sep, rkey = key.partition("/")
    if not sep or not _COLLECTION.match(collection) or not _RKEY.match(rkey):
        raise InvalidKey(f"invalid record path {key!r}")
    if rkey in (".", ".."):
        raise InvalidKey(f"invalid record key {rkey!r}")
    return key


def key_layer(key: str) -> int:
    """Leading zero bits of SHA-256(key), halved: fanout 4."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    zeros = 0
    for byte in digest:
        if byte == 0:
            zeros += 8
            continue
        zeros += 8 - byte.bit_length()
        break
    return zeros // 2


class Node:
    __slots__ = ("layer", "keys", "values", "children", "_block", "_cid")

    def __init__(self, layer: int, keys: tuple, values: tuple, children: tuple):
        self.layer = layer
        self.keys = keys
        self.values = values
        self.children = children
        self._block: bytes | None = None
        self._cid: Cid | None = None

    @property
    def is_empty(self) -> bool:
        return not self.keys and self.children[0] is None

    def to_data(self) -> dict:
        entries = []
        prev = b""
        for i, key in enumerate(self.keys):
            raw = key.encode("utf-8")
            shared = _common_prefix(prev, raw)
            child = self.children[i + 1]
            entries.append(
                {
                    "p": shared,
                    "k": raw[shared:],
                    "v": self.values[i],
                    "t": child.cid if child is not None else None,
                }
            )
            prev = raw
        left = self.children[0]
        return {"l": left.cid if left is not None else None, "e": entries}

    @property
    def block(self) -> bytes:
        if self._block is None:
            self._block = codec.encode(self.to_data())
        return self._block

    @property
    def cid(self) -> Cid:
        if self._cid is None:
            self._cid = codec.cid_of(self.block)
        return self._cid

    def __repr__(self) -> str:
        return f"Node(layer={self.layer}, keys={list(self.keys)!r})"


EMPTY = Node(0, (), (), (None,))


def _common_prefix(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


def _make(layer: int, keys: tuple, values: tuple, children: tuple) -> Node | None:
    if not keys and children[0] is None:
        return None
    return Node(layer, keys, values, children)


def _leaf(key: str, value: Cid, layer: int) -> Node:
    return Node(layer, (key,), (value,), (None, None))


def _lift(node: Node | None, to_layer: int) -> Node | None:
    if node is None:
        return None
    while node.layer < to_layer:
        node = Node(node.layer + 1, (), (), (node,))
    return node


def _as_root(node: Node | None) -> Node:
    if node is None:
        return EMPTY
    while not node.keys and node.children[0] is not None:
        node = node.children[0]
    return node


def _split(node: Node | None, key: str) -> tuple[Node | None, Node | None]:
    if node is None:
        return None, None
    i = bisect_left(node.keys, key)
    lo_child, hi_child = _split(node.children[i], key)
    lo = _make(node.layer, node.keys[:i], node.values[:i], node.children[:i] + (lo_child,))
    hi = _make(node.layer, node.keys[i:], node.values[i:], (hi_child,) + node.children[i + 1 :])
    return lo, hi


def _merge(a: Node | None, b: Node | None) -> Node | None:
    if a is None:
        return b
    if b is None:
        return a
    middle = _merge(a.children[-1], b.children[0])
    return Node(
        a.layer,
        a.keys + b.keys,
        a.values + b.values,
        a.children[:-1] + (middle,) + b.children[1:],
    )


def insert(root: Node, key: str, value: Cid) -> Node:
    """Return a new root with ``key`` set to ``value`` (insert or update)."""
    layer = key_layer(key)
    if root.is_empty:
        return _leaf(key, value, layer)
    if layer > root.layer:
        lo, hi = _split(root, key)
        return Node(layer, (key,), (value,), (_lift(lo, layer - 1), _lift(hi, layer - 1)))
    return _insert(root, key, value, layer)


def _insert(node: Node, key: str, value: Cid, layer: int) -> Node:
    i = bisect_left(node.keys, key)
    if i < len(node.keys) and node.keys[i] == key:
        values = node.values[:i] + (value,) + node.values[i + 1 :]
        return Node(node.layer, node.keys, values, node.children)
    if layer == node.layer:
        lo, hi = _split(node.children[i], key)
        return Node(
            node.layer,
            node.keys[:i] + (key,) + node.keys[i:],
            node.values[:i] + (value,) + node.values[i:],
            node.children[:i] + (lo, hi) + node.children[i + 1 :],
        )
    child = node.children[i]
    if child is None:
        child = _lift(_leaf(key, value, layer), node.layer - 1)
    else:
        child = _insert(child, key, value, layer)
    return Node(node.layer, node.keys, node.values, node.children[:i] + (child,) + node.children[i + 1 :])


def delete(root: Node, key: str) -> Node:
    """Return a new root without ``key``; raises KeyError if absent."""
    return _as_root(_delete(None if root.is_empty else root, key))


def _delete(node: Node | None, key: str) -> Node | None:
    if node is None:
        raise KeyError(key)
    i = bisect_left(node.keys, key)
    if i < len(node.keys) and node.keys[i] == key:
        merged = _merge(node.children[i], node.children[i + 1])
        return _make(
            node.layer,
            node.keys[:i] + node.keys[i + 1 :],
            node.values[:i] + node.values[i + 1 :],
            node.children[:i] + (merged,) + node.children[i + 2 :],
        )
    child = _delete(node.children[i], key)
    return _make(node.layer, node.keys, node.values, node.children[:i] + (child,) + node.children[i + 1 :])


def get(root: Node, key: str) -> Cid | None:
    node: Node | None = root
    while node is not None:
        i = bisect_left(node.keys, key)
        if i < len(node.keys) and node.keys[i] == key:
            return node.values[i]
        node = node.children[i]
    return None


def search_path(root: Node, key: str) -> list[Node]:
    """Nodes visited from the root down to where ``key`` is, or would be."""
    path = []
    node: Node | None = root
    while node is not None:
        path.append(node)
        i = bisect_left(node.keys, key)
        if i < len(node.keys) and node.keys[i] == key:
            break
        node = node.children[i]
    return path


def walk(root: Node) -> Iterator[tuple[str, Cid]]:
    stack: list = [root]
    while stack:
        item = stack.pop()
        if item is None:
            continue
        if isinstance(item, tuple):
            yield item
            continue
        pending = [item.children[0]]
        for i, key in enumerate(item.keys):
            pending.append((key, item.values[i]))
            pending.append(item.children[i + 1])
        stack.extend(reversed(pending))


def nodes(root: Node, skip: Mapping | None = None) -> Iterator[Node]:
    """Pre-order traversal; subtrees whose CID is in ``skip`` are not entered."""
    stack: list[Node | None] = [root]
    while stack:
        node = stack.pop()
        if node is None:
            continue
        if skip is not None and node.cid in skip:
            continue
        yield node
        stack.extend(reversed(node.children))


def depth(root: Node) -> int:
    if root.is_empty:
        return 0
    return root.layer + 1


def from_items(items: Mapping[str, Cid]) -> Node:
    """Build the canonical tree for a key set in one pass."""
    pairs = sorted(items.items())
    if not pairs:
        return EMPTY
    top = max(key_layer(k) for k, _ in pairs)
    return _as_root(_build(pairs, top))


def _build(pairs: list, layer: int) -> Node | None:
    if not pairs:
        return None
    keys, values, children = [], [], []
    segment: list = []
    for key, value in pairs:
        if key_layer(key) == layer:
            children.append(_build(segment, layer - 1))
            keys.append(key)
            values.append(value)
            segment = []
        else:
            segment.append((key, value))
    children.append(_build(segment, layer - 1))
    return Node(layer, tuple(keys), tuple(values), tuple(children))


def parse_node(block: bytes) -> tuple[list[str], list[Cid], list[Cid | None]]:
    """Strictly decode a node block into keys, values and child links."""
    data = codec.decode(block)
    if not isinstance(data, dict) or set(data) != {"l", "e"}:
        raise MalformedNode("node must have exactly 'l' and 'e'")
    left = data["l"]
    if left is not None and not isinstance(left, Cid):
        raise MalformedNode("'l' must be a CID or null")
    if not isinstance(data["e"], list):
        raise MalformedNode("'e' must be a list")
    keys: list[str] = []
    values: list[Cid] = []
    children: list[Cid | None] = [left]
    prev = b""
    for entry in data["e"]:
        if not isinstance(entry, dict) or set(entry) != {"p", "k", "v", "t"}:
            raise MalformedNode("malformed entry")
        p, k, v, t = entry["p"], entry["k"], entry["v"], entry["t"]
        if not isinstance(p, int) or not isinstance(k, bytes) or not isinstance(v, Cid):
            raise MalformedNode("malformed entry fields")
        if t is not None and not isinstance(t, Cid):
            raise MalformedNode("'t' must be a CID or null")
        if p < 0 or p > len(prev):
            raise MalformedNode("prefix length out of range")
        raw = prev[:p] + k
        if p != _common_prefix(prev, raw):
            raise MalformedNode("prefix compression is not maximal")
        try:
            key = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedNode("key is not UTF-8") from exc
        if keys and key <= keys[-1]:
            raise MalformedNode("keys not strictly ascending")
        keys.append(key)
        values.append(v)
        children.append(t)
        prev = raw
    return keys, values, children


def node_layer(keys: list[str], expected: int | None) -> int:
    if keys:
        layer = key_layer(keys[0])
        if any(key_layer(k) != layer for k in keys):
            raise MalformedNode("keys in one node must share a layer")
        if expected is not None and layer != expected:
            raise MalformedNode(f"node at layer {layer}, expected {expected}")
        return layer
    if expected is None:
        return 0
    return expected


def load(root: Cid, blocks: Mapping[Cid, bytes]) -> Node:
    """Rebuild the in-memory tree from a block mapping."""
    node = _load(root, blocks, None)
    if node.cid != root:
        raise MalformedNode(f"re-encoded root does not match {root}")
    return node


def _load(cid: Cid, blocks: Mapping[Cid, bytes], expected: int | None) -> Node:
    block = blocks.get(cid)
    if block is None:
        raise MissingBlock(cid)
    keys, values, links = parse_node(block)
    if not keys and (links[0] is None) != (expected is None):
        raise MalformedNode("entry-less node outside the canonical shape")
    layer = node_layer(keys, expected)
    if layer < 0:
        raise MalformedNode("tree deeper than its layers allow")
    children = tuple(None if link is None else _load(link, blocks, layer - 1) for link in links)
    if layer == 0 and any(c is not None for c in children):
        raise MalformedNode("layer-0 node has subtrees")
    node = Node(layer, tuple(keys), tuple(values), children)
    node._block = block
    node._cid = cid
    return node
