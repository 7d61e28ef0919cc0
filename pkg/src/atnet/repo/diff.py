"""Record-level diff between two MST roots held in a block store."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

from atnet.codec import Cid
from atnet.repo import mst


@dataclass(frozen=True)
class Change:
    path: str
    old: Cid | None
    new: Cid | None


@dataclass
class RepoDiff:
    created: list[Change] = field(default_factory=list)
    updated: list[Change] = field(default_factory=list)
    deleted: list[Change] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.created or self.updated or self.deleted)

    def changes(self) -> list[Change]:
        return sorted(self.created + self.updated + self.deleted, key=lambda c: c.path)

    def __len__(self) -> int:
        return len(self.created) + len(self.updated) + len(self.deleted)


class _Stream:
    """Lazy in-order flattening of a tree into leaves and unexpanded subtrees."""

    def __init__(self, root: Cid | None, blocks: Mapping[Cid, bytes]):
        self.blocks = blocks
        self.stack: list[tuple] = []
        if root is not None:
            self.stack.append(("tree", root, None))

    def peek(self):
        return self.stack[-1] if self.stack else None

    def pop(self):
        return self.stack.pop()

    def expand(self) -> None:
        _, cid, layer = self.stack.pop()
        block = self.blocks.get(cid)
        if block is None:
            raise mst.MissingBlock(cid)
        keys, values, links = mst.parse_node(block)
        layer = mst.node_layer(keys, layer)
        items: list[tuple] = []
        if links[0] is not None:
            items.append(("tree", links[0], layer - 1))
        for i, key in enumerate(keys):
            items.append(("leaf", key, values[i]))
            if links[i + 1] is not None:
                items.append(("tree", links[i + 1], layer - 1))
        self.stack.extend(reversed(items))

    def layer_of(self, item) -> int:
        if item[2] is not None:
            return item[2]
        block = self.blocks.get(item[1])
        if block is None:
            raise mst.MissingBlock(item[1])
        keys, _, _ = mst.parse_node(block)
        return mst.node_layer(keys, None)


def diff(old_root: Cid | None, new_root: Cid | None, blocks: Mapping[Cid, bytes]) -> RepoDiff:
    """Minimal record diff; identical subtrees are skipped by CID equality.

    Raises MissingBlock if a block needed for the comparison is absent.
    """
    result = RepoDiff()
    a, b = _Stream(old_root, blocks), _Stream(new_root, blocks)
    while True:
        x, y = a.peek(), b.peek()
        if x is None and y is None:
            return result
        if x is not None and y is not None and x[0] == "tree" and y[0] == "tree":
            if x[1] == y[1]:
                a.pop()
                b.pop()
                continue
            lx, ly = a.layer_of(x), b.layer_of(y)
            if lx >= ly:
                a.expand()
            if ly >= lx:
                b.expand()
            continue
        if x is not None and x[0] == "tree":
            a.expand()
            continue
        if y is not None and y[0] == "tree":
            b.expand()
            continue
        if y is None or (x is not None and x[1] < y[1]):
            a.pop()
            result.deleted.append(Change(x[1], x[2], None))
        elif x is None or y[1] < x[1]:
            b.pop()
            result.created.append(Change(y[1], None, y[2]))
        else:
            a.pop()
            b.pop()
            if x[2] != y[2]:
                result.updated.append(Change(x[1], x[2], y[2]))
