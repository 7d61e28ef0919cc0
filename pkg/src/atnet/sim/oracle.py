"""Brute-force recomputation of app view answers straight from repository archives.

Deliberately shares no code with the app view's incremental indexes: every
answer is a scan over the full union of records.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any

from atnet import lexicon
from atnet.repo import import_archive


class Oracle:
    def __init__(self, archives: Mapping[str, bytes], takedowns: frozenset[str] = frozenset(),
                 handles: Mapping[str, str] | None = None):
        self.takedowns = frozenset(takedowns)
        self.handles = dict(handles or {})
        # uri -> (author, collection, value)
        self.records: dict[str, tuple[str, str, dict[str, Any]]] = {}
        for did, archive in archives.items():
            repo = import_archive(archive, did=did)
            for path, value in repo.records().items():
                collection = path.split("/")[0]
                if collection in lexicon.SCHEMAS and lexicon.validate_record(collection, value).ok:
                    self.records[f"at://{did}/{path}"] = (did, collection, value)
        self.dids = sorted(archives)
        self._tables: dict[str, list] = {}
        self._visible: list[str] | None = None

    def _of(self, collection: str):
        if collection not in self._tables:
            self._tables[collection] = [
                (uri, did, value) for uri, (did, c, value) in sorted(self.records.items()) if c == collection
            ]
        return self._tables[collection]

    def blocked(self, a: str, b: str) -> bool:
        for _, did, value in self._of(lexicon.BLOCK):
            if (did, value["subject"]) in ((a, b), (b, a)):
                return True
        return False

    def _down(self, uri: str, did: str) -> bool:
        return uri in self.takedowns or did in self.takedowns

    def _author(self, uri: str) -> str:
        return uri[5:].split("/")[0]

    def _reply_ok(self, uri: str, did: str, value: dict[str, Any]) -> bool:
        if self._down(uri, did):
            return False
        reply = value.get("reply")
        if reply is None:
            return True
        if self.blocked(did, self._author(reply["parent"]["uri"])):
            return False
        root_uri = reply["root"]["uri"]
        root_author = self._author(root_uri)
        if self.blocked(did, root_author):
            return False
        root = self.records.get(root_uri)
        if root is None or root[1] != lexicon.POST or did == root_author:
            return True
        gates = [v for u, d, v in self._of(lexicon.THREADGATE) if v["post"] == root_uri and d == root_author]
        if not gates:
            return True
        for rule in gates[0]["allow"]:
            if rule["rule"] == "following" and self.follows(root_author, did):
                return True
            if rule["rule"] == "mention" and did in self.handles:
                if "@" + self.handles[did] in root[2].get("text", ""):
                    return True
            if rule["rule"] == "list":
                members = {v["subject"] for _, _, v in self._of(lexicon.LISTITEM) if v["list"] == rule.get("list")}
                if rule.get("list", "").startswith(f"at://{root_author}/") and did in members:
                    return True
        return False

    def follows(self, a: str, b: str) -> bool:
        return any(did == a and value["subject"] == b for _, did, value in self._of(lexicon.FOLLOW))

    def posts(self) -> list[str]:
        if self._visible is None:
            self._visible = [uri for uri, did, value in self._of(lexicon.POST) if self._reply_ok(uri, did, value)]
        return self._visible

    def like_counts(self) -> dict[str, int]:
        counts = {}
        likes = self._of(lexicon.LIKE)
        for uri in self.posts():
            author = self._author(uri)
            likers = {
                did for like_uri, did, value in likes
                if value["subject"]["uri"] == uri and not self._down(like_uri, did) and not self.blocked(did, author)
            }
            counts[uri] = len(likers)
        return counts

    def followers(self) -> dict[str, list[str]]:
        out = {}
        for target in self.dids:
            if target in self.takedowns:
                continue
            out[target] = sorted({
                did for _, did, value in self._of(lexicon.FOLLOW)
                if value["subject"] == target and did not in self.takedowns and not self.blocked(did, target)
            })
        return out

    def thread(self, uri: str) -> tuple[str, list]:
        """(uri, [child trees]) with children ordered by (createdAt, uri)."""
        posts = set(self.posts())
        children = []
        for child_uri, did, value in self._of(lexicon.POST):
            reply = value.get("reply")
            if reply and reply["parent"]["uri"] == uri and child_uri in posts:
                children.append((value["createdAt"], child_uri))
        return (uri, [self.thread(c) for _, c in sorted(children)])

    def thread_roots(self) -> list[str]:
        return [uri for uri in self.posts() if "reply" not in self.records[uri][2]]

    def timeline(self, viewer: str) -> list[tuple[str, str | None]]:
        """(post uri, reposter or None), newest first, earliest occurrence kept."""
        followed = {value["subject"] for _, did, value in self._of(lexicon.FOLLOW) if did == viewer}
        posts = set(self.posts())
        items = []
        for uri, did, value in self._of(lexicon.POST):
            if did in followed and uri in posts and not self.blocked(viewer, did):
                items.append((value["createdAt"], uri, uri, None))
        for uri, did, value in self._of(lexicon.REPOST):
            subject = value["subject"]["uri"]
            if did not in followed or subject not in posts or self._down(uri, did):
                continue
            author = self._author(subject)
            if self.blocked(did, author) or self.blocked(viewer, author):
                continue
            items.append((value["createdAt"], uri, subject, did))
        items.sort(reverse=True)
        out, seen = [], set()
        for _, _, subject, reposter in items:
            if subject not in seen:
                seen.add(subject)
                out.append((subject, reposter))
        return out
