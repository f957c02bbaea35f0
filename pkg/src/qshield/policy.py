"""Access-control list mapping user ids to the collection ids they may read.

A uid is the hex SHA-256 of the user share's canonical encoding; cids are
hex collection identifiers.  The policy is owned by the data owner and
installed into the trusted core over the provisioned channel; the core
consults it during unlock and never exports it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import NotFoundError


@dataclass
class Policy:
    entries: dict[str, frozenset[str]] = field(default_factory=dict)

    def lookup(self, uid: str) -> frozenset[str] | None:
        return self.entries.get(uid)

    def add(self, uid: str, cids: set[str] | frozenset[str]) -> None:
        self.entries[uid] = frozenset(cids)

    def remove(self, uid: str) -> None:
        if uid not in self.entries:
            raise NotFoundError(f"no policy entry for uid {uid[:16]}...")
        del self.entries[uid]

    def modify(self, uid: str, cids: set[str] | frozenset[str]) -> None:
        if uid not in self.entries:
            raise NotFoundError(f"no policy entry for uid {uid[:16]}...")
        self.entries[uid] = frozenset(cids)

    def grant(self, uid: str, cid: str) -> None:
        self.entries[uid] = self.entries.get(uid, frozenset()) | {cid}

    def to_json(self) -> str:
        return json.dumps(
            {uid: sorted(cids) for uid, cids in sorted(self.entries.items())},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        raw = json.loads(text)
        return cls({uid: frozenset(cids) for uid, cids in raw.items()})

    def digest_material(self) -> bytes:
        return self.to_json().encode("utf-8")

    def copy(self) -> "Policy":
        return Policy(dict(self.entries))
