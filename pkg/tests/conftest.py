"""Shared fixtures: a small seeded deployment and plaintext oracles."""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from qshield import client as ck
from qshield.host import EncryptedStore, HostService

SUM_JOIN_QUERY = "SELECT SUM(A4) FROM C1 JOIN C2 ON C1.A3 = C2.A3 WHERE C1.A1 <= 10"


def make_docs1(n: int, rnd: random.Random) -> list[dict]:
    return [
        {"A1": rnd.randrange(0, 40), "A3": rnd.randrange(0, 6), "A5": f"tag{i}"}
        for i in range(n)
    ]


def make_docs2(n: int, rnd: random.Random) -> list[dict]:
    return [
        {"A2": f"name{i}", "A3": rnd.randrange(0, 6), "A4": rnd.randrange(-50, 200)}
        for i in range(n)
    ]


def sum_join_oracle(docs1: list[dict], docs2: list[dict], bound: int = 10) -> int:
    """Brute-force evaluation of the running-example query over plaintext."""
    total = 0
    for d1 in docs1:
        if d1["A1"] <= bound:
            for d2 in docs2:
                if d1["A3"] == d2["A3"]:
                    total += d2["A4"]
    return total


@dataclass
class Deployment:
    host: HostService
    owner: ck.OwnerContext
    users: dict[int, ck.UserContext]
    docs1: list[dict]
    docs2: list[dict]
    cids: dict[str, str]


def build_deployment(
    tmp_path,
    n_users: int = 2,
    n_docs1: int = 20,
    n_docs2: int = 15,
    seed: int = 11,
    grants: dict[str, list[int]] | None = None,
) -> Deployment:
    rnd = random.Random(seed)
    grants = grants if grants is not None else {"C1": [1, 2], "C2": [1]}
    host = HostService(EncryptedStore(tmp_path / "store"))
    owner = ck.owner_setup(128, n_users)
    for i in range(1, n_users + 1):
        ck.register_user(owner, i)
    ck.owner_provision(owner, host)
    docs1 = make_docs1(n_docs1, rnd)
    docs2 = make_docs2(n_docs2, rnd)
    cids = {}
    for name, docs in (("C1", docs1), ("C2", docs2)):
        _, _, cid = ck.owner_upload(
            owner, host, docs[0], name=name, users=grants.get(name, [])
        )
        cids[name] = cid
        for doc in docs[1:]:
            ck.owner_upload(owner, host, doc, cid=cid)
    users = {
        i: ck.make_user_context(owner, i, host) for i in range(1, n_users + 1)
    }
    return Deployment(host, owner, users, docs1, docs2, cids)


@pytest.fixture
def deployment(tmp_path) -> Deployment:
    return build_deployment(tmp_path)
