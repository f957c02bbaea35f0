"""QShield: secure SQL-like queries over encrypted outsourced data.

A data owner splits the decryption capability of an AEAD data key
between an isolated trusted core (the enclave analogue) and individual
data users via pairing-based secret sharing.  Users query the encrypted
store through SQL-like expressions; the untrusted host schedules the
four relational operators against the core under a per-query endurance
budget, and every response carries a signed execution trace that the
user audits against the plan derived from their own query text.
"""

from .client import (
    AuditReport,
    OwnerContext,
    UserContext,
    audit_proof,
    make_user_context,
    owner_provision,
    owner_setup,
    owner_update_policy,
    owner_upload,
    register_user,
    user_make_token,
    user_open_response,
    user_query,
)
from .core import ResponseEnvelope, TrustedCore
from .distributed import Broker, Worker, default_worker_pool
from .documents import (
    AttrRef,
    Attribute,
    Collection,
    DataFile,
    Document,
    Literal,
    Predicate,
    aggregate,
    chunk,
    collection_id,
    join,
    project,
    select,
)
from .host import EncryptedStore, HostService, QueryRequest, measurement
from .pairing import G1Point, GroupContext, GTElement, pairing
from .policy import Policy
from .query import QueryPlan, compile_query, compute_endurance, parse, plan
from .sharing import (
    EnclaveShare,
    MasterSecret,
    ShareSet,
    SymmetricKey,
    UserShare,
    decrypt,
    encrypt,
    reconstruct_key,
    setup,
)

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "AttrRef",
    "Attribute",
    "Broker",
    "Collection",
    "DataFile",
    "Document",
    "EnclaveShare",
    "EncryptedStore",
    "G1Point",
    "GTElement",
    "GroupContext",
    "HostService",
    "Literal",
    "MasterSecret",
    "OwnerContext",
    "Policy",
    "Predicate",
    "QueryPlan",
    "QueryRequest",
    "ResponseEnvelope",
    "ShareSet",
    "SymmetricKey",
    "TrustedCore",
    "UserContext",
    "UserShare",
    "Worker",
    "aggregate",
    "audit_proof",
    "chunk",
    "collection_id",
    "compile_query",
    "compute_endurance",
    "decrypt",
    "default_worker_pool",
    "encrypt",
    "join",
    "make_user_context",
    "measurement",
    "owner_provision",
    "owner_setup",
    "owner_update_policy",
    "owner_upload",
    "pairing",
    "parse",
    "plan",
    "project",
    "reconstruct_key",
    "register_user",
    "select",
    "setup",
    "user_make_token",
    "user_open_response",
    "user_query",
]
