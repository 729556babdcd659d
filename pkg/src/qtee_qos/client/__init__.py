"""User-side tooling: prepare, submit, fetch, recover."""

from .files import Bundle, RawResults
from .secrets import LocalSecretRecord, SecretStore
from .workflow import count_outcomes, prepare_bundle, recover_bits, recover_results
