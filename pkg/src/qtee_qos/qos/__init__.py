"""Cloud-side quantum operating system: intake, durable store, scheduling, dispatch."""

from .jobs import Job, JobResults, JobState
from .service import FetchResult, MigrationError, QOSError, QOSService, SubmitRequest
from .store import JobStore, RecoveryError, recover_store
