"""Exception hierarchy shared across the pipeline.

Per-trajectory failures (backend errors, replay misses, episode aborts)
derive from TrajectoryError so the orchestrator can count them and move
on; everything else is fatal for the run.
"""


class TrajforgeError(Exception):
    """Base class for all package errors."""


class IngestError(TrajforgeError):
    """Tool-definition source could not be ingested at all."""


class ClusteringError(TrajforgeError):
    """Clustering preconditions violated (e.g. fewer tools than domains)."""


class EmbeddingError(TrajforgeError):
    """Embedding provider failed; message carries the offending tool_id."""


class SamplerError(TrajforgeError):
    """Coverage sampling called on an unusable tool space."""


class MetricsError(TrajforgeError):
    """Diversity metric preconditions violated (empty corpus, missing labels)."""


class ConfigError(TrajforgeError):
    """Pipeline configuration invalid or unresolvable."""


class TrajectoryError(TrajforgeError):
    """Failure scoped to one trajectory; the run continues."""


class BackendError(TrajectoryError):
    """Chat backend exhausted retries or returned an unusable reply."""


class ReplayMissError(BackendError):
    """Replay cassette has no entry for the request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"replay miss: no cassette entry for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class CassetteError(TrajforgeError):
    """Cassette file corrupt or unreadable; fatal because replay is broken."""


class BlueprintRejected(TrajectoryError):
    """Blueprint could not be parsed/validated within the repair budget."""


class EpisodeAborted(TrajectoryError):
    """Episode hit its turn cap, a schema-lock violation, or a backend failure."""


class CodeToolError(TrajectoryError):
    """Sandbox client could not obtain a usable execution result."""
