"""Exception hierarchy shared by all convis modules."""


class ConvisError(Exception):
    """Base class for every error raised by this package."""


class LexiconError(ConvisError):
    """Malformed lexicon file, dangling hypernym reference, or cycle."""


class UnknownSynsetError(ConvisError):
    """A synset id was not found in the hierarchy / definition matrix."""

    def __init__(self, synset_id: str):
        super().__init__(f"unknown synset id: {synset_id!r}")
        self.synset_id = synset_id


class NoPathError(ConvisError):
    """Two synsets live in disconnected components of the hierarchy."""


class BackendError(ConvisError):
    """An embedding backend failed (lookup miss, model failure, transport)."""


class BackendUnavailableError(BackendError):
    """The requested backend cannot be constructed in this environment."""


class CacheError(ConvisError):
    """A cache file is corrupt or inconsistent with the requested key."""


class ConfigError(ConvisError):
    """Invalid service/CLI configuration."""
