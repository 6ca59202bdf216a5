"""Exception taxonomy; the CLI maps these onto exit codes."""


class ConfigurationError(ValueError):
    """Invalid parameters, incompatible meshes/levels, malformed config. Exit code 2."""


class LocationError(ConfigurationError):
    """A query point lies outside the target domain."""


class NumericError(RuntimeError):
    """A numerical procedure failed (solver stall, NaN state, ...). Exit code 3."""


class NotEmbeddableError(NumericError):
    """Circulant embedding kept negative eigenvalues after maximal padding (strict mode)."""


class KernelNotPsdError(NumericError):
    """A dense covariance matrix was indefinite beyond tolerance."""
