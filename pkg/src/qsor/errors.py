"""Exception hierarchy shared by all qsor modules.

Relay and unwrap code catches :class:`QsorError` to decide "drop and log";
the subclasses exist so callers can tell a wrong-length input from a
tampered ciphertext from a truncated frame.
"""


class QsorError(Exception):
    """Base class for all errors raised by this package."""


class UnknownSchemeError(QsorError):
    """A scheme id or name is not present in the registry."""


class RegistryError(QsorError):
    """Invalid scheme registration or malformed registry config."""


class LengthError(QsorError):
    """A key, ciphertext or secret has the wrong byte length."""


class FrameError(QsorError):
    """A wire frame (onion layer or transport cell) is malformed or truncated."""


class UnwrapError(QsorError):
    """A layer or ciphertext could not be opened with the given keys."""


class IntegrityError(UnwrapError):
    """KEM ciphertext failed its authenticity check (tampered or wrong key)."""


class AuthenticationError(UnwrapError):
    """Authenticated decryption of a layer failed (wrong node or tampering)."""


class TransportError(QsorError):
    """A cell could not be sent or received (unknown peer, closed endpoint)."""


class DescriptorError(QsorError):
    """A node descriptor is malformed (bad keys, missing fields)."""


class DirectoryError(QsorError):
    """Directory request failed or its response could not be parsed."""


class InsufficientRelaysError(QsorError):
    """Not enough distinct relays to build a consensus or select a path."""


class DeliveryError(QsorError):
    """An end-to-end simulation did not deliver the payload."""
