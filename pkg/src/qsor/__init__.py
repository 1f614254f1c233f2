"""Onion circuit creation over classical, post-quantum and hybrid KEMs."""

from .errors import (
    AuthenticationError,
    DeliveryError,
    DescriptorError,
    DirectoryError,
    FrameError,
    InsufficientRelaysError,
    IntegrityError,
    LengthError,
    QsorError,
    RegistryError,
    TransportError,
    UnknownSchemeError,
    UnwrapError,
)
from .kem import (
    Family,
    HybridScheme,
    KemCiphertext,
    KemKeyPair,
    SchemeProfile,
    SchemeRegistry,
    SharedSecret,
    decapsulate,
    encapsulate,
    hybrid_combine,
    hybrid_decapsulate,
    hybrid_encapsulate,
    keygen,
)
from .onion import HopSpec, OnionMessage, Protocol, onion_size, unwrap_layer, wrap
from .transport import (
    Cell,
    fragment,
    packets_needed_paper_metric,
    packets_needed_transport_metric,
    reassemble,
)

__version__ = "0.1.0"
