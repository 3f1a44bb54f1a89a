"""Minimal RNS-CKKS: the encode / encrypt / multiply / rotate-and-sum circuit."""

from .encoding import Plaintext, decode, encode, next_power_of_two
from .errors import (
    CkksError,
    DepthExhausted,
    InvalidParams,
    LevelMismatch,
    MalformedFrame,
    MissingGaloisKey,
    Overflow,
    ParamsMismatch,
    ScaleMismatch,
    VersionMismatch,
)
from .params import CkksParams, SecurityLabel, default_params, small_params
from .scheme import (
    Ciphertext,
    EvalKeys,
    KeySet,
    PublicKey,
    SecretKey,
    SwitchingKey,
    decrypt,
    encrypt,
    he_add,
    he_mul,
    keygen,
    relinearize,
    rescale,
    rescale_plaintext,
    rotate,
    rotate_and_sum,
)
from .serialize import (
    deserialize_ciphertext,
    deserialize_keys,
    serialize_ciphertext,
    serialize_keys,
)

__all__ = [name for name in dir() if not name.startswith("_")]
