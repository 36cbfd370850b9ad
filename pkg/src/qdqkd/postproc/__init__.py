"""Classical post-processing: Cascade reconciliation, Trevisan extraction, one-time pad."""

from .cascade import ReconciliationError, reconcile
from .keys import InsufficientKey, KeyMaterial, KeyReuseError, otp_decrypt, otp_encrypt
from .trevisan import ExtractorParams, one_bit_extract, trevisan_extract, weak_design

__all__ = ["ExtractorParams", "InsufficientKey", "KeyMaterial", "KeyReuseError", "ReconciliationError",
           "one_bit_extract", "otp_decrypt", "otp_encrypt", "reconcile", "trevisan_extract", "weak_design"]
