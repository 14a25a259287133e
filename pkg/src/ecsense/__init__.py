"""Trajectory simulation of quantum sensing protocols protected by error
correction: code definitions, noise unravelings, EC scheduling and
sensitivity estimators."""

from .codes import (
    ClassicalCoupling,
    CodeSpec,
    ErrorSet,
    ProtocolParams,
    ProtocolSpec,
    SyndromeNode,
    SyndromeTable,
    check_correctability,
    complete_unitary,
)
from .hilbert import HilbertLayout, LinearOperator, QuantumState, fidelity
from .noise import ClassicalNoiseTrace, JumpChannel, PhotonRecord
from .protocols import PROTOCOLS, build_protocol

__version__ = "0.1.0"

__all__ = [
    "ClassicalCoupling", "CodeSpec", "ErrorSet", "ProtocolParams", "ProtocolSpec",
    "SyndromeNode", "SyndromeTable", "check_correctability", "complete_unitary",
    "HilbertLayout", "LinearOperator", "QuantumState", "fidelity",
    "ClassicalNoiseTrace", "JumpChannel", "PhotonRecord",
    "PROTOCOLS", "build_protocol",
]
