"""Per-element secure aggregation: an index of the sum is revealed only when enough clients contributed to it."""

from .adversary import AdversaryConfig, AttackOutcome, measure_leakage
from .crypto import ModPGroup, X25519Group, key_agree, prf, prg_elements, ss_recon, ss_share, sym_decrypt, sym_encrypt
from .harness import RoundResult, SimulatedNetwork, Transcript, oracle, run_round
from .ledger import CostLedger
from .params import ParamError, ProtocolParams, derive_params
from .ring import MaskScope, RevealedAggregate
from .roles import ProtocolAbort

__all__ = [
    "AdversaryConfig", "AttackOutcome", "CostLedger", "MaskScope", "ModPGroup", "ParamError",
    "ProtocolAbort", "ProtocolParams", "RevealedAggregate", "RoundResult", "SimulatedNetwork",
    "Transcript", "X25519Group", "derive_params", "key_agree", "measure_leakage", "oracle", "prf",
    "prg_elements", "run_round", "ss_recon", "ss_share", "sym_decrypt", "sym_encrypt",
]
