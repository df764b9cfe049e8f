"""masksim: deterministic smart-mask compliance simulation framework.

A DAG ledger with authenticated message channels is the communication
backbone; a personalised feedback controller prices token bonds that
incentivise mask wearing; an agent-based epidemic model, a UWB indoor
positioning pipeline and a gas-sensor mask detector provide the physical
layer.  Everything is reproducible bit-for-bit from a single seed.
"""

from .bus import Gateway, MessageBus, Subscription
from .controller import (ComplianceController, ComplianceRecord,
                         ControllerParams, LOGISTIC, MonotoneLink,
                         compliance_probability, simulate_compliance,
                         stake_amount)
from .epidemic import EpidemicSeries, Health, World, WorldConfig
from .escrow import Bond, BondState, EscrowBank, PenaltyPolicy, Wallet
from .ledger import (ChannelMode, ChannelReader, MamChannel, Tangle,
                     channel_address, mam_fetch, mam_publish)
from .positioning import (Anchor, FixResult, TwrTimestamps, distance,
                          multilaterate, simulate_exchange, time_of_flight)
from .sensing import (CombineRule, DetectorConfig, GasSample, MaskDetector,
                      StreamLevels, publish_status, synth_stream)

__version__ = "0.1.0"

__all__ = [
    "Anchor", "Bond", "BondState", "ChannelMode", "ChannelReader",
    "CombineRule", "ComplianceController", "ComplianceRecord",
    "ControllerParams", "DetectorConfig", "EpidemicSeries", "EscrowBank",
    "FixResult", "GasSample", "Gateway", "Health", "LOGISTIC", "MamChannel",
    "MaskDetector", "MessageBus", "MonotoneLink", "PenaltyPolicy",
    "StreamLevels", "Subscription", "Tangle", "TwrTimestamps", "Wallet",
    "World", "WorldConfig", "channel_address", "compliance_probability",
    "distance", "mam_fetch", "mam_publish", "multilaterate",
    "publish_status", "simulate_compliance", "simulate_exchange",
    "stake_amount", "synth_stream", "time_of_flight",
]
