"""Sequenced UDP data streams without retransmission.

Packets of each stream carry a DROP header with a per-stream packet counter;
the receiver audits the counter sequence and histograms the payload to prove
completeness.
"""

from .audit import AuditEvent, AuditReport, AuditState, EventKind, loss_upper_limit, reconcile
from .patterns import ConstantByte, Counting16, GeneratorConfig, PatternGenerator, Prng, pause_for_rate, split_block
from .protocol import DropHeader, decode_header, encode_header, id_distance
from .receiver import Receiver, RingConfig, RxStats, StreamBinding, run_receiver
from .sender import SendSummary, StopCondition, StreamConfig, StreamSender, send_stream
from .topology import AssignmentPlan, CcxLayout, enumerate_assignments, pin_current_thread, validate
from .transport import FaultPlan, HostCostModel, LoopbackTransport, SimulatedHostTransport, inject_faults
from .verify import WordHistogram, check_sum, check_uniform, render_histogram

__version__ = "0.1.0"

__all__ = [
    "AssignmentPlan", "AuditEvent", "AuditReport", "AuditState", "CcxLayout", "ConstantByte", "Counting16",
    "DropHeader", "EventKind", "FaultPlan", "GeneratorConfig", "HostCostModel", "LoopbackTransport",
    "PatternGenerator", "Prng", "Receiver", "RingConfig", "RxStats", "SendSummary", "SimulatedHostTransport",
    "StopCondition", "StreamBinding", "StreamConfig", "StreamSender", "WordHistogram", "check_sum",
    "check_uniform", "decode_header", "encode_header", "enumerate_assignments", "id_distance", "inject_faults",
    "loss_upper_limit", "pause_for_rate", "pin_current_thread", "reconcile", "render_histogram",
    "run_receiver", "send_stream", "split_block", "validate",
]
