"""Actor-learner runtime over in-process queues or TCP sockets."""

from .runtime import (ActorReport, Audit, Learner, LearnerReport, WeightVersion, actor_loop,
                      learner_loop, run_distributed)
from .transport import ChannelClosed, InprocHub, PeerLost, SocketHub, SocketLink
from .wire import (PROTOCOL_VERSION, FrameDecoder, Hello, MsgType, ProtocolError, Shutdown,
                   TransitionMsg, TruncatedFrame, WeightsRequest, WeightsSnapshot, decode_frame,
                   encode_frame, messages_equal)

__all__ = [
    "ActorReport", "Audit", "ChannelClosed", "FrameDecoder", "Hello", "InprocHub", "Learner",
    "LearnerReport", "MsgType", "PROTOCOL_VERSION", "PeerLost", "ProtocolError", "Shutdown",
    "SocketHub", "SocketLink", "TransitionMsg", "TruncatedFrame", "WeightVersion",
    "WeightsRequest", "WeightsSnapshot", "actor_loop", "decode_frame", "encode_frame",
    "learner_loop", "messages_equal", "run_distributed",
]
