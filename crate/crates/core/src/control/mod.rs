//! Control plane: wire codec, ack/retry transport and the edge reconciler.

pub mod codec;
pub mod reconcile;
pub mod transport;

pub use codec::{
    Ack, AckStatus, CodecError, ControlMessage, Fixed16, PolicyUpdateMsg, QualityNotify, RegisterAction, SinkRegister,
    SinkRequirement,
};
pub use reconcile::{wire_threshold, ControlChange, Plan, ReconcileOutcome, Reconciler, Registration, Rejection};
pub use transport::{request, AckKey, RetryPolicy, RetryQueue, TransportError, Unacked};
