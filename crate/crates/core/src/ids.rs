//! Identifier newtypes shared by every layer.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u16);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u16> for $name {
            fn from(v: u16) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// A sensor video stream.
    StreamId
);
id_type!(
    /// A computation process (sink) at the edge.
    ProcessId
);
id_type!(
    /// An egress interface. Each registered process owns exactly one.
    EgressId
);
id_type!(
    /// An edge ingress port (one per sensor stream).
    IngressPort
);

impl From<ProcessId> for EgressId {
    fn from(p: ProcessId) -> Self {
        EgressId(p.0)
    }
}
