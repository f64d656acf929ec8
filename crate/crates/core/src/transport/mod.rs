//! Edge-cloud message exchange and byte accounting.

pub mod compression;
pub mod link;
pub mod message;

pub use compression::CompressionModel;
pub use link::{sim_pair, Sequencer, SimEndpoint, StreamTransport, Transport};
pub use message::{bandwidth_kbps, Direction, Header, LinkStats, Message, MessageKind, Payload, HEADER_LEN};
