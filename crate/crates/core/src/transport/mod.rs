//! Knock delivery: plain UDP sockets or an in-memory simulated network.
//!
//! Reception binds an ordinary UDP socket on the knock port; no packet
//! capture and no elevated privileges. Any ICMP port-unreachable replies a
//! client may see come from the OS, not from this code.

mod listener;
mod sim;
mod udp;

use std::net::{IpAddr, SocketAddr};
use std::time::{Duration, SystemTime};

use thiserror::Error;

pub use listener::{listen, ListenerHandle, ListenerStats, QUEUE_DEPTH};
pub use sim::{sim_scenario, CaptureRecord, Fate, SimControl, SimNetwork, SimTransport};
pub use udp::UdpTransport;

/// Largest payload sent, so a knock fits one unfragmented datagram.
pub const MAX_PAYLOAD: usize = 1200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("destination port 0 is not allowed")]
    PortZero,
    #[error("cannot bind port {port}: {message}")]
    Bind { port: u16, message: String },
    #[error("socket error: {0}")]
    Io(String),
}

/// A datagram as received. `src_addr` is whatever the packet claims and is
/// never trusted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnockPacket {
    pub payload: Vec<u8>,
    pub dst_port: u16,
    pub src_addr: SocketAddr,
    pub received_at: SystemTime,
}

/// Which datagrams reach the handler: those on `port` whose payload is
/// exactly `expected_len` bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterSpec {
    pub port: u16,
    pub expected_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendReceipt {
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub bytes: usize,
}

/// A bound receiving socket.
pub trait DatagramSocket: Send {
    fn local_port(&self) -> u16;
    /// Waits up to `timeout` for one datagram.
    fn recv(&mut self, timeout: Duration) -> Result<Option<(Vec<u8>, SocketAddr)>, TransportError>;
}

pub trait Transport: Send + Sync {
    fn send(&self, payload: &[u8], dst: SocketAddr) -> Result<SendReceipt, TransportError>;
    fn bind(&self, port: u16) -> Result<Box<dyn DatagramSocket>, TransportError>;
}

/// Sends one knock datagram. No reply is awaited: the server never answers.
pub fn send_knock(
    transport: &dyn Transport,
    payload: &[u8],
    dst_ip: IpAddr,
    dst_port: u16,
) -> Result<SendReceipt, TransportError> {
    if dst_port == 0 {
        return Err(TransportError::PortZero);
    }
    if payload.len() > MAX_PAYLOAD {
        return Err(TransportError::PayloadTooLarge(payload.len()));
    }
    transport.send(payload, SocketAddr::new(dst_ip, dst_port))
}
