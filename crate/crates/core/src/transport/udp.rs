use std::io::ErrorKind;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr, UdpSocket};
use std::time::Duration;

use super::{DatagramSocket, SendReceipt, Transport, TransportError};

/// Real UDP. Listening sockets bind `bind_ip`; sends use a fresh ephemeral
/// socket of the destination's address family.
#[derive(Clone, Debug)]
pub struct UdpTransport {
    bind_ip: IpAddr,
}

impl UdpTransport {
    pub fn new(bind_ip: IpAddr) -> Self {
        UdpTransport { bind_ip }
    }
}

impl Default for UdpTransport {
    fn default() -> Self {
        UdpTransport::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED))
    }
}

impl Transport for UdpTransport {
    fn send(&self, payload: &[u8], dst: SocketAddr) -> Result<SendReceipt, TransportError> {
        let local: SocketAddr = match dst {
            SocketAddr::V4(_) => (Ipv4Addr::UNSPECIFIED, 0).into(),
            SocketAddr::V6(_) => (Ipv6Addr::UNSPECIFIED, 0).into(),
        };
        let io = |e: std::io::Error| TransportError::Io(e.to_string());
        let sock = UdpSocket::bind(local).map_err(io)?;
        let bytes = sock.send_to(payload, dst).map_err(io)?;
        Ok(SendReceipt { src: sock.local_addr().map_err(io)?, dst, bytes })
    }

    fn bind(&self, port: u16) -> Result<Box<dyn DatagramSocket>, TransportError> {
        let sock = UdpSocket::bind((self.bind_ip, port))
            .map_err(|e| TransportError::Bind { port, message: e.to_string() })?;
        let port = sock.local_addr().map(|a| a.port()).unwrap_or(port);
        Ok(Box::new(UdpListenSocket { sock, port, buf: vec![0; 65_536] }))
    }
}

struct UdpListenSocket {
    sock: UdpSocket,
    port: u16,
    buf: Vec<u8>,
}

impl DatagramSocket for UdpListenSocket {
    fn local_port(&self) -> u16 {
        self.port
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<(Vec<u8>, SocketAddr)>, TransportError> {
        let timeout = timeout.max(Duration::from_millis(1));
        self.sock.set_read_timeout(Some(timeout)).map_err(|e| TransportError::Io(e.to_string()))?;
        match self.sock.recv_from(&mut self.buf) {
            Ok((n, src)) => Ok(Some((self.buf[..n].to_vec(), src))),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => Ok(None),
            // A previous send's ICMP error can surface here; it is not fatal.
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => Ok(None),
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}
