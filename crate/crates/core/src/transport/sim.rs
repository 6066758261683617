use std::collections::{HashMap, VecDeque};
use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{DatagramSocket, SendReceipt, Transport, TransportError};

const EPHEMERAL_START: u16 = 49_152;

/// Scripted interference, applied to sent packets in order. Each control
/// covers the next `n` sends and is then used up; with no control left,
/// packets pass untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimControl {
    Pass(u32),
    Drop(u32),
    Duplicate(u32),
    /// Hold the next `n` packets for `ticks` ticks.
    Delay(u32, u64),
}

/// What the network did with a sent packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Delivered,
    Dropped,
    Duplicated,
    Delayed { until_tick: u64 },
}

/// One entry per send, in send order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureRecord {
    pub seq: u64,
    pub tick: u64,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub payload: Vec<u8>,
    pub fate: Fate,
    /// Copies placed in a bound socket's queue so far.
    pub deliveries: u32,
}

struct Pending {
    due: u64,
    seq: u64,
}

#[derive(Default)]
struct SimState {
    tick: u64,
    seq: u64,
    controls: VecDeque<SimControl>,
    queues: HashMap<SocketAddr, VecDeque<(Vec<u8>, SocketAddr)>>,
    pending: Vec<Pending>,
    log: Vec<CaptureRecord>,
    next_ephemeral: HashMap<IpAddr, u16>,
}

impl SimState {
    fn next_control(&mut self) -> SimControl {
        let Some(front) = self.controls.front_mut() else {
            return SimControl::Pass(1);
        };
        let (count, one) = match front {
            SimControl::Pass(n) => (n, SimControl::Pass(1)),
            SimControl::Drop(n) => (n, SimControl::Drop(1)),
            SimControl::Duplicate(n) => (n, SimControl::Duplicate(1)),
            SimControl::Delay(n, t) => {
                let t = *t;
                (n, SimControl::Delay(1, t))
            }
        };
        *count -= 1;
        if *count == 0 {
            self.controls.pop_front();
        }
        one
    }

    fn ephemeral(&mut self, ip: IpAddr) -> u16 {
        let next = self.next_ephemeral.entry(ip).or_insert(EPHEMERAL_START);
        loop {
            let port = *next;
            *next = if port == u16::MAX { EPHEMERAL_START } else { port + 1 };
            if !self.queues.contains_key(&SocketAddr::new(ip, port)) {
                return port;
            }
        }
    }

    /// Queues copies of logged packet `seq` if its destination is bound.
    fn deliver(&mut self, seq: u64, copies: u32) {
        let rec = &mut self.log[seq as usize];
        if let Some(q) = self.queues.get_mut(&rec.dst) {
            for _ in 0..copies {
                q.push_back((rec.payload.clone(), rec.src));
            }
            rec.deliveries += copies;
        }
    }
}

fn count_is_zero(c: &SimControl) -> bool {
    matches!(c, SimControl::Pass(0) | SimControl::Drop(0) | SimControl::Duplicate(0) | SimControl::Delay(0, _))
}

/// Deterministic in-memory network driven by an explicit tick counter.
/// Clones share the same network.
#[derive(Clone, Default)]
pub struct SimNetwork {
    inner: Arc<(Mutex<SimState>, Condvar)>,
}

impl SimNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    fn state(&self) -> MutexGuard<'_, SimState> {
        self.inner.0.lock().unwrap()
    }

    /// A host on the network with address `ip`.
    pub fn endpoint(&self, ip: IpAddr) -> SimTransport {
        SimTransport { net: self.clone(), ip }
    }

    pub fn push_controls(&self, controls: impl IntoIterator<Item = SimControl>) {
        let mut s = self.state();
        s.controls.extend(controls.into_iter().filter(|c| !count_is_zero(c)));
    }

    pub fn now(&self) -> u64 {
        self.state().tick
    }

    /// Advances the clock by one tick and releases due delayed packets in
    /// send order.
    pub fn tick(&self) {
        self.advance(1);
    }

    pub fn advance(&self, ticks: u64) {
        let mut s = self.state();
        s.tick += ticks;
        let now = s.tick;
        let mut due: Vec<u64> = Vec::new();
        s.pending.retain(|p| {
            if p.due <= now {
                due.push(p.seq);
                false
            } else {
                true
            }
        });
        due.sort_unstable();
        for seq in due {
            s.deliver(seq, 1);
        }
        drop(s);
        self.inner.1.notify_all();
    }

    pub fn capture(&self) -> Vec<CaptureRecord> {
        self.state().log.clone()
    }

    /// Number of logged sends from host `src_ip` to host `dst_ip`, any ports.
    pub fn sends_between(&self, src_ip: IpAddr, dst_ip: IpAddr) -> usize {
        self.state().log.iter().filter(|r| r.src.ip() == src_ip && r.dst.ip() == dst_ip).count()
    }

    /// Whether a socket is currently bound at `addr`.
    pub fn is_bound(&self, addr: SocketAddr) -> bool {
        self.state().queues.contains_key(&addr)
    }

    fn send_from(&self, src: SocketAddr, payload: &[u8], dst: SocketAddr) -> SendReceipt {
        let mut s = self.state();
        let control = s.next_control();
        let seq = s.seq;
        s.seq += 1;
        let tick = s.tick;
        let fate = match control {
            SimControl::Pass(_) => Fate::Delivered,
            SimControl::Drop(_) => Fate::Dropped,
            SimControl::Duplicate(_) => Fate::Duplicated,
            SimControl::Delay(_, t) => Fate::Delayed { until_tick: tick + t },
        };
        s.log.push(CaptureRecord { seq, tick, src, dst, payload: payload.to_vec(), fate, deliveries: 0 });
        match fate {
            Fate::Delivered => s.deliver(seq, 1),
            Fate::Duplicated => s.deliver(seq, 2),
            Fate::Dropped => {}
            Fate::Delayed { until_tick } => {
                if until_tick <= tick {
                    s.deliver(seq, 1);
                } else {
                    s.pending.push(Pending { due: until_tick, seq });
                }
            }
        }
        drop(s);
        self.inner.1.notify_all();
        SendReceipt { src, dst, bytes: payload.len() }
    }
}

/// One host's view of a [`SimNetwork`].
#[derive(Clone)]
pub struct SimTransport {
    net: SimNetwork,
    ip: IpAddr,
}

impl SimTransport {
    pub fn ip(&self) -> IpAddr {
        self.ip
    }

    pub fn network(&self) -> &SimNetwork {
        &self.net
    }
}

impl Transport for SimTransport {
    fn send(&self, payload: &[u8], dst: SocketAddr) -> Result<SendReceipt, TransportError> {
        let port = self.net.state().ephemeral(self.ip);
        Ok(self.net.send_from(SocketAddr::new(self.ip, port), payload, dst))
    }

    fn bind(&self, port: u16) -> Result<Box<dyn DatagramSocket>, TransportError> {
        let mut s = self.net.state();
        let port = if port == 0 { s.ephemeral(self.ip) } else { port };
        let addr = SocketAddr::new(self.ip, port);
        if s.queues.contains_key(&addr) {
            return Err(TransportError::Bind { port, message: "address in use".into() });
        }
        s.queues.insert(addr, VecDeque::new());
        Ok(Box::new(SimSocket { net: self.net.clone(), addr }))
    }
}

struct SimSocket {
    net: SimNetwork,
    addr: SocketAddr,
}

impl DatagramSocket for SimSocket {
    fn local_port(&self) -> u16 {
        self.addr.port()
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<(Vec<u8>, SocketAddr)>, TransportError> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &*self.net.inner;
        let mut s = lock.lock().unwrap();
        loop {
            if let Some(d) = s.queues.get_mut(&self.addr).and_then(VecDeque::pop_front) {
                return Ok(Some(d));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            s = cv.wait_timeout(s, deadline - now).unwrap().0;
        }
    }
}

impl Drop for SimSocket {
    fn drop(&mut self) {
        self.net.state().queues.remove(&self.addr);
    }
}

/// A fresh network with `ops` queued as its interference script.
pub fn sim_scenario(ops: impl IntoIterator<Item = SimControl>) -> SimNetwork {
    let net = SimNetwork::new();
    net.push_controls(ops);
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::send_knock;
    use std::net::Ipv4Addr;

    const CLIENT: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2));
    const SERVER: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1));

    fn recv_all(sock: &mut Box<dyn DatagramSocket>) -> Vec<Vec<u8>> {
        std::iter::from_fn(|| sock.recv(Duration::ZERO).unwrap().map(|(p, _)| p)).collect()
    }

    #[test]
    fn pass_through_and_capture() {
        let net = SimNetwork::new();
        let mut sock = net.endpoint(SERVER).bind(7000).unwrap();
        let payload = [b'a'; 128];
        send_knock(&net.endpoint(CLIENT), &payload, SERVER, 7000).unwrap();
        let log = net.capture();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].payload.len(), 128);
        assert_eq!(log[0].src, SocketAddr::new(CLIENT, EPHEMERAL_START));
        assert_eq!(recv_all(&mut sock), vec![payload.to_vec()]);
    }

    #[test]
    fn send_preconditions() {
        let t = SimNetwork::new().endpoint(CLIENT);
        assert_eq!(send_knock(&t, &[0; 2000], SERVER, 1), Err(TransportError::PayloadTooLarge(2000)));
        assert_eq!(send_knock(&t, b"x", SERVER, 0), Err(TransportError::PortZero));
        assert!(t.network().capture().is_empty());
    }

    #[test]
    fn controls_apply_in_order() {
        let net = sim_scenario([SimControl::Drop(1), SimControl::Duplicate(1), SimControl::Pass(1), SimControl::Delay(2, 3)]);
        let mut sock = net.endpoint(SERVER).bind(9).unwrap();
        let c = net.endpoint(CLIENT);
        for p in [b"p0", b"p1", b"p2", b"p3", b"p4", b"p5"] {
            send_knock(&c, p, SERVER, 9).unwrap();
        }
        assert_eq!(recv_all(&mut sock), vec![b"p1".to_vec(), b"p1".to_vec(), b"p2".to_vec(), b"p5".to_vec()]);
        net.advance(2);
        assert!(recv_all(&mut sock).is_empty());
        net.tick();
        assert_eq!(recv_all(&mut sock), vec![b"p3".to_vec(), b"p4".to_vec()]);
        let fates: Vec<_> = net.capture().iter().map(|r| r.fate).collect();
        assert_eq!(
            fates,
            vec![
                Fate::Dropped,
                Fate::Duplicated,
                Fate::Delivered,
                Fate::Delayed { until_tick: 3 },
                Fate::Delayed { until_tick: 3 },
                Fate::Delivered
            ]
        );
    }

    #[test]
    fn unbound_and_rebound_ports() {
        let net = sim_scenario([SimControl::Pass(1), SimControl::Delay(1, 1)]);
        let c = net.endpoint(CLIENT);
        send_knock(&c, b"lost", SERVER, 5).unwrap();
        let sock = net.endpoint(SERVER).bind(5).unwrap();
        assert!(net.endpoint(SERVER).bind(5).is_err());
        send_knock(&c, b"late", SERVER, 5).unwrap();
        drop(sock);
        net.tick();
        assert!(net.capture().iter().all(|r| r.deliveries == 0));
        assert!(!net.is_bound(SocketAddr::new(SERVER, 5)));
    }

    #[test]
    fn identical_scripts_identical_logs() {
        let run = || {
            let net = sim_scenario([SimControl::Duplicate(1), SimControl::Drop(2), SimControl::Delay(1, 4)]);
            let _s = net.endpoint(SERVER).bind(80).unwrap();
            let c = net.endpoint(CLIENT);
            for i in 0..6u8 {
                send_knock(&c, &[i; 16], SERVER, 80).unwrap();
                net.tick();
            }
            net.capture()
        };
        assert_eq!(run(), run());
    }
}
