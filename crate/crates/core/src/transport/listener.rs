use std::sync::atomic::{AtomicU16, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError, TrySendError};
use log::{debug, warn};

use super::{DatagramSocket, FilterSpec, KnockPacket, Transport, TransportError};

/// Packets buffered between the socket and a busy handler before new ones
/// are dropped.
pub const QUEUE_DEPTH: usize = 1024;

const POLL: Duration = Duration::from_millis(20);

/// Running counters of one listener.
#[derive(Debug, Default)]
pub struct ListenerStats {
    received: AtomicU64,
    delivered: AtomicU64,
    filtered: AtomicU64,
    overflowed: AtomicU64,
}

impl ListenerStats {
    /// Datagrams read from the socket.
    pub fn received(&self) -> u64 {
        self.received.load(Ordering::SeqCst)
    }

    /// Packets the handler has finished with.
    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::SeqCst)
    }

    /// Datagrams dropped by the length gate.
    pub fn filtered(&self) -> u64 {
        self.filtered.load(Ordering::SeqCst)
    }

    /// Packets dropped because the handler queue was full.
    pub fn overflowed(&self) -> u64 {
        self.overflowed.load(Ordering::SeqCst)
    }

    /// True once every received datagram has been filtered, dropped or
    /// handled.
    pub fn settled(&self) -> bool {
        self.received() == self.delivered() + self.filtered() + self.overflowed()
    }
}

enum Control {
    Rebind(u16, Sender<Result<(), TransportError>>),
    Stop,
}

/// Handle to a running listener. Dropping it stops the listener.
pub struct ListenerHandle {
    control: Sender<Control>,
    receiver: Option<JoinHandle<()>>,
    dispatcher: Option<JoinHandle<()>>,
    stats: Arc<ListenerStats>,
    port: Arc<AtomicU16>,
}

impl ListenerHandle {
    pub fn port(&self) -> u16 {
        self.port.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> Arc<ListenerStats> {
        self.stats.clone()
    }

    /// Moves the listener to `port`. The new socket is bound before the old
    /// one closes; on failure the listener stays where it was.
    pub fn rebind(&self, port: u16) -> Result<(), TransportError> {
        let (tx, rx) = bounded(1);
        self.control
            .send(Control::Rebind(port, tx))
            .map_err(|_| TransportError::Io("listener stopped".into()))?;
        rx.recv().map_err(|_| TransportError::Io("listener stopped".into()))?
    }

    /// Stops reading, lets the handler finish queued packets, and joins both
    /// threads.
    pub fn stop(&mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let _ = self.control.send(Control::Stop);
        for h in [self.receiver.take(), self.dispatcher.take()].into_iter().flatten() {
            if h.join().is_err() {
                warn!("listener thread panicked");
            }
        }
    }
}

impl Drop for ListenerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `filter.port` and hands every datagram of exactly
/// `filter.expected_len` bytes to `handler`, in arrival order, on a
/// dedicated thread. Other datagrams are counted and dropped.
pub fn listen<F>(filter: FilterSpec, transport: Arc<dyn Transport>, handler: F) -> Result<ListenerHandle, TransportError>
where
    F: FnMut(KnockPacket) + Send + 'static,
{
    let socket = transport.bind(filter.port)?;
    let stats = Arc::new(ListenerStats::default());
    let port = Arc::new(AtomicU16::new(socket.local_port()));
    let (control_tx, control_rx) = unbounded();
    let (packet_tx, packet_rx) = bounded(QUEUE_DEPTH);

    let receiver = {
        let (stats, port) = (stats.clone(), port.clone());
        thread::Builder::new()
            .name("knock-recv".into())
            .spawn(move || receive_loop(socket, transport, filter.expected_len, control_rx, packet_tx, &stats, &port))
            .map_err(|e| TransportError::Io(e.to_string()))?
    };
    let dispatcher = {
        let stats = stats.clone();
        thread::Builder::new()
            .name("knock-dispatch".into())
            .spawn(move || dispatch_loop(packet_rx, handler, &stats))
            .map_err(|e| TransportError::Io(e.to_string()))?
    };
    Ok(ListenerHandle { control: control_tx, receiver: Some(receiver), dispatcher: Some(dispatcher), stats, port })
}

fn receive_loop(
    mut socket: Box<dyn DatagramSocket>,
    transport: Arc<dyn Transport>,
    expected_len: usize,
    control: Receiver<Control>,
    packets: Sender<KnockPacket>,
    stats: &ListenerStats,
    port: &AtomicU16,
) {
    loop {
        match control.try_recv() {
            Ok(Control::Stop) | Err(TryRecvError::Disconnected) => return,
            Ok(Control::Rebind(p, reply)) => {
                let result = if p == socket.local_port() {
                    Ok(())
                } else {
                    transport.bind(p).map(|s| {
                        debug!("listener moved from port {} to {}", socket.local_port(), s.local_port());
                        socket = s;
                        port.store(socket.local_port(), Ordering::SeqCst);
                    })
                };
                let _ = reply.send(result);
                continue;
            }
            Err(TryRecvError::Empty) => {}
        }
        let (payload, src_addr) = match socket.recv(POLL) {
            Ok(Some(d)) => d,
            Ok(None) => continue,
            Err(e) => {
                warn!("receive failed: {e}");
                thread::sleep(POLL);
                continue;
            }
        };
        stats.received.fetch_add(1, Ordering::SeqCst);
        if payload.len() != expected_len {
            stats.filtered.fetch_add(1, Ordering::SeqCst);
            continue;
        }
        let packet = KnockPacket { payload, dst_port: socket.local_port(), src_addr, received_at: SystemTime::now() };
        match packets.try_send(packet) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                stats.overflowed.fetch_add(1, Ordering::SeqCst);
            }
            Err(TrySendError::Disconnected(_)) => return,
        }
    }
}

fn dispatch_loop<F: FnMut(KnockPacket)>(packets: Receiver<KnockPacket>, mut handler: F, stats: &ListenerStats) {
    for packet in packets {
        handler(packet);
        stats.delivered.fetch_add(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{send_knock, SimNetwork};
    use std::net::{IpAddr, Ipv4Addr};
    use std::sync::Mutex;
    use std::time::Instant;

    const SERVER: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1));
    const CLIENT: IpAddr = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2));

    fn wait_until(cond: impl Fn() -> bool) {
        let deadline = Instant::now() + Duration::from_secs(5);
        while !cond() {
            assert!(Instant::now() < deadline, "timed out");
            thread::sleep(Duration::from_millis(2));
        }
    }

    #[test]
    fn length_gate_and_delivery() {
        let net = SimNetwork::new();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        let h = listen(FilterSpec { port: 4000, expected_len: 4 }, Arc::new(net.endpoint(SERVER)), move |p| {
            sink.lock().unwrap().push(p)
        })
        .unwrap();
        let c = net.endpoint(CLIENT);
        send_knock(&c, b"abc", SERVER, 4000).unwrap();
        send_knock(&c, b"abcd", SERVER, 4000).unwrap();
        send_knock(&c, b"abcde", SERVER, 4000).unwrap();
        let stats = h.stats();
        wait_until(|| stats.received() == 3 && stats.settled());
        assert_eq!((stats.filtered(), stats.delivered()), (2, 1));
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].payload, b"abcd");
        assert_eq!(seen[0].dst_port, 4000);
        assert_eq!(seen[0].src_addr.ip(), CLIENT);
    }

    #[test]
    fn rebind_moves_port() {
        let net = SimNetwork::new();
        let count = Arc::new(AtomicU64::new(0));
        let c2 = count.clone();
        let mut h = listen(FilterSpec { port: 4000, expected_len: 1 }, Arc::new(net.endpoint(SERVER)), move |p| {
            assert_eq!(p.dst_port, 5000);
            c2.fetch_add(1, Ordering::SeqCst);
        })
        .unwrap();
        h.rebind(5000).unwrap();
        assert_eq!(h.port(), 5000);
        assert!(!net.is_bound((SERVER, 4000).into()));
        assert!(net.is_bound((SERVER, 5000).into()));
        let c = net.endpoint(CLIENT);
        send_knock(&c, b"x", SERVER, 4000).unwrap();
        send_knock(&c, b"y", SERVER, 5000).unwrap();
        wait_until(|| count.load(Ordering::SeqCst) == 1);
        let _other = net.endpoint(SERVER).bind(6000).unwrap();
        assert!(h.rebind(6000).is_err());
        assert_eq!(h.port(), 5000);
        h.stop();
        assert!(!net.is_bound((SERVER, 5000).into()));
    }

    #[test]
    fn overflow_is_counted() {
        let net = SimNetwork::new();
        let (gate_tx, gate_rx) = bounded::<()>(0);
        let h = listen(FilterSpec { port: 1, expected_len: 1 }, Arc::new(net.endpoint(SERVER)), move |_| {
            let _ = gate_rx.recv();
        })
        .unwrap();
        let c = net.endpoint(CLIENT);
        let total = QUEUE_DEPTH as u64 + 50;
        for _ in 0..total {
            send_knock(&c, b"z", SERVER, 1).unwrap();
        }
        let stats = h.stats();
        wait_until(|| stats.received() == total);
        // At most one packet sits in the blocked handler, QUEUE_DEPTH behind it.
        wait_until(|| stats.overflowed() >= total - QUEUE_DEPTH as u64 - 1);
        drop(gate_tx);
        wait_until(|| stats.settled());
        assert_eq!(stats.delivered() + stats.overflowed(), total);
        assert!(stats.delivered() <= QUEUE_DEPTH as u64 + 1);
    }
}
