//! Bus bridging over TCP.
//!
//! One connection carries every topic in both directions as a stream of
//! [`codec`](super::codec) frames. Each side republishes what it receives
//! under an origin id owned by the link, and forwards everything else it
//! sees, so a star of clients around one server never loops.

use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::codec::{encode_frame, read_frame};
use super::Bus;

/// Outbound queue depth per link before drop-oldest kicks in.
pub const LINK_QUEUE_CAPACITY: usize = 1 << 16;
const POLL: Duration = Duration::from_millis(20);
const RECONNECT_INTERVAL: Duration = Duration::from_millis(200);

/// Pump frames between `stream` and `bus` until either side fails or `stop` is set.
/// `on_ready` runs once the outbound tap is registered.
fn run_link(
    bus: &Bus,
    stream: TcpStream,
    stop: &AtomicBool,
    on_ready: impl FnOnce(),
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let origin = bus.new_origin();
    let tap = bus.tap(LINK_QUEUE_CAPACITY, Some(origin));
    on_ready();
    let done = Arc::new(AtomicBool::new(false));

    let mut read_half = stream.try_clone()?;
    let reader = {
        let bus = bus.clone();
        let done = done.clone();
        thread::spawn(move || {
            loop {
                match read_frame(&mut read_half) {
                    Ok(Some(msg)) => bus.publish_from(origin, msg),
                    Ok(None) => break,
                    Err(e) => {
                        debug!("bus link read ended: {e}");
                        break;
                    }
                }
            }
            done.store(true, Ordering::Release);
        })
    };

    let mut out = BufWriter::new(stream.try_clone()?);
    let result = (|| -> io::Result<()> {
        while !done.load(Ordering::Acquire) && !stop.load(Ordering::Acquire) {
            let Some(msg) = tap.recv_timeout(POLL) else {
                continue;
            };
            write_msg(&mut out, &msg)?;
            while let Some(msg) = tap.try_recv() {
                write_msg(&mut out, &msg)?;
            }
            out.flush()?;
        }
        Ok(())
    })();
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader.join();
    result
}

fn write_msg<W: Write>(out: &mut W, msg: &super::BusMessage) -> io::Result<()> {
    match encode_frame(msg) {
        Ok(bytes) => out.write_all(&bytes),
        Err(e) => {
            warn!("dropping unencodable message on {}: {e}", msg.topic);
            Ok(())
        }
    }
}

/// Accepts remote buses and bridges each connection to the local bus.
pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    active: Arc<AtomicUsize>,
    accept: Option<JoinHandle<()>>,
}

/// Bind `addr` and start serving. Binding happens before this returns, so a
/// port conflict is reported immediately.
pub fn serve(bus: &Bus, addr: impl ToSocketAddrs) -> io::Result<BusServer> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let streams: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
    let active = Arc::new(AtomicUsize::new(0));

    let accept = {
        let bus = bus.clone();
        let stop = stop.clone();
        let streams = streams.clone();
        let active = active.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Acquire) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        debug!("bus client connected from {peer}");
                        if stream.set_nonblocking(false).is_err() {
                            continue;
                        }
                        if let Ok(clone) = stream.try_clone() {
                            streams.lock().unwrap().push(clone);
                        }
                        let bus = bus.clone();
                        let stop = stop.clone();
                        let active = active.clone();
                        thread::spawn(move || {
                            let mut counted = false;
                            let r = run_link(&bus, stream, &stop, || {
                                active.fetch_add(1, Ordering::AcqRel);
                                counted = true;
                            });
                            if let Err(e) = r {
                                debug!("bus client {peer} dropped: {e}");
                            }
                            if counted {
                                active.fetch_sub(1, Ordering::AcqRel);
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                    Err(e) => {
                        warn!("bus accept failed: {e}");
                        thread::sleep(POLL);
                    }
                }
            }
        })
    };

    Ok(BusServer {
        addr,
        stop,
        streams,
        active,
        accept: Some(accept),
    })
}

impl BusServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connection_count(&self) -> usize {
        self.active.load(Ordering::Acquire)
    }

    /// Forcibly close every client connection. Clients may reconnect.
    pub fn disconnect_all(&self) {
        for s in self.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.disconnect_all();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Client side of a bridge; reconnects until shut down.
pub struct RemoteLink {
    stop: Arc<AtomicBool>,
    connected: Arc<AtomicBool>,
    current: Arc<Mutex<Option<TcpStream>>>,
    supervisor: Option<JoinHandle<()>>,
}

pub fn connect(bus: &Bus, addr: SocketAddr) -> RemoteLink {
    let stop = Arc::new(AtomicBool::new(false));
    let connected = Arc::new(AtomicBool::new(false));
    let current: Arc<Mutex<Option<TcpStream>>> = Arc::default();
    let supervisor = {
        let bus = bus.clone();
        let stop = stop.clone();
        let connected = connected.clone();
        let current = current.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Acquire) {
                match TcpStream::connect_timeout(&addr, Duration::from_secs(1)) {
                    Ok(stream) => {
                        if let Ok(clone) = stream.try_clone() {
                            *current.lock().unwrap() = Some(clone);
                        }
                        let r = run_link(&bus, stream, &stop, || {
                            connected.store(true, Ordering::Release)
                        });
                        if let Err(e) = r {
                            debug!("bus link to {addr} dropped: {e}");
                        }
                        connected.store(false, Ordering::Release);
                        current.lock().unwrap().take();
                    }
                    Err(e) => debug!("bus connect to {addr} failed: {e}"),
                }
                if !stop.load(Ordering::Acquire) {
                    thread::sleep(RECONNECT_INTERVAL);
                }
            }
        })
    };
    RemoteLink {
        stop,
        connected,
        current,
        supervisor: Some(supervisor),
    }
}

impl RemoteLink {
    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::Acquire)
    }

    pub fn wait_connected(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.is_connected() {
                return true;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.is_connected()
    }

    /// Drop the current connection; the supervisor reconnects.
    pub fn disconnect(&self) {
        if let Some(s) = self.current.lock().unwrap().as_ref() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.disconnect();
        if let Some(h) = self.supervisor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RemoteLink {
    fn drop(&mut self) {
        self.stop_now();
    }
}
