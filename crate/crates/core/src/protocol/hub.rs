//! TCP hub: one acceptor thread plus one handler thread per client
//! connection. Each stream log has a single writer at a time (guarded by its
//! own mutex); records that do not advance their stream's clock are dropped.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};

use super::session::{RawSession, SessionHeader, HEADER_FILE};
use super::wire::{Payload, RecordDecoder, StreamKind, WireRecord};
use super::ProtocolError;

const POLL: Duration = Duration::from_millis(20);
const DRAIN_GRACE: Duration = Duration::from_millis(500);

/// Broadcast stop flag shared by the acceptor and all handlers.
#[derive(Debug, Clone, Default)]
pub struct ShutdownSignal(Arc<AtomicBool>);

impl ShutdownSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trigger(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_set(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

struct StreamLog {
    out: BufWriter<File>,
    last_t: Option<f64>,
    count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HubStats {
    pub connections: u64,
    pub records: u64,
    pub out_of_order_drops: u64,
    pub shape_mismatch_drops: u64,
    pub protocol_errors: u64,
}

struct HubState {
    dir: PathBuf,
    logs: BTreeMap<StreamKind, Mutex<Option<StreamLog>>>,
    tactile_shape: Mutex<Option<(u16, u16)>>,
    connections: AtomicU64,
    records: AtomicU64,
    out_of_order_drops: AtomicU64,
    shape_mismatch_drops: AtomicU64,
    protocol_errors: AtomicU64,
}

impl HubState {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            logs: StreamKind::ALL.into_iter().map(|k| (k, Mutex::new(None))).collect(),
            tactile_shape: Mutex::new(None),
            connections: AtomicU64::new(0),
            records: AtomicU64::new(0),
            out_of_order_drops: AtomicU64::new(0),
            shape_mismatch_drops: AtomicU64::new(0),
            protocol_errors: AtomicU64::new(0),
        }
    }

    fn append(&self, rec: &WireRecord) -> std::io::Result<()> {
        if rec.kind == StreamKind::Tactile {
            if let Ok(Payload::Tactile { height, width, .. }) = rec.payload() {
                let mut shape = self.tactile_shape.lock().unwrap();
                match *shape {
                    None => *shape = Some((height, width)),
                    Some(s) if s != (height, width) => {
                        self.shape_mismatch_drops.fetch_add(1, Ordering::Relaxed);
                        warn!("tactile frame {height}x{width} does not match session geometry {}x{}", s.0, s.1);
                        return Ok(());
                    }
                    Some(_) => {}
                }
            }
        }
        let mut guard = self.logs[&rec.kind].lock().unwrap();
        if guard.is_none() {
            let f = File::create(self.dir.join(rec.kind.log_file()))?;
            *guard = Some(StreamLog { out: BufWriter::new(f), last_t: None, count: 0 });
        }
        let log = guard.as_mut().unwrap();
        if log.last_t.is_some_and(|last| !(rec.timestamp > last)) {
            self.out_of_order_drops.fetch_add(1, Ordering::Relaxed);
            debug!("dropping out-of-order {} record at t={}", rec.kind.name(), rec.timestamp);
            return Ok(());
        }
        log.out.write_all(&rec.encode())?;
        log.last_t = Some(rec.timestamp);
        log.count += 1;
        self.records.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn stats(&self) -> HubStats {
        HubStats {
            connections: self.connections.load(Ordering::Relaxed),
            records: self.records.load(Ordering::Relaxed),
            out_of_order_drops: self.out_of_order_drops.load(Ordering::Relaxed),
            shape_mismatch_drops: self.shape_mismatch_drops.load(Ordering::Relaxed),
            protocol_errors: self.protocol_errors.load(Ordering::Relaxed),
        }
    }

    /// Flushes and fsyncs every log, then writes the header.
    fn finish(&self, session_id: &str, epoch: f64) -> Result<(), ProtocolError> {
        let mut header = SessionHeader::new(session_id, epoch);
        for (kind, m) in &self.logs {
            let mut guard = m.lock().unwrap();
            if let Some(log) = guard.as_mut() {
                let path = self.dir.join(kind.log_file());
                log.out.flush().map_err(|e| ProtocolError::io(&path, e))?;
                log.out.get_ref().sync_all().map_err(|e| ProtocolError::io(&path, e))?;
                header.streams.insert(*kind, log.count);
            }
        }
        header.tactile_shape = self.tactile_shape.lock().unwrap().map(|(h, w)| (h as usize, w as usize));
        let st = self.stats();
        header.out_of_order_drops = st.out_of_order_drops;
        header.protocol_errors = st.protocol_errors + st.shape_mismatch_drops;
        let path = self.dir.join(HEADER_FILE);
        let mut f = File::create(&path).map_err(|e| ProtocolError::io(&path, e))?;
        f.write_all(header.to_text().as_bytes()).map_err(|e| ProtocolError::io(&path, e))?;
        f.sync_all().map_err(|e| ProtocolError::io(&path, e))
    }
}

fn handle_connection(mut stream: TcpStream, peer: SocketAddr, state: Arc<HubState>, stop: ShutdownSignal) {
    if let Err(e) = stream.set_read_timeout(Some(POLL)) {
        warn!("{peer}: cannot set read timeout: {e}");
        return;
    }
    let mut dec = RecordDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut stop_seen: Option<Instant> = None;
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                dec.push(&buf[..n]);
                // A client that never pauses still gets cut off after a grace period.
                if stop.is_set() && stop_seen.get_or_insert_with(Instant::now).elapsed() > DRAIN_GRACE {
                    break;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.is_set() {
                    break;
                }
                continue;
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => {
                warn!("{peer}: read failed: {e}");
                break;
            }
        }
        loop {
            match dec.next_record() {
                Ok(Some(rec)) => {
                    if let Err(e) = state.append(&rec) {
                        warn!("{peer}: cannot write {} log: {e}", rec.kind.name());
                        return;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    state.protocol_errors.fetch_add(1, Ordering::Relaxed);
                    warn!("{peer}: protocol error at byte {}: {e}; closing connection", dec.offset());
                    return;
                }
            }
        }
    }
    if dec.pending() > 0 {
        warn!("{peer}: connection closed with {} bytes of a partial record", dec.pending());
    }
}

/// A running hub.
pub struct HubHandle {
    addr: SocketAddr,
    stop: ShutdownSignal,
    dir: PathBuf,
    thread: JoinHandle<Result<RawSession, ProtocolError>>,
}

impl HubHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_dir(&self) -> &Path {
        &self.dir
    }

    pub fn signal(&self) -> ShutdownSignal {
        self.stop.clone()
    }

    /// Stops accepting, lets handlers drain, and returns the written session.
    pub fn shutdown(self) -> Result<RawSession, ProtocolError> {
        self.stop.trigger();
        self.wait()
    }

    /// Blocks until the hub's shutdown signal fires and the session is written.
    pub fn wait(self) -> Result<RawSession, ProtocolError> {
        self.thread.join().map_err(|_| ProtocolError::Io {
            path: self.dir.display().to_string(),
            msg: "hub thread panicked".into(),
        })?
    }
}

/// Binds `listen` and runs the hub on a background thread.
pub fn spawn_hub(listen: impl ToSocketAddrs, session_dir: &Path) -> Result<HubHandle, ProtocolError> {
    let listener = TcpListener::bind(listen).map_err(|e| ProtocolError::io(session_dir, e))?;
    let addr = listener.local_addr().map_err(|e| ProtocolError::io(session_dir, e))?;
    let stop = ShutdownSignal::new();
    let dir = session_dir.to_path_buf();
    let (s2, d2) = (stop.clone(), dir.clone());
    let thread = thread::Builder::new()
        .name("hub-acceptor".into())
        .spawn(move || serve(listener, &d2, s2))
        .map_err(|e| ProtocolError::io(session_dir, e))?;
    Ok(HubHandle { addr, stop, dir, thread })
}

/// Runs the hub on the calling thread until `stop` is triggered.
pub fn run_hub(
    listen: impl ToSocketAddrs,
    session_dir: &Path,
    stop: ShutdownSignal,
) -> Result<RawSession, ProtocolError> {
    let listener = TcpListener::bind(listen).map_err(|e| ProtocolError::io(session_dir, e))?;
    serve(listener, session_dir, stop)
}

fn serve(listener: TcpListener, dir: &Path, stop: ShutdownSignal) -> Result<RawSession, ProtocolError> {
    fs::create_dir_all(dir).map_err(|e| ProtocolError::io(dir, e))?;
    listener.set_nonblocking(true).map_err(|e| ProtocolError::io(dir, e))?;
    let epoch = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let session_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "session".into());
    let state = Arc::new(HubState::new(dir.to_path_buf()));
    let mut handlers = Vec::new();
    let spawn_handler = |stream: TcpStream, peer: SocketAddr, handlers: &mut Vec<JoinHandle<()>>| {
        if let Err(e) = stream.set_nonblocking(false) {
            warn!("{peer}: {e}");
            return;
        }
        state.connections.fetch_add(1, Ordering::Relaxed);
        let (st, sg) = (state.clone(), stop.clone());
        match thread::Builder::new().name(format!("hub-{peer}")).spawn(move || handle_connection(stream, peer, st, sg))
        {
            Ok(h) => handlers.push(h),
            Err(e) => warn!("{peer}: cannot spawn handler: {e}"),
        }
    };
    while !stop.is_set() {
        match listener.accept() {
            Ok((stream, peer)) => spawn_handler(stream, peer, &mut handlers),
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => warn!("accept failed: {e}"),
        }
        handlers.retain(|h| !h.is_finished());
    }
    // Connections already queued when the stop arrived still get drained.
    while let Ok((stream, peer)) = listener.accept() {
        spawn_handler(stream, peer, &mut handlers);
    }
    for h in handlers {
        // A panicking handler only loses its own connection.
        let _ = h.join();
    }
    state.finish(&session_id, epoch)?;
    let stats = state.stats();
    debug!("hub stopped: {stats:?}");
    RawSession::load(dir)
}

/// Minimal sensor-side sender.
pub struct HubClient {
    out: BufWriter<TcpStream>,
}

impl HubClient {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(Self { out: BufWriter::new(s) })
    }

    pub fn send(&mut self, rec: &WireRecord) -> std::io::Result<()> {
        self.out.write_all(&rec.encode())
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.out.write_all(bytes)
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    /// Flushes and closes the connection.
    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().shutdown(std::net::Shutdown::Write)
    }
}
