//! Byte-stream transports for the data plane: TCP or unix-domain sockets.
//! A reader thread decodes frames into a bounded channel; writes are whole
//! frames from a single writer.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
#[cfg(unix)]
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use kernml_core::wire::{Frame, FrameError, StreamDecoder};

const POLL: Duration = Duration::from_millis(2);

/// `tcp:HOST:PORT` (or bare `HOST:PORT`), or `unix:PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(path) = s.strip_prefix("unix:") {
            if path.is_empty() {
                return Err("empty unix socket path".into());
            }
            return Ok(Endpoint::Unix(PathBuf::from(path)));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        match addr.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::Tcp(addr.to_string()))
            }
            _ => Err(format!("bad endpoint {s:?}: expected tcp:HOST:PORT or unix:PATH")),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp:{a}"),
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

#[derive(Debug)]
pub enum Conn {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Conn {
    pub fn try_clone(&self) -> io::Result<Conn> {
        match self {
            Conn::Tcp(s) => s.try_clone().map(Conn::Tcp),
            #[cfg(unix)]
            Conn::Unix(s) => s.try_clone().map(Conn::Unix),
        }
    }

    pub fn shutdown(&self) {
        let _ = match self {
            Conn::Tcp(s) => s.shutdown(Shutdown::Both),
            #[cfg(unix)]
            Conn::Unix(s) => s.shutdown(Shutdown::Both),
        };
    }

    fn set_nonblocking(&self, on: bool) -> io::Result<()> {
        match self {
            Conn::Tcp(s) => s.set_nonblocking(on),
            #[cfg(unix)]
            Conn::Unix(s) => s.set_nonblocking(on),
        }
    }

    fn set_nodelay(&self) {
        if let Conn::Tcp(s) = self {
            let _ = s.set_nodelay(true);
        }
    }
}

impl Read for Conn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Conn::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Conn::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Conn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Conn::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Conn::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Conn::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Conn::Unix(s) => s.flush(),
        }
    }
}

pub enum Listener {
    Tcp(TcpListener),
    #[cfg(unix)]
    Unix(UnixListener, PathBuf),
}

impl Listener {
    pub fn bind(endpoint: &Endpoint) -> io::Result<Listener> {
        let l = match endpoint {
            Endpoint::Tcp(addr) => Listener::Tcp(TcpListener::bind(addr.as_str())?),
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
                Listener::Unix(UnixListener::bind(path)?, path.clone())
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => {
                return Err(io::Error::new(io::ErrorKind::Unsupported, "unix sockets unavailable"))
            }
        };
        match &l {
            Listener::Tcp(t) => t.set_nonblocking(true)?,
            #[cfg(unix)]
            Listener::Unix(u, _) => u.set_nonblocking(true)?,
        }
        Ok(l)
    }

    /// The bound address, with any ephemeral port resolved.
    pub fn endpoint(&self) -> io::Result<Endpoint> {
        match self {
            Listener::Tcp(t) => Ok(Endpoint::Tcp(t.local_addr()?.to_string())),
            #[cfg(unix)]
            Listener::Unix(_, p) => Ok(Endpoint::Unix(p.clone())),
        }
    }

    pub fn try_accept(&self) -> io::Result<Option<Conn>> {
        let r = match self {
            Listener::Tcp(t) => t.accept().map(|(s, _)| Conn::Tcp(s)),
            #[cfg(unix)]
            Listener::Unix(u, _) => u.accept().map(|(s, _)| Conn::Unix(s)),
        };
        match r {
            Ok(c) => {
                c.set_nonblocking(false)?;
                c.set_nodelay();
                Ok(Some(c))
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn accept_timeout(&self, timeout: Duration) -> io::Result<Conn> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(c) = self.try_accept()? {
                return Ok(c);
            }
            if Instant::now() >= deadline {
                return Err(io::Error::new(
                    io::ErrorKind::TimedOut,
                    format!("no agent connected within {} ms", timeout.as_millis()),
                ));
            }
            thread::sleep(POLL);
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        #[cfg(unix)]
        if let Listener::Unix(_, p) = self {
            let _ = std::fs::remove_file(p);
        }
    }
}

/// Connect, retrying until `timeout` while nothing is listening yet.
pub fn connect(endpoint: &Endpoint, timeout: Duration) -> io::Result<Conn> {
    let deadline = Instant::now() + timeout;
    loop {
        let r = match endpoint {
            Endpoint::Tcp(a) => TcpStream::connect(a.as_str()).map(Conn::Tcp),
            #[cfg(unix)]
            Endpoint::Unix(p) => UnixStream::connect(p).map(Conn::Unix),
            #[cfg(not(unix))]
            Endpoint::Unix(_) => {
                return Err(io::Error::new(io::ErrorKind::Unsupported, "unix sockets unavailable"))
            }
        };
        match r {
            Ok(c) => {
                c.set_nodelay();
                return Ok(c);
            }
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(POLL),
        }
    }
}

#[derive(Debug)]
pub enum Inbound {
    Frame(Frame),
    /// The stream carried bytes that are not a valid frame.
    Corrupt(FrameError),
    /// Peer closed; a trailing partial frame, if any, is discarded.
    Closed,
}

/// One framed session over a connection.
pub struct FrameLink {
    writer: Conn,
    rx: Receiver<Inbound>,
    reader: Option<JoinHandle<()>>,
}

fn read_loop(mut conn: Conn, tx: SyncSender<Inbound>) {
    let mut dec = StreamDecoder::new();
    let mut buf = [0u8; 16 * 1024];
    loop {
        let n = match conn.read(&mut buf) {
            Ok(0) | Err(_) => {
                let _ = tx.send(Inbound::Closed);
                return;
            }
            Ok(n) => n,
        };
        dec.push(&buf[..n]);
        loop {
            match dec.next_frame() {
                Ok(Some(f)) => {
                    if tx.send(Inbound::Frame(f)).is_err() {
                        return;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Inbound::Corrupt(e));
                    return;
                }
            }
        }
    }
}

impl FrameLink {
    /// Start the reader thread. `capacity` bounds frames buffered ahead of
    /// the consumer; the reader blocks when it is full.
    pub fn new(conn: Conn, capacity: usize) -> io::Result<FrameLink> {
        let read_half = conn.try_clone()?;
        let (tx, rx) = mpsc::sync_channel(capacity);
        let reader =
            thread::Builder::new().name("frame-reader".into()).spawn(move || read_loop(read_half, tx))?;
        Ok(FrameLink { writer: conn, rx, reader: Some(reader) })
    }

    pub fn send(&mut self, frame: &Frame) -> io::Result<()> {
        let bytes = frame.encode().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        self.writer.write_all(&bytes)
    }

    pub fn try_recv(&self) -> Option<Inbound> {
        match self.rx.try_recv() {
            Ok(i) => Some(i),
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => Some(Inbound::Closed),
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Inbound> {
        match self.rx.recv_timeout(timeout) {
            Ok(i) => Some(i),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => Some(Inbound::Closed),
        }
    }

    /// Shut the connection down and wait up to `deadline` for the reader.
    /// Returns whatever the reader had already decoded.
    pub fn close(mut self, deadline: Duration) -> Vec<Inbound> {
        let _ = self.writer.flush();
        self.writer.shutdown();
        let end = Instant::now() + deadline;
        let mut drained = Vec::new();
        while let Some(h) = self.reader.take() {
            while let Ok(i) = self.rx.try_recv() {
                drained.push(i);
            }
            if h.is_finished() {
                let _ = h.join();
            } else if Instant::now() < end {
                self.reader = Some(h);
                thread::sleep(POLL);
            } else {
                log::warn!("frame reader did not stop within {deadline:?}");
            }
        }
        drained.extend(self.rx.try_iter());
        drained
    }
}
