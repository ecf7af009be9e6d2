//! Pluggable message transports and the eavesdropper tap.
//!
//! Both ends of a session speak [`WireMessage`] frames over a [`Transport`].
//! The in-process transport moves encoded frames through mpsc channels; the
//! TCP transport moves the same bytes through a socket, so the two are
//! interchangeable and produce identical transcripts.
//!
//! A [`Tap`] wraps the client-side transport and records a copy of every
//! frame in transmission order, which is exactly the vantage point of a
//! wire-level adversary. Transcripts persist as a sequence of
//! `[direction: u8]` + frame bytes records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::wire::WireMessage;

pub trait Transport: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    fn recv(&mut self) -> Result<WireMessage>;
}

/// Which transport a session should use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    /// Localhost TCP; `None` binds an ephemeral port on 127.0.0.1.
    Tcp { addr: Option<String> },
}

impl TransportKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp { .. } => "tcp",
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp { addr: None }),
            other => {
                if let Some(addr) = other.strip_prefix("tcp:") {
                    Ok(TransportKind::Tcp {
                        addr: Some(addr.to_string()),
                    })
                } else {
                    Err(Error::InvalidArgument(format!(
                        "unknown transport {other:?}; use inproc, tcp or tcp:HOST:PORT"
                    )))
                }
            }
        }
    }
}

/// In-process duplex channel carrying encoded frames.
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// A connected pair of in-process transports.
pub fn inproc_pair() -> (InProcTransport, InProcTransport) {
    let (atx, brx) = channel();
    let (btx, arx) = channel();
    (
        InProcTransport { tx: atx, rx: arx },
        InProcTransport { tx: btx, rx: brx },
    )
}

impl Transport for InProcTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.tx
            .send(msg.encode())
            .map_err(|_| Error::TransportClosed)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let bytes = self.rx.recv().map_err(|_| Error::TransportClosed)?;
        WireMessage::decode(&bytes)
    }
}

/// Frame stream over a TCP socket.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        msg.write_to(&mut self.stream)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        WireMessage::read_from(&mut self.stream)
    }
}

/// Binds a listener for the server side of a TCP session and returns it with
/// the address clients should dial.
pub fn tcp_listener(addr: Option<&str>) -> Result<(TcpListener, String)> {
    let listener = TcpListener::bind(addr.unwrap_or("127.0.0.1:0"))?;
    let local = listener.local_addr()?.to_string();
    Ok((listener, local))
}

/// Accepts one peer on `listener`.
pub fn tcp_accept(listener: &TcpListener) -> Result<TcpTransport> {
    let (stream, _) = listener.accept()?;
    TcpTransport::new(stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    fn byte(self) -> u8 {
        match self {
            Direction::ClientToServer => 0,
            Direction::ServerToClient => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Direction::ClientToServer),
            1 => Ok(Direction::ServerToClient),
            other => Err(Error::WireDecode(format!(
                "transcript direction byte {other} invalid"
            ))),
        }
    }
}

/// One frame observed on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRecord {
    pub direction: Direction,
    pub message: WireMessage,
}

/// Shared sink collecting every frame that crosses a tapped transport, in
/// transmission order.
#[derive(Debug, Clone, Default)]
pub struct Tap {
    records: Arc<Mutex<Vec<TapRecord>>>,
}

impl Tap {
    pub fn new() -> Self {
        Self::default()
    }

    fn observe(&self, direction: Direction, message: &WireMessage) {
        self.records
            .lock()
            .expect("tap lock")
            .push(TapRecord {
                direction,
                message: message.clone(),
            });
    }

    /// Snapshot of the transcript so far.
    pub fn records(&self) -> Vec<TapRecord> {
        self.records.lock().expect("tap lock").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("tap lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists the transcript for offline replay.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for record in self.records().iter() {
            w.write_all(&[record.direction.byte()])?;
            w.write_all(&record.message.encode())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a transcript written by [`Tap::save`].
pub fn load_transcript(path: &Path) -> Result<Vec<TapRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    loop {
        let mut dir = [0u8; 1];
        match r.read(&mut dir)? {
            0 => break,
            _ => {
                let direction = Direction::from_byte(dir[0])?;
                let message = WireMessage::read_from(&mut r)?;
                records.push(TapRecord { direction, message });
            }
        }
    }
    Ok(records)
}

/// Transport wrapper that copies every frame into a [`Tap`]. Intended for the
/// client side, where sends travel client-to-server and receives
/// server-to-client.
pub struct TappedTransport<T: Transport> {
    inner: T,
    tap: Tap,
}

impl<T: Transport> TappedTransport<T> {
    pub fn new(inner: T, tap: Tap) -> Self {
        Self { inner, tap }
    }
}

impl<T: Transport> Transport for TappedTransport<T> {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.tap.observe(Direction::ClientToServer, msg);
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let msg = self.inner.recv()?;
        self.tap.observe(Direction::ServerToClient, &msg);
        Ok(msg)
    }
}
