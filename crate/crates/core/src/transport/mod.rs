//! Message framing and the channels between the two parties.
//!
//! Wire format of one frame: a 4-byte little-endian length covering header
//! and payload, a 16-byte header (session `u32`, protocol `u32`, round `u64`,
//! all little-endian), then the payload.

pub mod transcript;

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use crate::error::{Error, Result};

pub use transcript::{ProtocolStats, SessionTranscript, Transcript};

pub const HEADER_BYTES: usize = 16;
/// Upper bound on a single frame, as a guard against corrupt length prefixes.
pub const MAX_FRAME_BYTES: usize = 1 << 31;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub session: u32,
    pub protocol: u32,
    pub round: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    /// Bytes this frame occupies on the wire, length prefix included.
    pub fn wire_len(&self) -> usize {
        4 + HEADER_BYTES + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&((HEADER_BYTES + self.payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.protocol.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one complete frame (length prefix included).
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < 4 + HEADER_BYTES {
            return Err(Error::Transport("frame shorter than its header".into()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if len != bytes.len() - 4 {
            return Err(Error::Transport(format!(
                "length prefix {len} does not match frame body {}",
                bytes.len() - 4
            )));
        }
        Self::from_body(&bytes[4..])
    }

    fn from_body(body: &[u8]) -> Result<Frame> {
        if body.len() < HEADER_BYTES {
            return Err(Error::Transport("frame shorter than its header".into()));
        }
        Ok(Frame {
            session: u32::from_le_bytes(body[0..4].try_into().unwrap()),
            protocol: u32::from_le_bytes(body[4..8].try_into().unwrap()),
            round: u64::from_le_bytes(body[8..16].try_into().unwrap()),
            payload: body[HEADER_BYTES..].to_vec(),
        })
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if !(HEADER_BYTES..=MAX_FRAME_BYTES).contains(&len) {
            return Err(Error::Transport(format!("invalid frame length {len}")));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        Self::from_body(&body)
    }
}

/// An ordered, reliable, point-to-point frame channel.
pub trait Transport: Send {
    fn send(&mut self, frame: &Frame) -> Result<()>;
    fn recv(&mut self) -> Result<Frame>;
}

/// In-process channel; frames travel as encoded bytes.
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// A connected pair of in-process endpoints.
pub fn inproc_pair() -> (InProcTransport, InProcTransport) {
    let (tx1, rx1) = channel();
    let (tx2, rx2) = channel();
    (
        InProcTransport { tx: tx1, rx: rx2 },
        InProcTransport { tx: tx2, rx: rx1 },
    )
}

impl Transport for InProcTransport {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        self.tx
            .send(frame.encode())
            .map_err(|_| Error::Transport("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Frame> {
        let bytes = self.rx.recv().map_err(|_| Error::Transport("peer hung up".into()))?;
        Frame::decode(&bytes)
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn from_stream(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(TcpTransport {
            reader,
            writer: BufWriter::new(stream),
        })
    }

    /// Accepts a single peer connection on `addr`.
    pub fn listen<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let (stream, _) = listener.accept()?;
        Self::from_stream(stream)
    }

    /// Connects to `addr`, retrying while the listener comes up.
    pub fn connect<A: ToSocketAddrs + Clone>(addr: A, timeout: Duration) -> Result<Self> {
        let start = std::time::Instant::now();
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => return Self::from_stream(s),
                Err(e) if start.elapsed() < timeout => {
                    log::debug!("connect failed, retrying: {e}");
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        self.writer.write_all(&frame.encode())?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        Frame::read_from(&mut self.reader)
    }
}

/// A loopback TCP pair: binds an ephemeral port and connects to it.
pub fn tcp_loopback_pair() -> Result<(TcpTransport, TcpTransport)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let client = TcpStream::connect(addr)?;
    let (server, _) = listener.accept()?;
    Ok((TcpTransport::from_stream(server)?, TcpTransport::from_stream(client)?))
}

/// Stable 32-bit protocol identifier for a scope name (FNV-1a).
pub fn protocol_id(name: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in name.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Frame {
        Frame {
            session: 7,
            protocol: protocol_id("sec_comp"),
            round: 3,
            payload: vec![1, 2, 3, 4, 5],
        }
    }

    #[test]
    fn wire_layout_is_bit_exact() {
        let bytes = frame().encode();
        assert_eq!(&bytes[..4], &21u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &7u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &3u64.to_le_bytes());
        assert_eq!(&bytes[20..], &[1, 2, 3, 4, 5]);
        assert_eq!(bytes.len(), frame().wire_len());
        assert_eq!(Frame::decode(&bytes).unwrap(), frame());
        assert_eq!(Frame::read_from(&mut bytes.as_slice()).unwrap(), frame());
    }

    #[test]
    fn bad_lengths_are_rejected() {
        let mut bytes = frame().encode();
        bytes[0] = 99;
        assert!(Frame::decode(&bytes).is_err());
        assert!(Frame::read_from(&mut &bytes[..10]).is_err());
        assert!(Frame::decode(&[0u8; 3]).is_err());
    }

    #[test]
    fn inproc_round_trip() {
        let (mut a, mut b) = inproc_pair();
        a.send(&frame()).unwrap();
        assert_eq!(b.recv().unwrap(), frame());
        drop(a);
        assert!(b.recv().is_err());
    }

    #[test]
    fn tcp_round_trip() {
        let (mut a, mut b) = tcp_loopback_pair().unwrap();
        a.send(&frame()).unwrap();
        b.send(&Frame { round: 4, ..frame() }).unwrap();
        assert_eq!(b.recv().unwrap(), frame());
        assert_eq!(a.recv().unwrap().round, 4);
    }
}
