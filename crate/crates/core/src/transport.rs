//! Framed wire protocol, TCP endpoints, and an analytic link model.
//!
//! Frame layout (little-endian):
//!
//! ```text
//! "XRTF" | u8 version | u32 meta_len | meta JSON | u32 payload_len | payload | u32 crc32(payload)
//! ```
//!
//! The receiver answers every frame with five bytes: `'A'` plus the echoed
//! payload crc, or `'N'` plus a reason code and three zero bytes.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::compress::CompressedPayload;
use crate::error::{Error, ProtocolReason, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"XRTF";
pub const FRAME_VERSION: u8 = 1;
/// Default upper bound on any declared length.
pub const DEFAULT_MAX_ALLOC: usize = 64 << 20;

const ACK: u8 = b'A';
const NACK: u8 = b'N';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub image_id: String,
    pub original_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub meta: FrameMeta,
    pub payload: CompressedPayload,
}

impl Frame {
    pub fn new(image_id: impl Into<String>, payload: CompressedPayload) -> Self {
        let meta = FrameMeta {
            image_id: image_id.into(),
            original_bytes: payload.raw_bytes() as u64,
        };
        Self { meta, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        frame_encode(&self.payload, &self.meta)
    }
}

pub fn frame_encode(p: &CompressedPayload, meta: &FrameMeta) -> Vec<u8> {
    let meta_json = serde_json::to_vec(meta).expect("metadata serializes");
    let payload = p.to_bytes();
    let mut out = Vec::with_capacity(17 + meta_json.len() + payload.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn truncated(what: &str) -> Error {
    Error::protocol(ProtocolReason::Truncated, format!("stream ended inside {what}"))
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => truncated(what),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, what: &str, max_alloc: usize) -> Result<usize> {
    let len = read_u32(r, what)? as usize;
    if len > max_alloc {
        return Err(Error::protocol(
            ProtocolReason::LengthTooLarge,
            format!("{what} declares {len} bytes, cap is {max_alloc}"),
        ));
    }
    Ok(len)
}

/// Reads one frame's bytes from a stream, validating the header and every
/// declared length before allocating. Returns the raw frame bytes.
pub fn read_frame(r: &mut impl Read, max_alloc: usize) -> Result<Vec<u8>> {
    let mut head = [0u8; 5];
    read_exact_or(r, &mut head, "frame header")?;
    if &head[..4] != FRAME_MAGIC {
        return Err(Error::protocol(ProtocolReason::BadMagic, format!("got {:02x?}", &head[..4])));
    }
    if head[4] != FRAME_VERSION {
        return Err(Error::protocol(
            ProtocolReason::UnsupportedVersion,
            format!("version {} (supported: {FRAME_VERSION})", head[4]),
        ));
    }
    let mut out = head.to_vec();
    let meta_len = read_len(r, "metadata length", max_alloc)?;
    out.extend_from_slice(&(meta_len as u32).to_le_bytes());
    let at = out.len();
    out.resize(at + meta_len, 0);
    read_exact_or(r, &mut out[at..], "metadata")?;
    let payload_len = read_len(r, "payload length", max_alloc.saturating_sub(meta_len))?;
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    let at = out.len();
    out.resize(at + payload_len + 4, 0);
    read_exact_or(r, &mut out[at..], "payload")?;
    Ok(out)
}

/// Full validation: magic, version, lengths, crc, metadata, payload.
pub fn frame_decode(bytes: &[u8]) -> Result<Frame> {
    frame_decode_with_cap(bytes, DEFAULT_MAX_ALLOC)
}

pub fn frame_decode_with_cap(bytes: &[u8], max_alloc: usize) -> Result<Frame> {
    let mut cursor = bytes;
    let raw = read_frame(&mut cursor, max_alloc)?;
    if !cursor.is_empty() {
        return Err(Error::protocol(
            ProtocolReason::TrailingBytes,
            format!("{} bytes after frame end", cursor.len()),
        ));
    }
    let meta_len = u32::from_le_bytes(raw[5..9].try_into().unwrap()) as usize;
    let meta_end = 9 + meta_len;
    let payload_start = meta_end + 4;
    let payload_end = raw.len() - 4;
    let payload = &raw[payload_start..payload_end];
    let stored = u32::from_le_bytes(raw[payload_end..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::protocol(
            ProtocolReason::CrcMismatch,
            format!("frame crc {actual:#010x}, stored {stored:#010x}"),
        ));
    }
    let meta: FrameMeta = serde_json::from_slice(&raw[9..meta_end])
        .map_err(|e| Error::protocol(ProtocolReason::BadMetadata, e.to_string()))?;
    let payload = CompressedPayload::from_bytes(payload)
        .map_err(|e| Error::protocol(ProtocolReason::BadPayload, e.to_string()))?;
    Ok(Frame { meta, payload })
}

// ---------------------------------------------------------------------------
// Link model

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    /// Bits per second.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: f64,
    #[serde(default)]
    pub overhead_per_frame: u64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            bandwidth: 1e6,
            latency: 0.05,
            overhead_per_frame: 0,
        }
    }
}

impl LinkSpec {
    pub fn new(bandwidth: f64, latency: f64, overhead_per_frame: u64) -> Result<Self> {
        let link = Self {
            bandwidth,
            latency,
            overhead_per_frame,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::arg(format!("link bandwidth must be > 0 bit/s, got {}", self.bandwidth)));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(Error::arg(format!("link latency must be >= 0 s, got {}", self.latency)));
        }
        Ok(())
    }
}

/// Seconds to move `bytes` over `link`: latency plus serialization time.
pub fn simulate_transfer(bytes: u64, link: &LinkSpec) -> f64 {
    link.latency + 8.0 * (bytes + link.overhead_per_frame) as f64 / link.bandwidth
}

// ---------------------------------------------------------------------------
// TCP endpoints

#[derive(Debug, Clone)]
pub struct SendOptions {
    /// Connection attempts per frame before giving up.
    pub attempts: u32,
    pub timeout: Duration,
    pub retry_delay: Duration,
}

impl Default for SendOptions {
    fn default() -> Self {
        Self {
            attempts: 3,
            timeout: Duration::from_secs(10),
            retry_delay: Duration::from_millis(50),
        }
    }
}

enum Reply {
    Ack(u32),
    Nack(u8),
}

fn read_reply(stream: &mut TcpStream) -> io::Result<Reply> {
    let mut b = [0u8; 5];
    stream.read_exact(&mut b)?;
    match b[0] {
        ACK => Ok(Reply::Ack(u32::from_le_bytes(b[1..].try_into().unwrap()))),
        NACK => Ok(Reply::Nack(b[1])),
        other => Err(io::Error::new(io::ErrorKind::InvalidData, format!("unknown reply tag {other:#04x}"))),
    }
}

fn connect(addr: &str, opts: &SendOptions) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("`{addr}` resolves to no address"));
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, opts.timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(opts.timeout))?;
                s.set_write_timeout(Some(opts.timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Sends frames in order over one connection, reconnecting on I/O failure.
/// Returns the crc echoed for each frame.
pub fn send_frames(addr: &str, frames: &[Vec<u8>], opts: &SendOptions) -> Result<Vec<u32>> {
    if opts.attempts == 0 {
        return Err(Error::arg("attempts must be >= 1"));
    }
    let mut acked = Vec::with_capacity(frames.len());
    let mut stream: Option<TcpStream> = None;
    for (index, frame) in frames.iter().enumerate() {
        frame_decode(frame)?;
        let wire_crc = crc32fast::hash(&frame[payload_offset(frame)..frame.len() - 4]);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = (|| -> io::Result<Reply> {
                if stream.is_none() {
                    stream = Some(connect(addr, opts)?);
                }
                let s = stream.as_mut().unwrap();
                s.write_all(frame)?;
                s.flush()?;
                read_reply(s)
            })();
            match outcome {
                Ok(Reply::Ack(crc)) if crc == wire_crc => {
                    acked.push(crc);
                    break;
                }
                Ok(Reply::Ack(crc)) => {
                    return Err(Error::Integrity(format!(
                        "frame {index}: receiver echoed crc {crc:#010x}, sent {wire_crc:#010x}"
                    )))
                }
                Ok(Reply::Nack(code)) => {
                    let reason = ProtocolReason::from_code(code)
                        .map(|r| r.to_string())
                        .unwrap_or_else(|| format!("code {code}"));
                    return Err(Error::Integrity(format!("frame {index} rejected by receiver: {reason}")));
                }
                Err(e) => {
                    stream = None;
                    if attempt >= opts.attempts {
                        return Err(Error::Transfer {
                            attempts: attempt,
                            detail: format!("frame {index}: {e}"),
                        });
                    }
                    std::thread::sleep(opts.retry_delay);
                }
            }
        }
    }
    Ok(acked)
}

fn payload_offset(frame: &[u8]) -> usize {
    let meta_len = u32::from_le_bytes(frame[5..9].try_into().unwrap()) as usize;
    9 + meta_len + 4
}

/// Receiver-side fault injection for exercising the sender's error paths.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Flip a payload byte of the frame with this ordinal before validation.
    pub corrupt_frame: Option<usize>,
    /// Drop the connection after reading this many bytes of the given frame
    /// ordinal (once).
    pub drop_mid_frame: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct RecvOptions {
    pub max_alloc: usize,
    /// Stop after this many accepted frames; `None` serves forever.
    pub max_frames: Option<usize>,
    pub timeout: Duration,
    pub faults: Faults,
}

impl Default for RecvOptions {
    fn default() -> Self {
        Self {
            max_alloc: DEFAULT_MAX_ALLOC,
            max_frames: None,
            timeout: Duration::from_secs(30),
            faults: Faults::default(),
        }
    }
}

/// Outcome of one served session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecvStats {
    pub accepted: usize,
    pub rejected: usize,
    pub connections: usize,
}

/// Accepts connections sequentially and hands every valid frame to `sink`
/// in arrival order, acknowledging each with its payload crc. Invalid frames
/// are NACKed and the connection closed.
pub fn serve(listener: &TcpListener, opts: &RecvOptions, mut sink: impl FnMut(Frame) -> Result<()>) -> Result<RecvStats> {
    let mut stats = RecvStats::default();
    let mut seen = 0usize;
    let mut drop_pending = opts.faults.drop_mid_frame;
    while opts.max_frames.is_none_or(|m| stats.accepted < m) {
        let (mut stream, _) = listener.accept()?;
        stats.connections += 1;
        stream.set_read_timeout(Some(opts.timeout))?;
        stream.set_write_timeout(Some(opts.timeout))?;
        loop {
            if opts.max_frames.is_some_and(|m| stats.accepted >= m) {
                break;
            }
            if let Some((at, n)) = drop_pending {
                if at == seen {
                    drop_pending = None;
                    let mut partial = vec![0u8; n];
                    let _ = stream.read_exact(&mut partial);
                    break;
                }
            }
            let mut raw = match read_frame(&mut stream, opts.max_alloc) {
                Ok(raw) => raw,
                Err(Error::Protocol {
                    reason: ProtocolReason::Truncated,
                    ..
                }) => break,
                Err(Error::Io(_)) => break,
                Err(Error::Protocol { reason, .. }) => {
                    let _ = stream.write_all(&[NACK, reason.code(), 0, 0, 0]);
                    stats.rejected += 1;
                    break;
                }
                Err(e) => return Err(e),
            };
            if opts.faults.corrupt_frame == Some(seen) {
                let i = payload_offset(&raw);
                raw[i] ^= 0xff;
            }
            seen += 1;
            match frame_decode_with_cap(&raw, opts.max_alloc) {
                Ok(frame) => {
                    let crc = crc32fast::hash(&raw[payload_offset(&raw)..raw.len() - 4]);
                    sink(frame)?;
                    stats.accepted += 1;
                    let mut reply = [ACK, 0, 0, 0, 0];
                    reply[1..].copy_from_slice(&crc.to_le_bytes());
                    if stream.write_all(&reply).is_err() {
                        break;
                    }
                }
                Err(Error::Protocol { reason, .. }) => {
                    let _ = stream.write_all(&[NACK, reason.code(), 0, 0, 0]);
                    stats.rejected += 1;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if opts.faults.corrupt_frame.is_some() && stats.rejected > 0 {
            break;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress, CompressConfig};
    use crate::phantom::{phantom, PhantomSpec};

    fn small_payload(seed: u64) -> CompressedPayload {
        let img = phantom(&PhantomSpec::new(64, seed)).unwrap();
        compress(
            &img,
            &CompressConfig {
                target: (16, 16),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn frame_round_trip() {
        let frame = Frame::new("img-0", small_payload(1));
        let bytes = frame.encode();
        let back = frame_decode(&bytes).unwrap();
        assert_eq!(back, frame);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn every_truncation_is_a_protocol_error() {
        let bytes = Frame::new("t", small_payload(2)).encode();
        for cut in 0..bytes.len() {
            match frame_decode(&bytes[..cut]) {
                Err(Error::Protocol { reason, .. }) => assert_eq!(reason, ProtocolReason::Truncated, "cut {cut}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            frame_decode(&extra),
            Err(Error::Protocol {
                reason: ProtocolReason::TrailingBytes,
                ..
            })
        ));
    }

    #[test]
    fn header_errors_have_reason_codes() {
        let bytes = Frame::new("v", small_payload(3)).encode();
        let reason = |b: &[u8]| match frame_decode(b) {
            Err(Error::Protocol { reason, .. }) => reason,
            other => panic!("{other:?}"),
        };
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(reason(&v2), ProtocolReason::UnsupportedVersion);
        let mut magic = bytes.clone();
        magic[0] = b'Y';
        assert_eq!(reason(&magic), ProtocolReason::BadMagic);
        let mut crc = bytes.clone();
        let n = crc.len();
        crc[n - 1] ^= 1;
        assert_eq!(reason(&crc), ProtocolReason::CrcMismatch);
        let mut huge = bytes.clone();
        huge[5..9].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(reason(&huge), ProtocolReason::LengthTooLarge);
        let mut meta = bytes.clone();
        meta[9] = b'[';
        assert_eq!(reason(&meta), ProtocolReason::BadMetadata);
    }

    #[test]
    fn oversized_lengths_never_allocate() {
        let bytes = Frame::new("x", small_payload(4)).encode();
        let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let at = 9 + meta_len;
        for declared in [DEFAULT_MAX_ALLOC as u32 + 1, u32::MAX] {
            let mut b = bytes.clone();
            b[at..at + 4].copy_from_slice(&declared.to_le_bytes());
            assert!(matches!(
                frame_decode(&b),
                Err(Error::Protocol {
                    reason: ProtocolReason::LengthTooLarge,
                    ..
                })
            ));
        }
        assert!(matches!(
            frame_decode_with_cap(&bytes, 64),
            Err(Error::Protocol {
                reason: ProtocolReason::LengthTooLarge,
                ..
            })
        ));
    }

    #[test]
    fn link_model_arithmetic() {
        let link = LinkSpec::new(1e6, 0.05, 0).unwrap();
        assert_eq!(simulate_transfer(1_000_000, &link), 8.05);
        assert_eq!(simulate_transfer(0, &link), 0.05);
        assert!(LinkSpec::new(0.0, 0.0, 0).is_err());
        assert!(LinkSpec::new(1.0, -1.0, 0).is_err());

        let flat = LinkSpec::new(2.5e5, 0.0, 0).unwrap();
        let p = small_payload(5);
        let ratio = simulate_transfer(262_144, &flat) / simulate_transfer(p.byte_len() as u64, &flat);
        assert!((ratio - 262_144.0 / p.byte_len() as f64).abs() <= 1e-12);
        let a = simulate_transfer(1000, &flat);
        let b = simulate_transfer(2000, &flat);
        assert!((b - 2.0 * a).abs() <= 1e-12);
    }

    fn spawn_receiver(opts: RecvOptions) -> (String, std::thread::JoinHandle<(RecvStats, Vec<Frame>)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handle = std::thread::spawn(move || {
            let mut got = Vec::new();
            let stats = serve(&listener, &opts, |f| {
                got.push(f);
                Ok(())
            })
            .unwrap();
            (stats, got)
        });
        (addr, handle)
    }

    #[test]
    fn loopback_many_frames_in_order() {
        let frames: Vec<Frame> = (0..100).map(|i| Frame::new(format!("f{i}"), small_payload(i % 5))).collect();
        let bytes: Vec<Vec<u8>> = frames.iter().map(Frame::encode).collect();
        let (addr, handle) = spawn_receiver(RecvOptions {
            max_frames: Some(100),
            ..Default::default()
        });
        let acked = send_frames(&addr, &bytes, &SendOptions::default()).unwrap();
        let (stats, got) = handle.join().unwrap();
        assert_eq!(acked.len(), 100);
        assert_eq!(stats.accepted, 100);
        assert_eq!(got, frames);
        for (crc, f) in acked.iter().zip(&frames) {
            assert_eq!(*crc, crc32fast::hash(&f.payload.to_bytes()));
        }
    }

    #[test]
    fn corrupted_frame_is_nacked() {
        let bytes: Vec<Vec<u8>> = (0..3).map(|i| Frame::new(format!("c{i}"), small_payload(i)).encode()).collect();
        let (addr, handle) = spawn_receiver(RecvOptions {
            max_frames: Some(3),
            faults: Faults {
                corrupt_frame: Some(1),
                ..Default::default()
            },
            ..Default::default()
        });
        let err = send_frames(&addr, &bytes, &SendOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        let (stats, got) = handle.join().unwrap();
        assert_eq!((stats.accepted, stats.rejected), (1, 1));
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn dropped_connection_is_retried() {
        let bytes: Vec<Vec<u8>> = (0..4).map(|i| Frame::new(format!("d{i}"), small_payload(i)).encode()).collect();
        let (addr, handle) = spawn_receiver(RecvOptions {
            max_frames: Some(4),
            faults: Faults {
                drop_mid_frame: Some((2, 10)),
                ..Default::default()
            },
            ..Default::default()
        });
        let acked = send_frames(&addr, &bytes, &SendOptions::default()).unwrap();
        let (stats, got) = handle.join().unwrap();
        assert_eq!(acked.len(), 4);
        assert_eq!(stats.accepted, 4);
        assert_eq!(stats.connections, 2);
        assert_eq!(got.iter().map(|f| f.meta.image_id.as_str()).collect::<Vec<_>>(), ["d0", "d1", "d2", "d3"]);
    }

    #[test]
    fn unreachable_receiver_exhausts_attempts() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let bytes = vec![Frame::new("u", small_payload(1)).encode()];
        let opts = SendOptions {
            attempts: 2,
            retry_delay: Duration::from_millis(1),
            ..Default::default()
        };
        assert!(matches!(
            send_frames(&addr, &bytes, &opts),
            Err(Error::Transfer { attempts: 2, .. })
        ));
    }
}
