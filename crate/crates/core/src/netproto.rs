//! Framed TCP protocol between an aggregator and its users: each user sends
//! exactly one ciphertext per epoch; after all n arrive the aggregator
//! decrypts and broadcasts the sum. See PROTOCOL.md for the byte layout.

use crate::dist::{DistError, NoiseSpec};
use crate::psa::{psa_decrypt, psa_encrypt, Ciphertext, EpochBuffer, KeyFile, PsaError};
use crate::zq::RingElement;
use rand::Rng;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

/// Frames larger than this are rejected outright.
pub const MAX_PAYLOAD: usize = 1 << 20;

pub const REASON_DUPLICATE: u8 = 1;
pub const REASON_TIMEOUT: u8 = 2;
pub const REASON_EPOCH_MISMATCH: u8 = 3;
pub const REASON_MALFORMED: u8 = 4;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown frame type byte {0:#04x}")]
    UnknownFrameType(u8),
    #[error("frame payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    OversizeFrame(usize),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("epoch {0} timed out before all ciphertexts arrived")]
    EpochTimeout(u32),
    #[error("server reported error, reason code {0}")]
    ServerError(u8),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Psa(#[from] PsaError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Hello = 0x01,
    EpochOpen = 0x02,
    Cipher = 0x03,
    Aggregate = 0x04,
    Error = 0x05,
}

impl FrameType {
    fn from_byte(b: u8) -> Result<Self, NetError> {
        Ok(match b {
            0x01 => FrameType::Hello,
            0x02 => FrameType::EpochOpen,
            0x03 => FrameType::Cipher,
            0x04 => FrameType::Aggregate,
            0x05 => FrameType::Error,
            other => return Err(NetError::UnknownFrameType(other)),
        })
    }
}

/// One wire frame: payload length (big-endian u32), type byte, payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, NetError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(NetError::OversizeFrame(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(5 + frame.payload.len());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.push(frame.frame_type as u8);
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Decode one frame from the front of `bytes`. Returns the frame and the
/// number of bytes consumed, or `None` when more bytes are needed.
pub fn decode_frame(bytes: &[u8]) -> Result<Option<(Frame, usize)>, NetError> {
    if bytes.len() < 5 {
        return Ok(None);
    }
    let length = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    if length > MAX_PAYLOAD {
        return Err(NetError::OversizeFrame(length));
    }
    let frame_type = FrameType::from_byte(bytes[4])?;
    if bytes.len() < 5 + length {
        return Ok(None);
    }
    Ok(Some((
        Frame {
            frame_type,
            payload: bytes[5..5 + length].to_vec(),
        },
        5 + length,
    )))
}

/// Wire carrier of one ciphertext; all fields little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherMessage {
    pub user_id: u32,
    pub epoch: u32,
    /// residue in [0, q)
    pub value: u64,
}

impl CipherMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.user_id.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.value.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        if bytes.len() != 16 {
            return Err(NetError::MalformedPayload(format!(
                "cipher payload is {} bytes, expected 16",
                bytes.len()
            )));
        }
        Ok(CipherMessage {
            user_id: u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
            epoch: u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")),
            value: u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")),
        })
    }
}

fn u32_payload(v: u32) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

fn parse_u32_payload(bytes: &[u8], what: &str) -> Result<u32, NetError> {
    if bytes.len() != 4 {
        return Err(NetError::MalformedPayload(format!(
            "{what} payload is {} bytes, expected 4",
            bytes.len()
        )));
    }
    Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
}

fn aggregate_payload(epoch: u32, sum: i64) -> Vec<u8> {
    let mut out = Vec::with_capacity(12);
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn parse_aggregate_payload(bytes: &[u8]) -> Result<(u32, i64), NetError> {
    if bytes.len() != 12 {
        return Err(NetError::MalformedPayload(format!(
            "aggregate payload is {} bytes, expected 12",
            bytes.len()
        )));
    }
    Ok((
        u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
        i64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")),
    ))
}

/// Blocking frame reader over a stream.
struct FrameReader<R: Read> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    fn new(inner: R) -> Self {
        FrameReader {
            inner,
            buf: Vec::new(),
        }
    }

    /// Next frame, or `None` on clean end of stream.
    fn next(&mut self) -> Result<Option<Frame>, NetError> {
        loop {
            if let Some((frame, used)) = decode_frame(&self.buf)? {
                self.buf.drain(..used);
                return Ok(Some(frame));
            }
            let mut chunk = [0u8; 4096];
            let got = self.inner.read(&mut chunk)?;
            if got == 0 {
                if self.buf.is_empty() {
                    return Ok(None);
                }
                return Err(NetError::MalformedPayload(
                    "connection closed mid-frame".into(),
                ));
            }
            self.buf.extend_from_slice(&chunk[..got]);
        }
    }
}

fn send_frame(stream: &mut TcpStream, frame: &Frame) -> Result<(), NetError> {
    let bytes = encode_frame(frame)?;
    stream.write_all(&bytes)?;
    Ok(())
}

fn send_error(stream: &Arc<Mutex<TcpStream>>, reason: u8) {
    let frame = Frame {
        frame_type: FrameType::Error,
        payload: vec![reason],
    };
    if let Ok(mut s) = stream.lock() {
        let _ = send_frame(&mut s, &frame);
    }
}

struct EpochState {
    buffer: Option<EpochBuffer>,
}

/// Serve `epochs` aggregation rounds to exactly `n` clients on a pre-bound
/// listener. The key file must hold the aggregator key and the time tags.
/// Returns the per-epoch aggregates; optionally appends them to a CSV log.
pub fn serve_on(
    listener: TcpListener,
    key: &KeyFile,
    epochs: u32,
    n: u64,
    epoch_timeout: Duration,
    log_path: Option<&Path>,
) -> Result<Vec<(u32, i64)>, NetError> {
    if n < 1 {
        return Err(NetError::Protocol("n must be >= 1".into()));
    }
    let q = key.q;
    let shared = Arc::new((
        Mutex::new(EpochState { buffer: None }),
        Condvar::new(),
    ));
    let mut writers: Vec<Arc<Mutex<TcpStream>>> = Vec::with_capacity(n as usize);
    let mut reader_handles = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let (stream, _) = listener.accept()?;
        let mut reader = FrameReader::new(stream.try_clone()?);
        // a client must introduce itself before anything else
        match reader.next()? {
            Some(Frame {
                frame_type: FrameType::Hello,
                payload,
            }) => {
                parse_u32_payload(&payload, "hello")?;
            }
            _ => return Err(NetError::Protocol("expected HELLO first".into())),
        }
        let writer = Arc::new(Mutex::new(stream));
        writers.push(Arc::clone(&writer));
        let shared = Arc::clone(&shared);
        reader_handles.push(std::thread::spawn(move || {
            reader_loop(reader, writer, shared, q);
        }));
    }

    let mut log = match log_path {
        Some(path) => {
            let existed = path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            if !existed {
                f.write_all(b"epoch,aggregate\n")?;
            }
            Some(f)
        }
        None => None,
    };

    let (state, cond) = &*shared;
    let mut aggregates = Vec::with_capacity(epochs as usize);
    for epoch in 0..epochs {
        state.lock().unwrap().buffer = Some(EpochBuffer::new(epoch, n));
        let open = Frame {
            frame_type: FrameType::EpochOpen,
            payload: u32_payload(epoch),
        };
        for w in &writers {
            send_frame(&mut w.lock().unwrap(), &open)?;
        }
        let guard = state.lock().unwrap();
        let (guard, timeout) = cond
            .wait_timeout_while(guard, epoch_timeout, |st| {
                !st.buffer.as_ref().is_some_and(|b| b.is_complete())
            })
            .unwrap();
        if timeout.timed_out() {
            drop(guard);
            for w in &writers {
                send_error(w, REASON_TIMEOUT);
            }
            return Err(NetError::EpochTimeout(epoch));
        }
        let buffer = guard.buffer.as_ref().expect("complete epoch");
        let tag = &key.tags[epoch as usize % key.tags.len()];
        let sum = psa_decrypt(&key.key, tag, buffer.ciphers(), n)?;
        drop(guard);
        let reply = Frame {
            frame_type: FrameType::Aggregate,
            payload: aggregate_payload(epoch, sum),
        };
        for w in &writers {
            send_frame(&mut w.lock().unwrap(), &reply)?;
        }
        if let Some(f) = log.as_mut() {
            writeln!(f, "{epoch},{sum}")?;
        }
        aggregates.push((epoch, sum));
    }
    for w in &writers {
        let _ = w.lock().unwrap().shutdown(std::net::Shutdown::Both);
    }
    for h in reader_handles {
        let _ = h.join();
    }
    Ok(aggregates)
}

fn reader_loop(
    mut reader: FrameReader<TcpStream>,
    writer: Arc<Mutex<TcpStream>>,
    shared: Arc<(Mutex<EpochState>, Condvar)>,
    q: crate::zq::Modulus,
) {
    let (state, cond) = &*shared;
    loop {
        let frame = match reader.next() {
            Ok(Some(f)) => f,
            // EOF or malformed stream: close the connection
            _ => return,
        };
        match frame.frame_type {
            FrameType::Cipher => {
                let msg = match CipherMessage::decode(&frame.payload) {
                    Ok(m) if m.value < q.value() => m,
                    _ => {
                        send_error(&writer, REASON_MALFORMED);
                        return;
                    }
                };
                let cipher = Ciphertext {
                    epoch: msg.epoch,
                    user: msg.user_id,
                    value: RingElement::new(msg.value as i64, q),
                };
                let mut guard = state.lock().unwrap();
                match guard.buffer.as_mut() {
                    Some(buffer) => match buffer.submit(cipher) {
                        Ok(()) => cond.notify_all(),
                        Err(PsaError::DuplicateCiphertext { .. }) => {
                            drop(guard);
                            send_error(&writer, REASON_DUPLICATE);
                        }
                        Err(_) => {
                            drop(guard);
                            send_error(&writer, REASON_EPOCH_MISMATCH);
                        }
                    },
                    None => {
                        drop(guard);
                        send_error(&writer, REASON_EPOCH_MISMATCH);
                    }
                }
            }
            // nothing else is expected from a client mid-session
            _ => {
                send_error(&writer, REASON_MALFORMED);
                return;
            }
        }
    }
}

/// Bind and serve; see [`serve_on`].
pub fn serve_aggregator(
    bind: &str,
    key: &KeyFile,
    epochs: u32,
    n: u64,
    epoch_timeout: Duration,
    log_path: Option<&Path>,
) -> Result<Vec<(u32, i64)>, NetError> {
    let listener = TcpListener::bind(bind)?;
    serve_on(listener, key, epochs, n, epoch_timeout, log_path)
}

/// Connect, introduce, and answer every opened epoch with exactly one
/// ciphertext of `data[epoch % data.len()]` plus noise drawn from `noise`.
/// Returns the aggregates the server broadcast.
pub fn run_client<A: ToSocketAddrs, R: Rng>(
    addr: A,
    share: &KeyFile,
    user_id: u32,
    data: &[i64],
    m: i64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<(u32, i64)>, NetError> {
    if data.is_empty() {
        return Err(NetError::Protocol("data stream must be non-empty".into()));
    }
    let mut stream = TcpStream::connect(addr)?;
    send_frame(
        &mut stream,
        &Frame {
            frame_type: FrameType::Hello,
            payload: u32_payload(user_id),
        },
    )?;
    let mut reader = FrameReader::new(stream.try_clone()?);
    let mut aggregates = Vec::new();
    while let Some(frame) = reader.next()? {
        match frame.frame_type {
            FrameType::EpochOpen => {
                let epoch = parse_u32_payload(&frame.payload, "epoch_open")?;
                let x = data[epoch as usize % data.len()];
                let e = noise.sample(rng)?;
                let tag = &share.tags[epoch as usize % share.tags.len()];
                let cipher = psa_encrypt(&share.key, tag, x, m, e, user_id, epoch)?;
                let msg = CipherMessage {
                    user_id,
                    epoch,
                    value: cipher.value.residue(),
                };
                send_frame(
                    &mut stream,
                    &Frame {
                        frame_type: FrameType::Cipher,
                        payload: msg.encode(),
                    },
                )?;
            }
            FrameType::Aggregate => {
                aggregates.push(parse_aggregate_payload(&frame.payload)?);
            }
            FrameType::Error => {
                let code = frame.payload.first().copied().unwrap_or(0);
                return Err(NetError::ServerError(code));
            }
            other => {
                return Err(NetError::Protocol(format!(
                    "unexpected frame {other:?} from server"
                )));
            }
        }
    }
    Ok(aggregates)
}
