//! Wire format for federated messages.
//!
//! ```text
//! frame   = len:u32 BE | type:u8 | payload
//! len     = 1 + payload length
//! ```
//!
//! | type | message        | payload (little-endian)                                   |
//! |------|----------------|-----------------------------------------------------------|
//! | 0x01 | `JOIN`         | client_id u32                                             |
//! | 0x02 | `GLOBAL_MODEL` | round u32, count u64, count × f64                         |
//! | 0x03 | `LOCAL_UPDATE` | client_id u32, n_samples u64, mean_loss f64, metrics, count u64, count × f64 |
//! | 0x04 | `METRICS`      | metrics                                                   |
//! | 0x05 | `SHUTDOWN`     | (empty)                                                   |
//!
//! `metrics` is accuracy f64, fn_rate f64, then the confusion matrix as four
//! u64 in row-major `[true][predicted]` order.

use std::io::{Read, Write};

use thiserror::Error;

use super::RoundUpdate;
use crate::model::Metrics;

pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;

const JOIN: u8 = 0x01;
const GLOBAL_MODEL: u8 = 0x02;
const LOCAL_UPDATE: u8 = 0x03;
const METRICS: u8 = 0x04;
const SHUTDOWN: u8 = 0x05;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("frame of {len} bytes exceeds limit of {max}")]
    TooLarge { len: usize, max: usize },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Join { client_id: u32 },
    GlobalModel { round: u32, params: Vec<f64> },
    LocalUpdate(RoundUpdate),
    Metrics(Metrics),
    Shutdown,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Join { .. } => "JOIN",
            Message::GlobalModel { .. } => "GLOBAL_MODEL",
            Message::LocalUpdate(_) => "LOCAL_UPDATE",
            Message::Metrics(_) => "METRICS",
            Message::Shutdown => "SHUTDOWN",
        }
    }
}

fn put_metrics(buf: &mut Vec<u8>, m: &Metrics) {
    buf.extend_from_slice(&m.accuracy.to_le_bytes());
    buf.extend_from_slice(&m.fn_rate.to_le_bytes());
    for v in m.confusion.iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_vec(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Encodes one complete frame.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        Message::Join { client_id } => {
            body.push(JOIN);
            body.extend_from_slice(&client_id.to_le_bytes());
        }
        Message::GlobalModel { round, params } => {
            body.push(GLOBAL_MODEL);
            body.extend_from_slice(&round.to_le_bytes());
            put_vec(&mut body, params);
        }
        Message::LocalUpdate(u) => {
            body.push(LOCAL_UPDATE);
            body.extend_from_slice(&u.client_id.to_le_bytes());
            body.extend_from_slice(&u.n_samples.to_le_bytes());
            body.extend_from_slice(&u.mean_loss.to_le_bytes());
            put_metrics(&mut body, &u.metrics);
            put_vec(&mut body, &u.params);
        }
        Message::Metrics(m) => {
            body.push(METRICS);
            put_metrics(&mut body, m);
        }
        Message::Shutdown => body.push(SHUTDOWN),
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                CodecError::Malformed(format!(
                    "payload ends at byte {} but field needs {n} more",
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec(&mut self) -> Result<Vec<f64>, CodecError> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(8).is_none_or(|b| b > remaining) {
            return Err(CodecError::Malformed(format!(
                "vector of {n} reals exceeds remaining {remaining} bytes"
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn metrics(&mut self) -> Result<Metrics, CodecError> {
        let accuracy = self.f64()?;
        let fn_rate = self.f64()?;
        let mut confusion = [[0u64; 2]; 2];
        for v in confusion.iter_mut().flatten() {
            *v = self.u64()?;
        }
        Ok(Metrics {
            accuracy,
            fn_rate,
            confusion,
        })
    }
}

/// Decodes the body of a frame (type byte plus payload).
fn decode_body(body: &[u8]) -> Result<Message, CodecError> {
    let (&ty, payload) = body
        .split_first()
        .ok_or_else(|| CodecError::Malformed("zero-length frame".into()))?;
    let mut c = Cursor { buf: payload, pos: 0 };
    let msg = match ty {
        JOIN => Message::Join { client_id: c.u32()? },
        GLOBAL_MODEL => Message::GlobalModel {
            round: c.u32()?,
            params: c.vec()?,
        },
        LOCAL_UPDATE => {
            let client_id = c.u32()?;
            let n_samples = c.u64()?;
            let mean_loss = c.f64()?;
            let metrics = c.metrics()?;
            let params = c.vec()?;
            Message::LocalUpdate(RoundUpdate {
                client_id,
                params,
                n_samples,
                mean_loss,
                metrics,
            })
        }
        METRICS => Message::Metrics(c.metrics()?),
        SHUTDOWN => Message::Shutdown,
        other => return Err(CodecError::UnknownType(other)),
    };
    if c.pos != payload.len() {
        return Err(CodecError::Malformed(format!(
            "{} trailing bytes after {}",
            payload.len() - c.pos,
            msg.kind()
        )));
    }
    Ok(msg)
}

/// Decodes exactly one frame, with the default size limit.
pub fn decode_message(bytes: &[u8]) -> Result<Message, CodecError> {
    decode_message_with_limit(bytes, DEFAULT_MAX_FRAME)
}

pub fn decode_message_with_limit(bytes: &[u8], max_frame: usize) -> Result<Message, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::Truncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > max_frame {
        return Err(CodecError::TooLarge { len, max: max_frame });
    }
    let body = &bytes[4..];
    if body.len() < len {
        return Err(CodecError::Truncated {
            needed: 4 + len,
            available: bytes.len(),
        });
    }
    if body.len() > len {
        return Err(CodecError::Malformed(format!(
            "{} bytes after the end of the frame",
            body.len() - len
        )));
    }
    decode_body(body)
}

/// Reads one frame from a stream.
pub fn read_message<R: Read>(reader: &mut R, max_frame: usize) -> Result<Message, CodecError> {
    let mut header = [0u8; 4];
    read_exact_or_truncated(reader, &mut header, 0)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > max_frame {
        return Err(CodecError::TooLarge { len, max: max_frame });
    }
    let mut body = vec![0u8; len];
    read_exact_or_truncated(reader, &mut body, 4)?;
    decode_body(&body)
}

fn read_exact_or_truncated<R: Read>(reader: &mut R, buf: &mut [u8], offset: usize) -> Result<(), CodecError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(CodecError::Truncated {
                    needed: offset + buf.len(),
                    available: offset + filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<(), CodecError> {
    writer.write_all(&encode_message(msg))?;
    writer.flush()?;
    Ok(())
}
