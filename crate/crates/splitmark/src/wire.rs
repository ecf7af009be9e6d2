//! Framed messages exchanged between the split-learning client and server.
//!
//! Frame layout, bit-exact:
//!
//! ```text
//! [magic: 4 bytes "SPLT"] [version: u8 = 1] [msg_type: u8]
//! [payload_len: u32 little-endian] [payload]
//! ```
//!
//! Message types: SMASHED=1, LABELS=2, GRAD=3, LOSS=4, END_EPOCH=5.
//!
//! Tensor payloads (SMASHED, GRAD):
//!
//! ```text
//! [ndim: u8] [dims: u32 x ndim, little-endian] [f32 data, little-endian]
//! ```
//!
//! LABELS carries `u32` class indices (count implied by the payload length),
//! LOSS a single little-endian `f32`, END_EPOCH an empty payload. Frames
//! carry explicit lengths, so stream transports need no delimiters.

use std::io::{Read, Write};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SPLT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;

/// Ceiling on payload sizes accepted from the wire; guards against garbage
/// length fields.
pub const MAX_PAYLOAD: usize = 1 << 30;

pub const MSG_SMASHED: u8 = 1;
pub const MSG_LABELS: u8 = 2;
pub const MSG_GRAD: u8 = 3;
pub const MSG_LOSS: u8 = 4;
pub const MSG_END_EPOCH: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    /// Forward activations (client to server), or score tensors on the way
    /// back under topologies that return them.
    Smashed(Tensor),
    /// Batch labels; only topology (a) ever sends these.
    Labels(Vec<u32>),
    /// Gradient w.r.t. a split boundary.
    Grad(Tensor),
    /// Scalar training loss reported back to the batch driver.
    Loss(f32),
    /// End-of-epoch marker.
    EndEpoch,
}

impl WireMessage {
    pub fn msg_type(&self) -> u8 {
        match self {
            WireMessage::Smashed(_) => MSG_SMASHED,
            WireMessage::Labels(_) => MSG_LABELS,
            WireMessage::Grad(_) => MSG_GRAD,
            WireMessage::Loss(_) => MSG_LOSS,
            WireMessage::EndEpoch => MSG_END_EPOCH,
        }
    }

    pub fn type_name(&self) -> &'static str {
        type_name(self.msg_type())
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            WireMessage::Smashed(t) | WireMessage::Grad(t) => encode_tensor(t),
            WireMessage::Labels(ls) => {
                let mut buf = Vec::with_capacity(ls.len() * 4);
                for l in ls {
                    buf.extend_from_slice(&l.to_le_bytes());
                }
                buf
            }
            WireMessage::Loss(v) => v.to_le_bytes().to_vec(),
            WireMessage::EndEpoch => Vec::new(),
        }
    }

    /// Serializes the full frame.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        buf.push(self.msg_type());
        buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        buf.extend_from_slice(&payload);
        buf
    }

    /// Decodes one frame from a byte slice that contains exactly one frame.
    pub fn decode(bytes: &[u8]) -> Result<WireMessage> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::WireDecode(format!(
                "frame of {} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::WireDecode(format!(
                "bad magic {:02x?}, expected {:02x?}",
                &bytes[..4],
                MAGIC
            )));
        }
        if bytes[4] != VERSION {
            return Err(Error::WireDecode(format!(
                "unsupported version {}, expected {VERSION}",
                bytes[4]
            )));
        }
        let msg_type = bytes[5];
        let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::WireDecode(format!(
                "payload length {len} exceeds the {MAX_PAYLOAD} byte limit"
            )));
        }
        if bytes.len() != HEADER_LEN + len {
            return Err(Error::WireDecode(format!(
                "payload length field says {len}, frame carries {}",
                bytes.len() - HEADER_LEN
            )));
        }
        Self::decode_payload(msg_type, &bytes[HEADER_LEN..])
    }

    fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<WireMessage> {
        match msg_type {
            MSG_SMASHED => Ok(WireMessage::Smashed(decode_tensor(payload)?)),
            MSG_GRAD => Ok(WireMessage::Grad(decode_tensor(payload)?)),
            MSG_LABELS => {
                if payload.len() % 4 != 0 {
                    return Err(Error::WireDecode(format!(
                        "labels payload of {} bytes is not a multiple of 4",
                        payload.len()
                    )));
                }
                Ok(WireMessage::Labels(
                    payload
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ))
            }
            MSG_LOSS => {
                if payload.len() != 4 {
                    return Err(Error::WireDecode(format!(
                        "loss payload must be 4 bytes, got {}",
                        payload.len()
                    )));
                }
                Ok(WireMessage::Loss(f32::from_le_bytes(
                    payload.try_into().expect("4 bytes"),
                )))
            }
            MSG_END_EPOCH => {
                if !payload.is_empty() {
                    return Err(Error::WireDecode(format!(
                        "end_epoch payload must be empty, got {} bytes",
                        payload.len()
                    )));
                }
                Ok(WireMessage::EndEpoch)
            }
            other => Err(Error::WireDecode(format!("unknown msg_type {other}"))),
        }
    }

    /// Writes the frame to a stream.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    /// Reads exactly one frame from a stream. A clean EOF before the first
    /// header byte maps to [`Error::TransportClosed`].
    pub fn read_from(r: &mut impl Read) -> Result<WireMessage> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            let n = r.read(&mut header[filled..])?;
            if n == 0 {
                if filled == 0 {
                    return Err(Error::TransportClosed);
                }
                return Err(Error::WireDecode(format!(
                    "stream ended after {filled} header bytes"
                )));
            }
            filled += n;
        }
        if header[..4] != MAGIC {
            return Err(Error::WireDecode(format!(
                "bad magic {:02x?}, expected {:02x?}",
                &header[..4],
                MAGIC
            )));
        }
        if header[4] != VERSION {
            return Err(Error::WireDecode(format!(
                "unsupported version {}, expected {VERSION}",
                header[4]
            )));
        }
        let len = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::WireDecode(format!(
                "payload length {len} exceeds the {MAX_PAYLOAD} byte limit"
            )));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)
            .map_err(|e| Error::WireDecode(format!("truncated payload: {e}")))?;
        Self::decode_payload(header[5], &payload)
    }
}

pub fn type_name(msg_type: u8) -> &'static str {
    match msg_type {
        MSG_SMASHED => "SMASHED",
        MSG_LABELS => "LABELS",
        MSG_GRAD => "GRAD",
        MSG_LOSS => "LOSS",
        MSG_END_EPOCH => "END_EPOCH",
        _ => "UNKNOWN",
    }
}

/// Tensor payload encoding shared by wire frames, checkpoints and
/// fingerprint files.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1 + 4 * t.shape().len() + 4 * t.len());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Inverse of [`encode_tensor`]; consumes the entire payload.
pub fn decode_tensor(payload: &[u8]) -> Result<Tensor> {
    let (tensor, used) = decode_tensor_prefix(payload)?;
    if used != payload.len() {
        return Err(Error::WireDecode(format!(
            "tensor payload has {} trailing bytes",
            payload.len() - used
        )));
    }
    Ok(tensor)
}

/// Decodes a tensor from the front of `payload`, returning the byte count it
/// consumed. Checkpoint blobs concatenate tensors in this layout.
pub fn decode_tensor_prefix(payload: &[u8]) -> Result<(Tensor, usize)> {
    if payload.is_empty() {
        return Err(Error::WireDecode("empty tensor payload".into()));
    }
    let ndim = payload[0] as usize;
    let dims_end = 1 + 4 * ndim;
    if payload.len() < dims_end {
        return Err(Error::WireDecode(format!(
            "tensor payload too short for {ndim} dims"
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 1 + 4 * i;
        shape.push(u32::from_le_bytes(payload[off..off + 4].try_into().expect("4 bytes")) as usize);
    }
    let volume: usize = shape.iter().product();
    let data_end = dims_end + 4 * volume;
    if payload.len() < data_end {
        return Err(Error::WireDecode(format!(
            "tensor payload carries {} data bytes, shape {:?} needs {}",
            payload.len() - dims_end,
            shape,
            4 * volume
        )));
    }
    let data: Vec<f32> = payload[dims_end..data_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((Tensor::new(shape, data)?, data_end))
}
