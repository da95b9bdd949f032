//! Length-prefixed frames: `length u32 | type u8 | session u128 | payload`,
//! little-endian, where `length` counts payload bytes only.

use std::io::{Read, Write};

use crate::error::{ErrorCode, ProtocolError, Result};

/// Bytes before the payload.
pub const HEADER_LEN: usize = 4 + 1 + 16;

/// Largest accepted payload (1 GiB), to bound allocation on hostile input.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    ModelUpload = 1,
    GcTransfer = 2,
    InputUpload = 3,
    GarbledInput = 4,
    GarbledOutput = 5,
    Result = 6,
    Error = 7,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        use FrameType::*;
        [
            ModelUpload,
            GcTransfer,
            InputUpload,
            GarbledInput,
            GarbledOutput,
            Result,
            Error,
        ]
        .into_iter()
        .find(|t| *t as u8 == v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub session: u128,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, session: u128, payload: Vec<u8>) -> Self {
        Frame { kind, session, payload }
    }

    pub fn error(session: u128, code: ErrorCode, message: impl Into<String>) -> Self {
        let body = ErrorBody {
            code,
            message: message.into(),
        };
        Frame::new(
            FrameType::Error,
            session,
            serde_json::to_vec(&body).expect("error body serializes"),
        )
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Turn an ERROR frame into the matching error; other frames pass.
    pub fn into_result(self) -> Result<Frame> {
        if self.kind != FrameType::Error {
            return Ok(self);
        }
        let body: ErrorBody = serde_json::from_slice(&self.payload)
            .map_err(|e| ProtocolError::Malformed(format!("error payload: {e}")))?;
        Err(ProtocolError::Remote {
            code: body.code,
            message: body.message,
        })
    }

    /// Require a frame of type `kind`, surfacing remote errors.
    pub fn expect(self, kind: FrameType) -> Result<Frame> {
        let f = self.into_result()?;
        if f.kind != kind {
            return Err(ProtocolError::Malformed(format!("expected {kind:?}, got {:?}", f.kind)));
        }
        Ok(f)
    }
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

/// Outcome of reading one frame.
#[derive(Debug)]
pub enum Incoming {
    Frame(Frame),
    /// A well-formed header with an unassigned type byte; the payload was
    /// consumed so the stream stays in sync.
    UnknownType {
        kind: u8,
        session: u128,
    },
    /// The peer closed the stream before a new frame started.
    Closed,
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!(
            "payload of {} bytes exceeds the frame limit",
            frame.payload.len()
        )));
    }
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Incoming> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(Incoming::Closed),
            Ok(0) => return Err(ProtocolError::Malformed("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    let kind = header[4];
    let session = u128::from_le_bytes(header[5..].try_into().expect("16 bytes"));
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!(
            "frame length {len} exceeds the limit"
        )));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            ProtocolError::Malformed(format!("stream ended inside a {len}-byte payload"))
        }
        _ => e.into(),
    })?;
    Ok(match FrameType::from_u8(kind) {
        Some(kind) => Incoming::Frame(Frame { kind, session, payload }),
        None => Incoming::UnknownType { kind, session },
    })
}

/// Read a frame where the peer must answer.
pub fn read_reply(r: &mut impl Read) -> Result<Frame> {
    match read_frame(r)? {
        Incoming::Frame(f) => Ok(f),
        Incoming::UnknownType { kind, .. } => Err(ProtocolError::Malformed(format!("unknown frame type {kind}"))),
        Incoming::Closed => Err(ProtocolError::Malformed("peer closed the connection".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let f = Frame::new(FrameType::GarbledInput, 0x0102, vec![9, 8, 7]);
        let b = f.encode();
        assert_eq!(&b[..4], &[3, 0, 0, 0]);
        assert_eq!(b[4], 4);
        assert_eq!(&b[5..7], &[2, 1]);
        assert!(b[7..21].iter().all(|&x| x == 0));
        assert_eq!(&b[21..], &[9, 8, 7]);
        match read_frame(&mut b.as_slice()).unwrap() {
            Incoming::Frame(g) => assert_eq!(g, f),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_types_and_truncation() {
        let mut b = Frame::new(FrameType::Result, 5, vec![1, 2]).encode();
        b[4] = 42;
        assert!(matches!(
            read_frame(&mut b.as_slice()).unwrap(),
            Incoming::UnknownType { kind: 42, session: 5 }
        ));
        let b = Frame::new(FrameType::Result, 5, vec![1, 2]).encode();
        assert!(read_frame(&mut &b[..22]).is_err());
        assert!(read_frame(&mut &b[..3]).is_err());
        assert!(matches!(read_frame(&mut &b[..0]).unwrap(), Incoming::Closed));
        let mut huge = b.clone();
        huge[..4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_frame(&mut huge.as_slice()).is_err());
    }

    #[test]
    fn error_frames_surface_as_errors() {
        let f = Frame::error(1, ErrorCode::Authenticity, "bad label");
        let err = f.expect(FrameType::Result).unwrap_err();
        assert!(err.is_authenticity());
    }
}
