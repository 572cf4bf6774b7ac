//! Payload encodings of the request and response frames.

use crate::error::{Error, Result};
use crate::transport::frame::{Frame, Opcode};
use crate::wire::{Reader, Writer};

pub const PROTOCOL_VERSION: u8 = 1;

pub const ERR_UNKNOWN_MODEL: u16 = 1;
pub const ERR_UNKNOWN_VERSION: u16 = 2;
pub const ERR_BAD_REQUEST: u16 = 3;
pub const ERR_UNSUPPORTED_PROTOCOL: u16 = 4;
pub const ERR_UNEXPECTED_OPCODE: u16 = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub version: u32,
    pub packet_bytes: u64,
    pub sha256: [u8; 32],
}

impl Manifest {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.len16(self.name.len())?;
        w.bytes(self.name.as_bytes());
        w.u32(self.version);
        w.u64(self.packet_bytes);
        w.bytes(&self.sha256);
        Ok(w.buf)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let name = r.string16()?;
        let version = r.u32()?;
        let packet_bytes = r.u64()?;
        let sha256 = r.take(32)?.try_into().unwrap();
        r.finish()?;
        Ok(Self {
            name,
            version,
            packet_bytes,
            sha256,
        })
    }

    pub fn sha256_hex(&self) -> String {
        self.sha256.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Payload of GET_MANIFEST and GET_MODEL. Version 0 asks for the latest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelRequest {
    pub name: String,
    pub version: u32,
}

impl ModelRequest {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.len16(self.name.len())?;
        w.bytes(self.name.as_bytes());
        w.u32(self.version);
        Ok(w.buf)
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let name = r.string16()?;
        let version = r.u32()?;
        r.finish()?;
        Ok(Self { name, version })
    }
}

pub fn error_frame(code: u16, message: &str) -> Frame {
    let msg = &message.as_bytes()[..message.len().min(u16::MAX as usize)];
    let mut w = Writer::default();
    w.u16(code);
    w.u16(msg.len() as u16);
    w.bytes(msg);
    Frame::new(Opcode::Err, w.buf)
}

/// `Error::Remote` carried by an ERR frame.
pub fn parse_error(payload: &[u8]) -> Error {
    let mut r = Reader::new(payload);
    let parsed = (|| -> Result<(u16, String)> {
        let code = r.u16()?;
        let n = r.u16()? as usize;
        let msg = String::from_utf8_lossy(r.take(n)?).into_owned();
        Ok((code, msg))
    })();
    match parsed {
        Ok((code, message)) => Error::Remote { code, message },
        Err(_) => Error::Malformed("unreadable error frame".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_round_trips() {
        let m = Manifest {
            name: "mono-tiny".into(),
            version: 2,
            packet_bytes: 1234,
            sha256: [7; 32],
        };
        assert_eq!(Manifest::decode(&m.encode().unwrap()).unwrap(), m);
        let q = ModelRequest {
            name: "x".into(),
            version: 0,
        };
        assert_eq!(q.encode().unwrap(), [1, 0, b'x', 0, 0, 0, 0]);
        assert_eq!(ModelRequest::decode(&q.encode().unwrap()).unwrap(), q);
        assert!(ModelRequest::decode(&[5, 0, b'x']).is_err());
        match parse_error(&error_frame(ERR_UNKNOWN_MODEL, "no such model").payload) {
            Error::Remote { code, message } => {
                assert_eq!(code, 1);
                assert_eq!(message, "no such model");
            }
            e => panic!("{e}"),
        }
    }
}
