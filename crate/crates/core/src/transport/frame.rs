use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Largest accepted frame, opcode included.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Hello = 0x01,
    GetManifest = 0x02,
    GetModel = 0x03,
    Manifest = 0x81,
    Model = 0x82,
    Err = 0xFF,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0x01 => Opcode::Hello,
            0x02 => Opcode::GetManifest,
            0x03 => Opcode::GetModel,
            0x81 => Opcode::Manifest,
            0x82 => Opcode::Model,
            0xFF => Opcode::Err,
            other => return Err(Error::UnknownOpcode(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        Self { opcode, payload }
    }

    /// Bytes on the wire, length prefix included.
    pub fn wire_len(&self) -> usize {
        4 + 1 + self.payload.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len = self.payload.len() + 1;
        if len > MAX_FRAME {
            return Err(Error::FrameTooLarge(len as u64));
        }
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.push(self.opcode as u8);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

/// Parse one frame from the front of `buf`. Returns `Ok(None)` while the
/// frame is incomplete, otherwise the frame and the bytes it consumed.
pub fn parse_frame(buf: &[u8]) -> Result<Option<(Frame, usize)>> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if len == 0 {
        return Err(Error::Malformed("zero-length frame".into()));
    }
    if len > MAX_FRAME {
        return Err(Error::FrameTooLarge(len as u64));
    }
    if buf.len() < 4 + len {
        return Ok(None);
    }
    let opcode = Opcode::from_u8(buf[4])?;
    Ok(Some((Frame::new(opcode, buf[5..4 + len].to_vec()), 4 + len)))
}

/// Read one frame. `Ok(None)` on a clean end of stream before any byte of
/// a new frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(head) as usize;
    if len == 0 {
        return Err(Error::Malformed("zero-length frame".into()));
    }
    if len > MAX_FRAME {
        return Err(Error::FrameTooLarge(len as u64));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let opcode = Opcode::from_u8(body[0])?;
    body.remove(0);
    Ok(Some(Frame::new(opcode, body)))
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<usize> {
    let bytes = frame.to_bytes()?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_partial() {
        let f = Frame::new(Opcode::GetModel, vec![1, 2, 3]);
        let b = f.to_bytes().unwrap();
        assert_eq!(b, [4, 0, 0, 0, 0x03, 1, 2, 3]);
        for cut in 0..b.len() {
            assert_eq!(parse_frame(&b[..cut]).unwrap(), None);
        }
        assert_eq!(parse_frame(&b).unwrap(), Some((f.clone(), 8)));
        let mut cursor = io::Cursor::new(b);
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(f));
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(parse_frame(&[0, 0, 0, 0]), Err(Error::Malformed(_))));
        assert!(matches!(parse_frame(&[1, 0, 0, 0, 0x42]), Err(Error::UnknownOpcode(0x42))));
        let huge = ((MAX_FRAME + 1) as u32).to_le_bytes();
        assert!(matches!(parse_frame(&huge), Err(Error::FrameTooLarge(_))));
        let mut truncated = io::Cursor::new(vec![5, 0, 0, 0, 0x01]);
        assert!(matches!(read_frame(&mut truncated), Err(Error::Io(_))));
    }
}
