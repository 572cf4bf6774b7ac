use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::codec;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::transport::frame::{read_frame, write_frame, Frame, Opcode};
use crate::transport::protocol::*;
use crate::transport::store::sha256;

/// Wire bytes seen by the client, length prefixes included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WireStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Wire bytes of the MODEL frame alone.
    pub model_frame_bytes: u64,
}

/// Synchronous request/response connection to a model server.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pub stats: WireStats,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        stream.set_nodelay(true)?;
        let mut c = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            stats: WireStats::default(),
        };
        let reply = c.request(&Frame::new(Opcode::Hello, vec![PROTOCOL_VERSION]))?;
        if reply.opcode != Opcode::Hello || reply.payload != [PROTOCOL_VERSION] {
            return Err(Error::Malformed("unexpected HELLO reply".into()));
        }
        Ok(c)
    }

    /// Send one frame and read its reply; ERR replies become
    /// [`Error::Remote`].
    pub fn request(&mut self, frame: &Frame) -> Result<Frame> {
        self.stats.bytes_sent += write_frame(&mut self.writer, frame)? as u64;
        self.writer.flush()?;
        let reply = read_frame(&mut self.reader)?
            .ok_or_else(|| Error::Io(std::io::ErrorKind::UnexpectedEof.into()))?;
        self.stats.bytes_received += reply.wire_len() as u64;
        if reply.opcode == Opcode::Err {
            return Err(parse_error(&reply.payload));
        }
        Ok(reply)
    }

    pub fn manifest(&mut self, name: &str, version: u32) -> Result<Manifest> {
        let req = ModelRequest {
            name: name.to_string(),
            version,
        };
        let reply = self.request(&Frame::new(Opcode::GetManifest, req.encode()?))?;
        expect(&reply, Opcode::Manifest)?;
        Manifest::decode(&reply.payload)
    }

    /// Raw packet bytes, unverified.
    pub fn packet(&mut self, name: &str, version: u32) -> Result<Vec<u8>> {
        let req = ModelRequest {
            name: name.to_string(),
            version,
        };
        let reply = self.request(&Frame::new(Opcode::GetModel, req.encode()?))?;
        expect(&reply, Opcode::Model)?;
        self.stats.model_frame_bytes += reply.wire_len() as u64;
        Ok(reply.payload)
    }
}

fn expect(frame: &Frame, opcode: Opcode) -> Result<()> {
    if frame.opcode != opcode {
        return Err(Error::Malformed(format!(
            "expected opcode {:#04x}, got {:#04x}",
            opcode as u8, frame.opcode as u8
        )));
    }
    Ok(())
}

pub struct Fetched {
    pub manifest: Manifest,
    pub packet: Vec<u8>,
    pub state: ModelState,
    pub wire: WireStats,
}

/// Fetch the manifest and packet of `model`, check version and digest,
/// then decode and regenerate the banks. `None` takes the latest version.
pub fn fetch(addr: impl ToSocketAddrs, model: &str, expected_version: Option<u32>) -> Result<Fetched> {
    let mut client = Client::connect(addr)?;
    let manifest = client.manifest(model, expected_version.unwrap_or(0))?;
    if let Some(v) = expected_version {
        if manifest.version != v {
            return Err(Error::VersionMismatch {
                expected: v,
                actual: manifest.version,
            });
        }
    }
    let packet = client.packet(model, manifest.version)?;
    if packet.len() as u64 != manifest.packet_bytes || sha256(&packet) != manifest.sha256 {
        return Err(Error::HashMismatch {
            model: model.to_string(),
        });
    }
    let state = codec::decode(&packet)?;
    Ok(Fetched {
        manifest,
        packet,
        state,
        wire: client.stats,
    })
}
