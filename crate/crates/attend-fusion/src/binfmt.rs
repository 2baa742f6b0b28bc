//! Shared plumbing for the two binary file formats: little-endian field
//! readers/writers and the CRC-32 (IEEE 802.3, reflected 0xEDB88320)
//! checksum that both formats append as a trailer over everything before it.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Byte-at-a-time CRC-32 lookup table, built once at first use.
fn crc_table() -> &'static [u32; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, entry) in table.iter_mut().enumerate() {
            let mut crc = i as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 {
                    (crc >> 1) ^ 0xEDB8_8320
                } else {
                    crc >> 1
                };
            }
            *entry = crc;
        }
        table
    })
}

/// CRC-32 of `bytes` (init all-ones, final complement — the common
/// zlib/Ethernet convention; crc32(b"123456789") == 0xCBF43926).
pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ table[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

/// In-memory writer that buffers the whole payload so the checksum trailer
/// can be computed over it before anything hits disk.
#[derive(Debug, Default)]
pub struct Payload {
    buf: Vec<u8>,
}

impl Payload {
    pub fn new() -> Self {
        Payload::default()
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Checksum over everything buffered so far.
    pub fn checksum(&self) -> u32 {
        crc32(&self.buf)
    }

    /// Writes payload followed by its CRC-32 trailer.
    pub fn write_with_trailer<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.buf)?;
        out.write_all(&self.checksum().to_le_bytes())?;
        Ok(())
    }
}

/// Cursor over a fully-read file body. Construction verifies the trailer;
/// all getters then consume the checked payload and report truncation as
/// file corruption rather than panicking.
#[derive(Debug)]
pub struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    /// Splits `bytes` into payload + 4-byte CRC trailer and verifies it.
    /// `kind` names the format in error messages ("dataset", "weights").
    pub fn checked(bytes: &'a [u8], kind: &'static str) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::CorruptFile(format!(
                "{kind} file too short to hold a checksum trailer"
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32(body);
        if stored != actual {
            return Err(Error::CorruptFile(format!(
                "{kind} file checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        Ok(Cursor { body, pos: 0, kind })
    }

    pub fn remaining(&self) -> usize {
        self.body.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::CorruptFile(format!(
                "{} file truncated: wanted {n} more bytes, have {}",
                self.kind,
                self.remaining()
            )));
        }
        let slice = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn get_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn get_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Errors if any payload bytes were left unread — catches files with
    /// trailing garbage that still happened to checksum correctly.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::CorruptFile(format!(
                "{} file has {} unexpected trailing payload bytes",
                self.kind,
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// Reads an entire file and returns a trailer-verified cursor source.
pub fn read_checked(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}
