//! Binary container shared by θ and trainer checkpoints.
//!
//! Layout: `b"HPIX"`, `u16` format version, `u8` record kind, then a
//! kind-specific body. All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HPIX";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Theta = 1,
    Trainer = 2,
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(kind: Kind) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.u8(kind as u8);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic, version and kind.
    pub fn open(bytes: &'a [u8], kind: Kind) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a hyperpix checkpoint".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {VERSION})"
            )));
        }
        let found = r.u8()?;
        if found != kind as u8 {
            return Err(Error::Checkpoint(format!(
                "wrong record kind {found}: expected {} ({kind:?})",
                kind as u8
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_checks() {
        let mut w = Writer::new(Kind::Theta);
        w.u32(7);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, Kind::Theta).unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        r.finish().unwrap();

        let err = Reader::open(&bytes, Kind::Trainer).err().unwrap();
        assert!(err.to_string().contains("kind"));
        let mut bumped = bytes.clone();
        bumped[4] = 2;
        assert!(Reader::open(&bumped, Kind::Theta).err().unwrap().to_string().contains("version 2"));
        assert!(Reader::open(b"PNG!", Kind::Theta).err().unwrap().to_string().contains("magic"));
        let mut r = Reader::open(&bytes[..8], Kind::Theta).unwrap();
        assert!(r.u32().unwrap_err().to_string().contains("truncated"));
    }
}
