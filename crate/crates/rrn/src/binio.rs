//! Little-endian primitives shared by the data and checkpoint formats.

use crate::error::{CliError, Result};

pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self { buf: magic.to_vec() };
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| CliError::Format(format!("length {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.len(b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn shape(&mut self, shape: &[usize]) -> Result<()> {
        self.len(shape.len())?;
        for &d in shape {
            self.len(d)?;
        }
        Ok(())
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Checks the magic and returns the reader with the format version.
    pub fn open(data: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<(Self, u32)> {
        if data.len() < 8 || &data[..8] != magic {
            return Err(CliError::Format(format!("not a {what} file (bad magic)")));
        }
        let mut r = Self { data, pos: 8, what };
        let version = r.u32()?;
        Ok((r, version))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            CliError::Format(format!("truncated {} file at byte {}", self.what, self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| CliError::Format(format!("invalid UTF-8 in {} file", self.what)))
    }

    pub fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.len()?;
        if rank > 8 {
            return Err(CliError::Format(format!("implausible rank {rank} in {} file", self.what)));
        }
        (0..rank).map(|_| self.len()).collect()
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| CliError::Format("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(CliError::Format(format!(
                "{} trailing bytes in {} file",
                self.data.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}
