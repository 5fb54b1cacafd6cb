//! Little-endian record encoding shared by the model, quantized-model and
//! feature file formats. Every file ends with a CRC32 of all preceding bytes.

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(version);
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

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len())
            .map_err(|_| Error::arg(format!("string too long to encode: {} bytes", s.len())))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn dims(&mut self, dims: &[usize]) -> Result<()> {
        let rank = u8::try_from(dims.len())
            .map_err(|_| Error::arg(format!("rank {} too large", dims.len())))?;
        self.u8(rank);
        for &d in dims {
            let d = u32::try_from(d).map_err(|_| Error::arg(format!("dim {d} too large")))?;
            self.u32(d);
        }
        Ok(())
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.f32(*v);
        }
    }

    pub fn i8s(&mut self, vs: &[i8]) {
        self.buf.extend(vs.iter().map(|&v| v as u8));
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
    crc: u32,
}

impl<'a> Reader<'a> {
    /// Checks the magic and returns a reader positioned after the version field,
    /// together with the version.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Self, u16)> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = &bytes[..bytes.len().min(4)];
            return Err(Error::format(
                0,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(found)
                ),
            ));
        }
        if bytes.len() < 10 {
            return Err(Error::format(bytes.len(), "file too short for header and checksum"));
        }
        let split = bytes.len() - 4;
        let crc = u32::from_le_bytes(bytes[split..].try_into().unwrap());
        let mut r = Reader {
            body: &bytes[..split],
            pos: 4,
            crc,
        };
        let version = r.u16()?;
        Ok((r, version))
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len());
        match end {
            Some(end) => {
                let s = &self.body[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.body.len() - self.pos
                ),
            )),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "u8")?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, "u16")?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, "i32")?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, "f32")?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u16()? as usize;
        let bytes = self.take(len, "string")?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(at, "string is not valid UTF-8"))
    }

    pub fn dims(&mut self) -> Result<Vec<usize>> {
        let at = self.pos;
        let rank = self.u8()? as usize;
        if rank == 0 {
            return Err(Error::format(at, "tensor rank 0"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(Error::format(at, "zero-length dimension"));
            }
            dims.push(d);
        }
        Ok(dims)
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos, "payload size overflows"))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn i8s(&mut self, n: usize, what: &str) -> Result<Vec<i8>> {
        Ok(self.take(n, what)?.iter().map(|&b| b as i8).collect())
    }

    /// Requires the body to be fully consumed and the trailing checksum to match.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::format(
                self.pos,
                format!("{} unexpected bytes before checksum", self.body.len() - self.pos),
            ));
        }
        let actual = crc32fast::hash(self.body);
        if actual != self.crc {
            return Err(Error::format(
                self.body.len(),
                format!("CRC32 mismatch: stored {:08x}, computed {actual:08x}", self.crc),
            ));
        }
        Ok(())
    }
}

pub(crate) fn element_count(dims: &[usize]) -> usize {
    dims.iter().product()
}
