//! Little-endian binary helpers shared by the checkpoint and index formats.

use std::io::{self, Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads version {expected})")]
    Version { expected: u32, found: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PersistError {
    fn from_read(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            PersistError::Truncated
        } else {
            PersistError::Io(e)
        }
    }
}

pub struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>, PersistError> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(PersistError::from_read)?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PersistError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(PersistError::from_read)?;
        Ok(buf)
    }

    /// Checks the 4-byte magic and the u32 version that follows it.
    pub fn header(&mut self, magic: [u8; 4], version: u32) -> Result<(), PersistError> {
        let found = self.array::<4>()?;
        if found != magic {
            return Err(PersistError::BadMagic { expected: magic, found });
        }
        let v = self.u32()?;
        if v != version {
            return Err(PersistError::Version {
                expected: version,
                found: v,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, PersistError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, PersistError> {
        let raw = self.bytes(n.checked_mul(4).ok_or_else(|| PersistError::Malformed("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    /// u32 length prefix followed by UTF-8 bytes.
    pub fn string(&mut self) -> Result<String, PersistError> {
        let n = self.u32()? as usize;
        let raw = self.bytes(n)?;
        String::from_utf8(raw).map_err(|_| PersistError::Malformed("invalid UTF-8 string".into()))
    }

    /// Fails unless the stream is exhausted.
    pub fn finish(mut self) -> Result<(), PersistError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(PersistError::Malformed("trailing bytes after payload".into())),
        }
    }
}

pub struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn header(&mut self, magic: [u8; 4], version: u32) -> io::Result<()> {
        self.inner.write_all(&magic)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, vs: &[f32]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)
    }

    pub fn string(&mut self, s: &str) -> io::Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string too long"))?;
        self.u32(len)?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
