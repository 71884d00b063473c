//! File formats and persistence: event/label/image files, run configs,
//! checkpoints. All binary formats are little-endian with magic headers;
//! parsers reject trailing garbage.

mod checkpoint;
mod config;
mod events_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use config::RunConfig;
pub use events_file::{
    read_events, read_image, read_label_grid, write_events, write_image, write_label_grid,
};

use std::path::Path;

use crate::error::Result;

/// Writes bytes atomically via temp-and-rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Cursor over an in-memory file that reports byte offsets on failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(crate::error::Error::Parse { offset: self.pos as u64, message: message.into() })
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return self.err(format!("truncated while reading {what} ({n} bytes needed)"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expect {
            self.pos -= 4;
            return self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expect)
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn i8(&mut self, what: &str) -> Result<i8> {
        Ok(self.take(1, what)?[0] as i8)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(crate::error::Error::Parse {
                offset: self.pos as u64,
                message: format!("{} trailing bytes after end of data", self.remaining()),
            });
        }
        Ok(())
    }
}
