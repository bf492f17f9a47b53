//! Binary container shared by dataset (`.ced`) and checkpoint (`.cep`) files.
//!
//! Layout: one text line `<MAGIC> {key=value ...}\n`, then a sequence of
//! blocks. Each block is `rows: u64 LE`, `cols: u64 LE`, followed by
//! `rows * cols` little-endian `f64` values in row-major order.

use std::path::Path;

use ndarray::Array2;

use crate::config::KvMap;
use crate::error::{Error, Result};

/// Upper bound on a single block, guards against corrupt shape prefixes.
const MAX_BLOCK_ENTRIES: u64 = 1 << 32;

#[derive(Debug)]
pub struct ContainerWriter {
    buf: Vec<u8>,
}

impl ContainerWriter {
    pub fn new(magic: &str, header: &KvMap) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic.as_bytes());
        buf.push(b' ');
        buf.extend_from_slice(header.to_header().as_bytes());
        buf.push(b'\n');
        Self { buf }
    }

    pub fn block(&mut self, a: &Array2<f64>) {
        let (r, c) = a.dim();
        self.buf.extend_from_slice(&(r as u64).to_le_bytes());
        self.buf.extend_from_slice(&(c as u64).to_le_bytes());
        for x in a.iter() {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        self.block(&Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("1xn shape"));
    }

    pub fn scalar(&mut self, x: f64) {
        self.row(&[x]);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write(self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug)]
pub struct ContainerReader {
    path: std::path::PathBuf,
    bytes: Vec<u8>,
    pos: usize,
    header: KvMap,
}

impl ContainerReader {
    pub fn open(path: &Path, magic: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, bytes, magic)
    }

    pub fn from_bytes(path: &Path, bytes: Vec<u8>, magic: &str) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing header line"))?;
        let line = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::format(path, "header is not UTF-8"))?;
        let rest = line
            .strip_prefix(magic)
            .ok_or_else(|| Error::format(path, format!("expected magic `{magic}`")))?;
        let header = KvMap::parse(rest)?;
        Ok(Self {
            path: path.to_path_buf(),
            bytes,
            pos: nl + 1,
            header,
        })
    }

    pub fn header(&self) -> &KvMap {
        &self.header
    }

    fn take_u64(&mut self) -> Result<u64> {
        let end = self.pos + 8;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(&self.path, "truncated block prefix"))?;
        self.pos = end;
        Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
    }

    pub fn block(&mut self) -> Result<Array2<f64>> {
        let r = self.take_u64()?;
        let c = self.take_u64()?;
        let n = r
            .checked_mul(c)
            .filter(|&n| n <= MAX_BLOCK_ENTRIES)
            .ok_or_else(|| Error::format(&self.path, format!("implausible block shape {r}x{c}")))?
            as usize;
        let end = self.pos + n * 8;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(&self.path, "truncated block payload"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        self.pos = end;
        Ok(Array2::from_shape_vec((r as usize, c as usize), data).expect("shape checked"))
    }

    /// Next block, required to have the given shape.
    pub fn block_shaped(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let b = self.block()?;
        if b.dim() != (rows, cols) {
            return Err(Error::format(
                &self.path,
                format!("{what}: expected {rows}x{cols}, found {:?}", b.dim()),
            ));
        }
        Ok(b)
    }

    pub fn row(&mut self, what: &str) -> Result<Vec<f64>> {
        let b = self.block()?;
        if b.nrows() != 1 && b.len() != 0 {
            return Err(Error::format(&self.path, format!("{what}: expected a row block")));
        }
        Ok(b.into_iter().collect())
    }

    pub fn scalar(&mut self, what: &str) -> Result<f64> {
        let v = self.row(what)?;
        if v.len() != 1 {
            return Err(Error::format(&self.path, format!("{what}: expected a scalar")));
        }
        Ok(v[0])
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(&self.path, "trailing bytes after last block"));
        }
        Ok(())
    }

    pub fn format_error(&self, msg: impl Into<String>) -> Error {
        Error::format(&self.path, msg)
    }
}
