//! On-disk descriptor cache.
//!
//! One file per descriptor, `<DESCRIPTOR>.fbdc`:
//!
//! ```text
//! header:  magic "FBDC" | version u32 | descriptor code u8 | dim u32 | config hash u64
//! records: path length u32 | path bytes (UTF-8) | dim × f64
//! ```
//!
//! All integers and reals are little-endian. Records run to end of file and
//! are written in lexicographic path order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{DescriptorError, DescriptorId, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"FBDC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub descriptor: DescriptorId,
    pub dim: usize,
    pub config_hash: u64,
}

#[derive(Debug, Default)]
struct Column {
    header: Option<CacheHeader>,
    records: BTreeMap<String, Vec<f64>>,
}

/// Descriptor vectors keyed by (descriptor, sample path) under one
/// configuration hash per descriptor. Backed by a directory or memory only.
#[derive(Debug, Default)]
pub struct DescriptorCache {
    dir: Option<PathBuf>,
    columns: BTreeMap<DescriptorId, Column>,
    dirty: BTreeSet<DescriptorId>,
}

fn cache_err(path: &Path, reason: impl ToString) -> DescriptorError {
    DescriptorError::Cache {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

impl DescriptorCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache rooted at `dir`, created if missing. Files are read lazily.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(Self {
            dir: Some(dir),
            ..Self::default()
        })
    }

    pub fn file_path(dir: &Path, descriptor: DescriptorId) -> PathBuf {
        dir.join(format!("{descriptor}.fbdc"))
    }

    /// Ensures the column for `descriptor` matches `(dim, config_hash)`.
    /// A stored file with a different header is discarded.
    pub fn prepare(&mut self, descriptor: DescriptorId, dim: usize, config_hash: u64) {
        let wanted = CacheHeader {
            descriptor,
            dim,
            config_hash,
        };
        let column = self.columns.entry(descriptor).or_default();
        if column.header.is_none() {
            if let Some(dir) = &self.dir {
                let path = Self::file_path(dir, descriptor);
                if path.exists() {
                    match read_file(&path) {
                        Ok((header, records)) => {
                            column.header = Some(header);
                            column.records = records.into_iter().collect();
                        }
                        Err(e) => log::warn!("ignoring unreadable cache: {e}"),
                    }
                }
            }
        }
        if column.header != Some(wanted) {
            if column.header.is_some() {
                log::info!("{descriptor} cache configuration changed; recomputing");
            }
            column.header = Some(wanted);
            column.records.clear();
            self.dirty.insert(descriptor);
        }
    }

    pub fn get(&self, descriptor: DescriptorId, id: &str) -> Option<&[f64]> {
        self.columns
            .get(&descriptor)?
            .records
            .get(id)
            .map(Vec::as_slice)
    }

    pub fn insert(&mut self, descriptor: DescriptorId, id: &str, values: Vec<f64>) {
        let column = self.columns.entry(descriptor).or_default();
        if column.header.is_none() {
            column.header = Some(CacheHeader {
                descriptor,
                dim: values.len(),
                config_hash: 0,
            });
        }
        column.records.insert(id.to_string(), values);
        self.dirty.insert(descriptor);
    }

    pub fn len(&self, descriptor: DescriptorId) -> usize {
        self.columns.get(&descriptor).map_or(0, |c| c.records.len())
    }

    pub fn header(&self, descriptor: DescriptorId) -> Option<CacheHeader> {
        self.columns.get(&descriptor).and_then(|c| c.header)
    }

    pub fn records(&self, descriptor: DescriptorId) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns
            .get(&descriptor)
            .into_iter()
            .flat_map(|c| c.records.iter().map(|(k, v)| (k.as_str(), v.as_slice())))
    }

    /// Writes every modified column to disk (no-op for in-memory caches).
    /// Each file is written to a temporary name and renamed into place.
    pub fn flush(&mut self) -> Result<()> {
        let Some(dir) = self.dir.clone() else {
            self.dirty.clear();
            return Ok(());
        };
        for descriptor in std::mem::take(&mut self.dirty) {
            let column = &self.columns[&descriptor];
            let header = column.header.expect("dirty column has a header");
            let path = Self::file_path(&dir, descriptor);
            write_file(&path, header, column.records.iter().map(|(k, v)| (k.as_str(), v.as_slice())))?;
        }
        Ok(())
    }

    /// CSV export `path,class,v0..vD` for one descriptor.
    pub fn export_csv<F>(&self, descriptor: DescriptorId, out: &Path, class_of: F) -> Result<()>
    where
        F: Fn(&str) -> String,
    {
        let dim = self.header(descriptor).map_or(0, |h| h.dim);
        let mut w = csv::Writer::from_path(out).map_err(|e| cache_err(out, e))?;
        let mut head = vec!["path".to_string(), "class".to_string()];
        head.extend((0..dim).map(|i| format!("v{i}")));
        w.write_record(&head).map_err(|e| cache_err(out, e))?;
        for (id, values) in self.records(descriptor) {
            let mut row = vec![id.to_string(), class_of(id)];
            row.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| cache_err(out, e))?;
        }
        w.flush().map_err(|e| cache_err(out, e))
    }
}

/// Writes a complete cache file.
pub fn write_file<'a, I>(path: &Path, header: CacheHeader, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let tmp = path.with_extension(format!("fbdc.tmp{}", std::process::id()));
    let result = (|| -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(&CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&[header.descriptor.code()])?;
        w.write_all(&(header.dim as u32).to_le_bytes())?;
        w.write_all(&header.config_hash.to_le_bytes())?;
        for (id, values) in records {
            if values.len() != header.dim {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("record {id} has {} values, header says {}", values.len(), header.dim),
                ));
            }
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| cache_err(path, e))
}

/// Reads a complete cache file.
pub fn read_file(path: &Path) -> Result<(CacheHeader, Vec<(String, Vec<f64>)>)> {
    let bytes = fs::read(path).map_err(|e| cache_err(path, e))?;
    let mut r = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if r.len() < n {
            return Err(cache_err(path, "truncated file"));
        }
        let (head, rest) = r.split_at(n);
        r = rest;
        Ok(head)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(cache_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(cache_err(path, format!("unsupported version {version}")));
    }
    let code = take(1)?[0];
    let descriptor = DescriptorId::from_code(code).ok_or_else(|| cache_err(path, format!("unknown descriptor code {code}")))?;
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config_hash = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut records = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match (&mut r).read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof && r.is_empty() => break,
            Err(_) => return Err(cache_err(path, "truncated record")),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        if r.len() < len + dim * 8 {
            return Err(cache_err(path, "truncated record"));
        }
        let (name, rest) = r.split_at(len);
        let id = std::str::from_utf8(name)
            .map_err(|e| cache_err(path, e))?
            .to_string();
        let (raw, rest) = rest.split_at(dim * 8);
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((id, values));
        r = rest;
    }
    Ok((
        CacheHeader {
            descriptor,
            dim,
            config_hash,
        },
        records,
    ))
}
