//! On-disk index format.
//!
//! All integers are little-endian.
//!
//! ```text
//! "SKDX" | version u32 | config_len u32 | config JSON
//! codebook ("PQCB" blob)
//! page_count u32
//! per page:
//!   page_id u32 | width u32 | height u32
//!   title_len u32 | title utf-8 | source_len u32 | source utf-8
//!   n u32 | n x (page_id, x, y, side) u32 | n x M code bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::engine::{Index, IndexConfig, PageRecord};
use crate::error::{Error, Result};
use crate::pq::{CodeArray, PqCodebook};
use crate::proposal::Window;

pub const INDEX_MAGIC: [u8; 4] = *b"SKDX";
pub const INDEX_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

impl Index {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| Error::InvalidParameter(format!("config not serializable: {e}")))?;
        let mut run = || -> std::io::Result<()> {
            w.write_all(&INDEX_MAGIC)?;
            put_u32(&mut w, INDEX_VERSION)?;
            put_u32(&mut w, config.len() as u32)?;
            w.write_all(&config)?;
            self.codebook.write_to(&mut w)?;
            put_u32(&mut w, self.pages.len() as u32)?;
            for p in &self.pages {
                put_u32(&mut w, p.page_id)?;
                put_u32(&mut w, p.width)?;
                put_u32(&mut w, p.height)?;
                put_str(&mut w, &p.title_id)?;
                put_str(&mut w, &p.source)?;
                put_u32(&mut w, p.windows.len() as u32)?;
                for win in &p.windows {
                    for v in [win.page_id, win.x, win.y, win.side] {
                        put_u32(&mut w, v)?;
                    }
                }
                w.write_all(p.codes.as_bytes())?;
            }
            w.flush()
        };
        run().map_err(|e| Error::io("<index stream>", e))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Index::read_from(BufReader::new(file))
    }

    /// Parses an index stream. Truncation or inconsistent contents give
    /// [`Error::CorruptIndex`] with the offending byte offset.
    pub fn read_from(r: impl Read) -> Result<Index> {
        let mut r = Counting { inner: r, offset: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != INDEX_MAGIC {
            return Err(r.corrupt(0, "bad magic"));
        }
        let version = r.u32("version")?;
        if version != INDEX_VERSION {
            return Err(r.corrupt(4, format!("unsupported version {version}")));
        }
        let config_len = r.u32("config length")? as usize;
        let config_at = r.offset;
        let config_bytes = r.bytes(config_len, "config")?;
        let config: IndexConfig = serde_json::from_slice(&config_bytes)
            .map_err(|e| r.corrupt(config_at, format!("config: {e}")))?;
        config
            .validate()
            .map_err(|e| r.corrupt(config_at, format!("config: {e}")))?;

        let codebook_at = r.offset;
        let codebook = PqCodebook::read_from(&mut r.inner, codebook_at)?;
        r.offset += codebook.serialized_len() as u64;
        if codebook.subspaces() != config.subspaces
            || codebook.centroids_per_subspace() != config.centroids
            || codebook.dim() != config.dim()
        {
            return Err(r.corrupt(codebook_at, "codebook shape disagrees with config"));
        }
        let m = config.subspaces;

        let page_count = r.u32("page count")?;
        let mut pages = Vec::with_capacity(page_count.min(1 << 16) as usize);
        for expected_id in 0..page_count {
            let page_at = r.offset;
            let page_id = r.u32("page id")?;
            if page_id != expected_id {
                return Err(r.corrupt(page_at, format!("page id {page_id}, expected {expected_id}")));
            }
            let width = r.u32("width")?;
            let height = r.u32("height")?;
            let title_id = r.string("title")?;
            let source = r.string("source")?;
            let n = r.u32("window count")? as usize;
            let mut windows = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let at = r.offset;
                let win = Window {
                    page_id: r.u32("window")?,
                    x: r.u32("window")?,
                    y: r.u32("window")?,
                    side: r.u32("window")?,
                };
                let inside = win.side > 0
                    && (win.x as u64 + win.side as u64) <= width as u64
                    && (win.y as u64 + win.side as u64) <= height as u64;
                if win.page_id != page_id || !inside {
                    return Err(r.corrupt(at, "window outside its page"));
                }
                windows.push(win);
            }
            let codes_at = r.offset;
            let bytes = r.bytes(n * m, "codes")?;
            if let Some(pos) = bytes.iter().position(|&b| b as usize >= config.centroids) {
                return Err(r.corrupt(codes_at + pos as u64, "code beyond centroid count"));
            }
            pages.push(PageRecord {
                page_id,
                title_id,
                source,
                width,
                height,
                windows,
                codes: CodeArray::from_bytes(m, bytes)?,
            });
        }
        let mut probe = [0u8; 1];
        match r.inner.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => return Err(r.corrupt(r.offset, "trailing bytes")),
            Err(e) => return Err(r.corrupt(r.offset, e.to_string())),
        }
        Ok(Index {
            config,
            codebook,
            pages,
        })
    }
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn corrupt(&self, offset: u64, reason: impl Into<String>) -> Error {
        Error::CorruptIndex {
            offset,
            reason: reason.into(),
        }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|e| self.corrupt(self.offset, format!("{what}: {e}")))?;
        if got < n {
            return Err(self.corrupt(self.offset + got as u64, format!("truncated {what}")));
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let v = self.bytes(N, what)?;
        let mut out = [0u8; N];
        out.copy_from_slice(&v);
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.offset;
        let len = self.u32(what)? as usize;
        let raw = self.bytes(len, what)?;
        String::from_utf8(raw).map_err(|_| self.corrupt(at, format!("{what} is not utf-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq::PqCode;

    fn tiny_index() -> Index {
        let config = IndexConfig {
            cells: 1,
            subspaces: 2,
            centroids: 3,
            ..IndexConfig::default()
        };
        let centroids: Vec<f32> = (0..2 * 3 * 2).map(|i| i as f32 * 0.1).collect();
        let codebook = PqCodebook::from_centroids(2, 3, 4, 7, centroids).unwrap();
        let mut codes = CodeArray::new(2);
        codes.push(&PqCode(vec![0, 2]));
        codes.push(&PqCode(vec![1, 1]));
        Index {
            config,
            codebook,
            pages: vec![PageRecord {
                page_id: 0,
                title_id: "t".into(),
                source: "p.png".into(),
                width: 50,
                height: 40,
                windows: vec![
                    Window { page_id: 0, x: 0, y: 0, side: 40 },
                    Window { page_id: 0, x: 10, y: 0, side: 40 },
                ],
                codes,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let idx = tiny_index();
        let bytes = idx.to_bytes().unwrap();
        assert_eq!(Index::read_from(&bytes[..]).unwrap(), idx);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = tiny_index().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            match Index::read_from(&bytes[..cut]) {
                Err(Error::CorruptIndex { offset, .. }) => assert!(offset <= cut as u64, "cut {cut}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_code_byte_is_located() {
        let mut bytes = tiny_index().to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 9;
        match Index::read_from(&bytes[..]) {
            Err(Error::CorruptIndex { offset, .. }) => assert_eq!(offset, last as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = tiny_index().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(Index::read_from(&bytes[..]), Err(Error::CorruptIndex { .. })));
    }
}
