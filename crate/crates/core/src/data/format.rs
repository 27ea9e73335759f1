//! On-disk formats: the `SKL1` sequence container and the TAB-separated
//! dataset manifest.
//!
//! `SKL1` layout (little endian):
//!
//! ```text
//! "SKL1" | u32 T | u32 J | i32 label (-1 = none) | u32 meta_len | meta (UTF-8 key=value lines)
//!        | f32 coords[T*J*3] in (frame, joint, coordinate) order
//! ```

use std::fs;
use std::io::{self, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::SkeletonSequence;
use crate::error::{arg, Error, Result};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"SKL1";

pub fn encode_sequence(seq: &SkeletonSequence) -> Result<Vec<u8>> {
    let mut meta = String::new();
    for (k, v) in &seq.meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return arg(format!("metadata pair {k:?}={v:?} cannot be encoded"));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    let label: i32 = match seq.label {
        None => -1,
        Some(l) => i32::try_from(l).map_err(|_| Error::Argument(format!("label {l} exceeds i32")))?,
    };
    let mut out = Vec::with_capacity(20 + meta.len() + seq.coords().len() * 4);
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.joints() as u32).to_le_bytes());
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for c in seq.coords() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Io(io::Error::new(ErrorKind::UnexpectedEof, format!("truncated {what}")))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R, what: &str) -> Result<i32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(i32::from_le_bytes(b))
}

pub fn decode_sequence(bytes: &[u8]) -> Result<SkeletonSequence> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "header")?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected SKL1")));
    }
    let frames = read_u32(&mut r, "header")? as usize;
    let joints = read_u32(&mut r, "header")? as usize;
    let label = read_i32(&mut r, "header")?;
    let meta_len = read_u32(&mut r, "header")? as usize;
    if frames == 0 || joints == 0 {
        return Err(Error::Format(format!("invalid dimensions T={frames} J={joints}")));
    }
    if label < -1 {
        return Err(Error::Format(format!("invalid label {label}")));
    }
    let mut meta_bytes = vec![0u8; meta_len.min(r.len() + 1)];
    if meta_bytes.len() < meta_len {
        return Err(Error::Io(io::Error::new(ErrorKind::UnexpectedEof, "truncated metadata")));
    }
    read_exact_or(&mut r, &mut meta_bytes, "metadata")?;
    let meta_text = String::from_utf8(meta_bytes).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let mut meta = Vec::new();
    for line in meta_text.split_terminator('\n') {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("metadata line {line:?} lacks '='")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    let n = frames.checked_mul(joints).and_then(|x| x.checked_mul(3)).ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if r.len() < n * 4 {
        return Err(Error::Io(io::Error::new(ErrorKind::UnexpectedEof, "truncated coordinates")));
    }
    if r.len() > n * 4 {
        return Err(Error::Format(format!("{} trailing bytes after payload", r.len() - n * 4)));
    }
    let coords: Vec<f32> = r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut seq = SkeletonSequence::new(frames, joints, coords).map_err(|e| Error::Format(e.to_string()))?;
    seq.label = (label >= 0).then_some(label as u32);
    seq.meta = meta;
    Ok(seq)
}

pub fn save_sequence(seq: &SkeletonSequence, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_sequence(seq)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    decode_sequence(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestItem {
    pub path: PathBuf,
    pub label: u32,
    pub split: Split,
}

/// List of sequence files with labels and split tags. Relative paths are
/// resolved against `root` (the manifest's directory).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn resolve(&self, item: &ManifestItem) -> PathBuf {
        if item.path.is_absolute() {
            item.path.clone()
        } else {
            self.root.join(&item.path)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestItem> {
        self.items.iter().filter(|i| i.split == split).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.items.iter().map(|i| i.label as usize + 1).max().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for it in &self.items {
            s.push_str(&format!("{}\t{}\t{}\n", it.path.display(), it.label, it.split.as_str()));
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!("manifest line {}: expected 3 TAB-separated fields", n + 1)));
            }
            let label =
                fields[1].parse::<u32>().map_err(|_| Error::Format(format!("manifest line {}: bad label {:?}", n + 1, fields[1])))?;
            items.push(ManifestItem { path: PathBuf::from(fields[0]), label, split: fields[2].parse()? });
        }
        Ok(Self { root: root.into(), items })
    }

    /// Checks that every file exists and labels are dense starting at 0.
    pub fn validate(&self) -> Result<()> {
        for it in &self.items {
            let p = self.resolve(it);
            if !p.is_file() {
                return Err(Error::Io(io::Error::new(ErrorKind::NotFound, format!("{} does not exist", p.display()))));
            }
        }
        let k = self.num_classes();
        let mut seen = vec![false; k];
        for it in &self.items {
            seen[it.label as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("labels are not dense: class {missing} has no items")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    /// Loads every sequence of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<SkeletonSequence>> {
        let items = self.split(split);
        let loaded = crate::parallel::map_indexed(&items, |_, it| {
            load_sequence(self.resolve(it)).map(|mut s| {
                s.label = Some(it.label);
                s
            })
        });
        loaded.into_iter().collect()
    }
}
