//! Binary model archive. See `docs/format.md` for the byte layout.

use std::io::Write;
use std::path::Path;

use crate::cascade::{
    AugmentedFeatures, Connectivity, DaForestModel, LayerModule, OutputMode, Slot, TreeCounts,
};
use crate::error::{ArchiveError, Error, Result};
use crate::forest::{Forest, ForestKind};
use crate::tree::{DecisionTree, Node};

pub const MAGIC: &[u8; 4] = b"DAF1";
pub const FORMAT_VERSION: u32 = 1;

const NODE_SPLIT: u8 = 0;
const NODE_LEAF: u8 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("count exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn connectivity_code(c: Connectivity) -> u8 {
    match c {
        Connectivity::Plain => 0,
        Connectivity::Sparse => 1,
        Connectivity::Dense => 2,
    }
}

fn kind_code(k: ForestKind) -> u8 {
    match k {
        ForestKind::Random => 0,
        ForestKind::CompletelyRandom => 1,
    }
}

fn write_forest(w: &mut Writer, f: &Forest) {
    w.u64(f.seed());
    w.u32(f.n_estimators());
    for t in f.trees() {
        w.u64(t.seed());
        w.u32(t.nodes().len());
        for node in t.nodes() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(NODE_SPLIT);
                    w.u32(*feature);
                    w.f64(*threshold);
                    w.u32(*left);
                    w.u32(*right);
                }
                Node::Leaf {
                    distribution,
                    weight,
                } => {
                    w.u8(NODE_LEAF);
                    w.f64(*weight);
                    for &p in distribution {
                        w.f64(p);
                    }
                }
            }
        }
    }
}

/// Serializes `model` to archive bytes, including the trailing checksum.
pub fn encode(model: &DaForestModel) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.u32(model.n_features());
    w.u32(model.n_classes());
    w.u8(connectivity_code(model.connectivity()));
    w.u8(match model.augmented() {
        AugmentedFeatures::Probabilities => 0,
        AugmentedFeatures::HScores => 1,
    });
    w.u8(match model.output() {
        OutputMode::Additive => 0,
        OutputMode::LastLayer => 1,
    });
    w.u8(model.boosting() as u8);
    w.f64(model.learning_rate());
    w.f64(model.prob_clip());
    w.u64(model.seed());
    w.u32(model.n_estimators().random);
    w.u32(model.n_estimators().completely_random);
    w.u32(model.n_layers());
    let names = model.class_names().unwrap_or(&[]);
    w.u32(names.len());
    for name in names {
        w.u32(name.len());
        w.buf.extend_from_slice(name.as_bytes());
    }
    for layer in model.layers() {
        w.u32(layer.index());
        w.u32(layer.input_dim());
        w.u32(layer.slots().len());
        for slot in layer.slots() {
            w.u8(kind_code(slot.kind()));
            w.u32(slot.fold_models().len());
            w.u8(slot.full_model().is_some() as u8);
            for f in slot.fold_models().iter().chain(slot.full_model()) {
                write_forest(&mut w, f);
            }
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        if self.buf.len() - self.pos < n {
            return Err(ArchiveError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, ArchiveError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ArchiveError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// A count that must fit in the remaining bytes at `min_size` each.
    fn count(&mut self, min_size: usize) -> Result<usize, ArchiveError> {
        let n = self.u32()?;
        if n.saturating_mul(min_size) > self.buf.len() - self.pos {
            return Err(ArchiveError::Corrupt(format!(
                "count {n} at byte {} exceeds the remaining data",
                self.pos - 4
            )));
        }
        Ok(n)
    }

    fn flag(&mut self) -> Result<bool, ArchiveError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(corrupt(format!("flag byte {v} at {}", self.pos - 1))),
        }
    }
}

fn corrupt(msg: String) -> ArchiveError {
    ArchiveError::Corrupt(msg)
}

fn to_archive(e: Error) -> Error {
    match e {
        Error::Archive(_) => e,
        other => Error::Archive(ArchiveError::Corrupt(other.to_string())),
    }
}

fn read_forest(
    r: &mut Reader<'_>,
    kind: ForestKind,
    n_features: usize,
    n_classes: usize,
) -> Result<Forest> {
    let seed = r.u64()?;
    let n_trees = r.count(12)?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let tree_seed = r.u64()?;
        let n_nodes = r.count(9)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let node = match r.u8()? {
                NODE_SPLIT => Node::Split {
                    feature: r.u32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                },
                NODE_LEAF => {
                    let weight = r.f64()?;
                    let distribution = (0..n_classes)
                        .map(|_| r.f64())
                        .collect::<Result<Vec<_>, _>>()?;
                    Node::Leaf {
                        distribution,
                        weight,
                    }
                }
                tag => return Err(corrupt(format!("unknown node tag {tag}")).into()),
            };
            nodes.push(node);
        }
        trees.push(DecisionTree::from_nodes(nodes, n_features, n_classes, tree_seed).map_err(to_archive)?);
    }
    Forest::from_trees(kind, trees, seed).map_err(to_archive)
}

/// Parses archive bytes. Checks, in order: magic, version, checksum, then
/// the structure.
pub fn decode(bytes: &[u8]) -> Result<DaForestModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ArchiveError::BadMagic.into());
    }
    if bytes.len() < 12 {
        return Err(ArchiveError::Truncated(bytes.len()).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ArchiveError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        }
        .into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ArchiveError::ChecksumMismatch { stored, computed }.into());
    }

    let mut r = Reader { buf: body, pos: 8 };
    let n_features = r.u32()?;
    let n_classes = r.u32()?;
    if n_features == 0 || n_classes < 2 {
        return Err(corrupt(format!("{n_features} features, {n_classes} classes")).into());
    }
    let connectivity = match r.u8()? {
        0 => Connectivity::Plain,
        1 => Connectivity::Sparse,
        2 => Connectivity::Dense,
        v => return Err(corrupt(format!("connectivity code {v}")).into()),
    };
    let augmented = match r.u8()? {
        0 => AugmentedFeatures::Probabilities,
        1 => AugmentedFeatures::HScores,
        v => return Err(corrupt(format!("feature mode code {v}")).into()),
    };
    let output = match r.u8()? {
        0 => OutputMode::Additive,
        1 => OutputMode::LastLayer,
        v => return Err(corrupt(format!("output mode code {v}")).into()),
    };
    let boosting = r.flag()?;
    let learning_rate = r.f64()?;
    let prob_clip = r.f64()?;
    let seed = r.u64()?;
    let n_estimators = TreeCounts {
        random: r.u32()?,
        completely_random: r.u32()?,
    };
    let n_layers = r.count(12)?;
    let n_names = r.count(4)?;
    if n_names != 0 && n_names != n_classes {
        return Err(corrupt(format!("{n_names} class names for {n_classes} classes")).into());
    }
    let mut names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        let len = r.count(1)?;
        let raw = r.take(len)?;
        names.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| corrupt("class name is not UTF-8".into()))?,
        );
    }
    let class_names = (n_names > 0).then_some(names);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let index = r.u32()?;
        let input_dim = r.u32()?;
        let n_slots = r.count(6)?;
        let mut slots = Vec::with_capacity(n_slots);
        for _ in 0..n_slots {
            let kind = match r.u8()? {
                0 => ForestKind::Random,
                1 => ForestKind::CompletelyRandom,
                v => return Err(corrupt(format!("forest kind code {v}")).into()),
            };
            let n_folds = r.count(12)?;
            let has_full = r.flag()?;
            let folds = (0..n_folds)
                .map(|_| read_forest(&mut r, kind, input_dim, n_classes))
                .collect::<Result<Vec<_>>>()?;
            let full = if has_full {
                Some(read_forest(&mut r, kind, input_dim, n_classes)?)
            } else {
                None
            };
            slots.push(Slot::new(kind, folds, full).map_err(to_archive)?);
        }
        layers.push(LayerModule::new(index, input_dim, slots).map_err(to_archive)?);
    }
    if r.pos != body.len() {
        return Err(corrupt(format!("{} unread bytes before the checksum", body.len() - r.pos)).into());
    }
    Ok(DaForestModel {
        layers,
        n_features,
        n_classes,
        connectivity,
        augmented,
        output,
        boosting,
        learning_rate,
        prob_clip,
        n_estimators,
        seed,
        class_names,
        history: None,
    })
}

/// Writes the archive atomically (temporary file in the target directory,
/// then rename). Returns the number of bytes written.
pub fn save_model(model: &DaForestModel, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = encode(model);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(bytes.len())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DaForestModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
