//! Binary and text interchange formats.
//!
//! Embeddings (`PAUE`, little-endian):
//!
//! ```text
//! magic "PAUE" | version u16 | modality u8 (0 vision, 1 text) | n u64 | d u32 | n*d f32
//! ```
//!
//! Checkpoints (`PAUP`, little-endian):
//!
//! ```text
//! magic "PAUP" | version u16
//! vision bank: k u32 | d u32 | k*d f32
//! text bank:   k u32 | d u32 | k*d f32
//! evidence:    kind u8 (0 relu, 1 softplus, 2 exponential) | gamma f64 | theta f64 | tau f64
//! rerank:      beta1 f64 | beta2 f64
//! metadata:    len u32 | UTF-8 "key=value\n" lines, keys sorted
//! ```
//!
//! Pairs are text, one `vision<TAB>text` line per pair.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::embed::{EmbeddingSet, Modality, PairSet};
use crate::error::{PauError, Result};
use crate::evidence::{EvidenceConfig, EvidenceKind};
use crate::matrix::Matrix;
use crate::proto::PrototypeBank;
use crate::rerank::RerankParams;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PAUE";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PAUP";
pub const FORMAT_VERSION: u16 = 1;

/// Writes through a temp file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PauError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| PauError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PauError::io(path, e))?;
    tmp.persist(path).map_err(|e| PauError::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PauError::io(path, e))
}

/// Bounds-checked little-endian cursor; never allocates past the buffer length.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(PauError::TruncatedFile {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// `count` f32 values widened to f64.
    fn f32s(&mut self, count: u64) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(4)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or(PauError::TruncatedFile {
                needed: usize::MAX,
                available: self.buf.len(),
            })?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect())
    }

    fn magic(&mut self, expected: &'static [u8; 4], name: &'static str) -> Result<()> {
        if self.buf.len() >= 4 && &self.buf[..4] != expected {
            return Err(PauError::BadMagic { expected: name });
        }
        self.take(4).map(|_| ())
    }

    fn version(&mut self) -> Result<()> {
        match self.u16()? {
            FORMAT_VERSION => Ok(()),
            v => Err(PauError::UnsupportedVersion(v)),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(PauError::InvariantViolation(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(19 + set.n() * set.d() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(set.modality().to_byte());
    out.extend_from_slice(&(set.n() as u64).to_le_bytes());
    out.extend_from_slice(&(set.d() as u32).to_le_bytes());
    put_f32s(&mut out, set.vectors().as_slice());
    out
}

/// Parses an embedding file. Rows that are not unit-norm (beyond float32
/// rounding) are re-normalized; zero rows are rejected.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut c = Cursor::new(bytes);
    c.magic(EMBEDDING_MAGIC, "PAUE")?;
    c.version()?;
    let modality_byte = c.u8()?;
    let modality = Modality::from_byte(modality_byte).ok_or_else(|| {
        PauError::InvariantViolation(format!("unknown modality byte {modality_byte}"))
    })?;
    let n = c.u64()?;
    let d = c.u32()?;
    let values = c.f32s(n.saturating_mul(d as u64))?;
    c.finish()?;
    EmbeddingSet::from_stored(modality, n as usize, d as usize, values)
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_embeddings(set))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&read_file(path)?)
}

/// One vector per line, comma-separated. A first line that does not parse as
/// numbers is treated as a header.
pub fn parse_embeddings_csv(text: &str, modality: Modality) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| PauError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(PauError::Parse {
                            line,
                            message: format!("expected {} values, found {}", first.len(), row.len()),
                        });
                    }
                }
                rows.push(row);
            }
            Err(_) if line == 1 => {}
            Err(e) => {
                return Err(PauError::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(PauError::Empty);
    }
    EmbeddingSet::from_rows(modality, &rows)
}

pub fn read_embeddings_csv(path: &Path, modality: Modality) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path).map_err(|e| PauError::io(path, e))?;
    parse_embeddings_csv(&text, modality)
}

/// Parses `vision<TAB>text` lines; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<PairSet> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let parse = |f: Option<&str>| -> Result<usize> {
            f.ok_or_else(|| PauError::Parse {
                line,
                message: "expected two tab-separated indices".into(),
            })?
            .trim()
            .parse::<usize>()
            .map_err(|e| PauError::Parse {
                line,
                message: e.to_string(),
            })
        };
        let v = parse(fields.next())?;
        let t = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(PauError::Parse {
                line,
                message: "more than two fields".into(),
            });
        }
        pairs.push((v, t));
    }
    PairSet::new(pairs)
}

pub fn read_pairs(path: &Path) -> Result<PairSet> {
    let text = fs::read_to_string(path).map_err(|e| PauError::io(path, e))?;
    parse_pairs(&text)
}

pub fn encode_pairs(pairs: &PairSet) -> String {
    let mut s = String::with_capacity(pairs.len() * 8);
    for &(v, t) in pairs.iter() {
        s.push_str(&format!("{v}\t{t}\n"));
    }
    s
}

pub fn write_pairs(pairs: &PairSet, path: &Path) -> Result<()> {
    write_atomic(path, encode_pairs(pairs).as_bytes())
}

/// Trained banks plus everything needed to score and re-rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bank_v: PrototypeBank,
    pub bank_t: PrototypeBank,
    pub evidence: EvidenceConfig,
    pub rerank: RerankParams,
    /// Free-form training metadata (seed, epochs, lambda_div, corpus digest, ...).
    pub meta: BTreeMap<String, String>,
}

fn put_bank(out: &mut Vec<u8>, bank: &PrototypeBank) {
    out.extend_from_slice(&(bank.k() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.d() as u32).to_le_bytes());
    put_f32s(out, bank.vectors().as_slice());
}

fn get_bank(c: &mut Cursor<'_>, modality: Modality) -> Result<PrototypeBank> {
    let k = c.u32()?;
    let d = c.u32()?;
    let values = c.f32s(k as u64 * d as u64)?;
    PrototypeBank::new(modality, Matrix::from_vec(k as usize, d as usize, values))
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.bank_v.d() != ckpt.bank_t.d() {
        return Err(PauError::InvariantViolation(format!(
            "bank dimensions differ: {} vs {}",
            ckpt.bank_v.d(),
            ckpt.bank_t.d()
        )));
    }
    if ckpt.bank_v.modality() != Modality::Vision || ckpt.bank_t.modality() != Modality::Text {
        return Err(PauError::InvariantViolation("banks are in the wrong slots".into()));
    }
    ckpt.evidence.validate()?;
    ckpt.rerank.validate()?;
    let mut meta = String::new();
    for (k, v) in &ckpt.meta {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(PauError::InvariantViolation(format!(
                "metadata entry {k:?} cannot be encoded"
            )));
        }
        meta.push_str(&format!("{k}={v}\n"));
    }
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| PauError::InvariantViolation("metadata block too large".into()))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_bank(&mut out, &ckpt.bank_v);
    put_bank(&mut out, &ckpt.bank_t);
    out.push(ckpt.evidence.kind.to_byte());
    for v in [ckpt.evidence.gamma, ckpt.evidence.theta, ckpt.evidence.tau] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [ckpt.rerank.beta1, ckpt.rerank.beta2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(bytes);
    c.magic(CHECKPOINT_MAGIC, "PAUP")?;
    c.version()?;
    let bank_v = get_bank(&mut c, Modality::Vision)?;
    let bank_t = get_bank(&mut c, Modality::Text)?;
    if bank_v.d() != bank_t.d() {
        return Err(PauError::InvariantViolation("bank dimensions differ".into()));
    }
    let kind_byte = c.u8()?;
    let kind = EvidenceKind::from_byte(kind_byte)
        .ok_or_else(|| PauError::InvariantViolation(format!("unknown evidence kind {kind_byte}")))?;
    let evidence = EvidenceConfig {
        kind,
        gamma: c.f64()?,
        theta: c.f64()?,
        tau: c.f64()?,
    };
    let rerank = RerankParams {
        beta1: c.f64()?,
        beta2: c.f64()?,
    };
    let meta_len = c.u32()?;
    let raw = c.take(meta_len as usize)?;
    c.finish()?;
    let text = std::str::from_utf8(raw)
        .map_err(|e| PauError::InvariantViolation(format!("metadata is not UTF-8: {e}")))?;
    let mut meta = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line.split_once('=').ok_or_else(|| PauError::Parse {
            line: i + 1,
            message: "metadata line without '='".into(),
        })?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(Checkpoint {
        bank_v,
        bank_t,
        evidence,
        rerank,
        meta,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::init_prototypes;

    fn sample_set() -> EmbeddingSet {
        EmbeddingSet::from_rows(
            Modality::Text,
            &[vec![0.3, -1.2, 0.5], vec![2.0, 0.1, 0.0], vec![-0.4, 0.4, 0.9]],
        )
        .unwrap()
    }

    fn sample_ckpt() -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "7".into());
        meta.insert("epochs".into(), "12".into());
        Checkpoint {
            bank_v: init_prototypes(Modality::Vision, 3, 5, 1).unwrap(),
            bank_t: init_prototypes(Modality::Text, 3, 5, 2).unwrap(),
            evidence: EvidenceConfig::default(),
            rerank: RerankParams::new(0.5, 1.25).unwrap(),
            meta,
        }
    }

    #[test]
    fn embeddings_header_layout() {
        let bytes = encode_embeddings(&sample_set());
        assert_eq!(&bytes[..4], b"PAUE");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(u64::from_le_bytes(bytes[7..15].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[15..19].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 19 + 9 * 4);
    }

    #[test]
    fn embeddings_round_trip() {
        let set = sample_set();
        let bytes = encode_embeddings(&set);
        let back = decode_embeddings(&bytes).unwrap();
        assert_eq!(encode_embeddings(&back), bytes);
        for (a, b) in set.vectors().as_slice().iter().zip(back.vectors().as_slice()) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn embedding_errors() {
        let mut bytes = encode_embeddings(&sample_set());
        assert!(matches!(
            decode_embeddings(b"XXXX\x01\x00"),
            Err(PauError::BadMagic { expected: "PAUE" })
        ));
        assert!(matches!(
            decode_embeddings(&bytes[..bytes.len() - 3]),
            Err(PauError::TruncatedFile { .. })
        ));
        assert!(matches!(decode_embeddings(b"PA"), Err(PauError::TruncatedFile { .. })));
        bytes[4] = 9;
        assert!(matches!(decode_embeddings(&bytes), Err(PauError::UnsupportedVersion(9))));
    }

    #[test]
    fn huge_declared_size_does_not_allocate() {
        let mut bytes = Vec::from(&b"PAUE"[..]);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_embeddings(&bytes), Err(PauError::TruncatedFile { .. })));
    }

    #[test]
    fn zero_row_in_file_is_rejected() {
        let mut bytes = encode_embeddings(&sample_set());
        for b in &mut bytes[19..31] {
            *b = 0;
        }
        assert!(matches!(decode_embeddings(&bytes), Err(PauError::ZeroVector { row: 0 })));
    }

    #[test]
    fn csv_reader() {
        let s = parse_embeddings_csv("a,b,c\n3,4,0\n0, 0, 2\n", Modality::Vision).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.row(0), &[0.6, 0.8, 0.0]);
        assert_eq!(s.row(1), &[0.0, 0.0, 1.0]);
        let s = parse_embeddings_csv("1,0\n0,1\n", Modality::Text).unwrap();
        assert_eq!(s.n(), 2);
        assert!(matches!(
            parse_embeddings_csv("1,0\n0,x\n", Modality::Text),
            Err(PauError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_embeddings_csv("1,0\n0,1,2\n", Modality::Text),
            Err(PauError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn pairs_parsing() {
        let p = parse_pairs("0\t0\n1\t1\n").unwrap();
        assert_eq!(p.as_slice(), &[(0, 0), (1, 1)]);
        assert!(matches!(parse_pairs("0\t0\n0\t0\n"), Err(PauError::DuplicatePair(0, 0))));
        assert!(matches!(parse_pairs("a\tb"), Err(PauError::Parse { line: 1, .. })));
        assert!(matches!(parse_pairs("0\t1\n2\n"), Err(PauError::Parse { line: 2, .. })));
        assert_eq!(parse_pairs(&encode_pairs(&p)).unwrap(), p);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ckpt = sample_ckpt();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"PAUP");
        let back = decode_checkpoint(&bytes).unwrap();
        // the xavier draws are f64 but the format stores f32
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(back.evidence, ckpt.evidence);
        assert_eq!(back.rerank, ckpt.rerank);
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(decode_checkpoint(&encode_checkpoint(&back).unwrap()).unwrap(), back);
    }

    #[test]
    fn checkpoint_errors() {
        let mut ckpt = sample_ckpt();
        ckpt.bank_t = init_prototypes(Modality::Text, 3, 4, 2).unwrap();
        assert!(matches!(encode_checkpoint(&ckpt), Err(PauError::InvariantViolation(_))));
        let emb = encode_embeddings(&sample_set());
        assert!(matches!(
            decode_checkpoint(&emb),
            Err(PauError::BadMagic { expected: "PAUP" })
        ));
        let bytes = encode_checkpoint(&sample_ckpt()).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(PauError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn atomic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.paup");
        write_checkpoint(&sample_ckpt(), &path).unwrap();
        let a = fs::read(&path).unwrap();
        write_checkpoint(&read_checkpoint(&path).unwrap(), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), a);
        let epath = dir.path().join("t.paue");
        write_embeddings(&sample_set(), &epath).unwrap();
        assert_eq!(read_embeddings(&epath).unwrap().n(), 3);
    }
}
