//! Voiceprints, voiceprint databases, and their text formats.
//!
//! Embedding files are UTF-8, one record per line:
//!
//! ```text
//! #% n=2 dim=3
//! # comment
//! alice 0.1 -0.2 0.3
//! bob,0.5,0.5,0.0
//! ```
//!
//! The `#%` header is optional. When present, its `n` and `dim` are checked
//! against the records that follow. Any other line starting with `#` is a
//! comment. Coordinates are written in shortest round-trip form so a
//! write/read cycle reproduces every bit.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use base64::Engine;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Width of the x-vector bottleneck layer.
pub const DEFAULT_DIM: usize = 512;

/// An identified speaker embedding.
///
/// The vector is stored as given (not normalized). Cloning is cheap: the
/// coordinates are shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Voiceprint {
    id: String,
    vector: Arc<[f64]>,
}

impl Voiceprint {
    /// Validates and builds a voiceprint. The id must be non-empty and free of
    /// whitespace and commas; the vector must be non-empty, finite and non-zero.
    pub fn new(id: impl Into<String>, vector: impl Into<Arc<[f64]>>) -> Result<Self> {
        let id = id.into();
        let vector = vector.into();
        validate_id(&id)?;
        validate_vector(&vector, Some(&id))?;
        Ok(Self { id, vector })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }

    /// Same coordinates under a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        validate_id(&id)?;
        Ok(Self {
            id,
            vector: Arc::clone(&self.vector),
        })
    }

    /// Whether both voiceprints share the exact same coordinate bits.
    pub fn bit_identical(&self, other: &Voiceprint) -> bool {
        Arc::ptr_eq(&self.vector, &other.vector)
            || (self.vector.len() == other.vector.len()
                && self
                    .vector
                    .iter()
                    .zip(other.vector.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits()))
    }

    pub(crate) fn shares_storage(&self, other: &Voiceprint) -> bool {
        Arc::ptr_eq(&self.vector, &other.vector)
    }
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::InvalidArgument("empty id".into()));
    }
    if id.chars().any(|c| c.is_whitespace() || c == ',') || id.starts_with('#') {
        return Err(Error::InvalidArgument(format!(
            "id `{id}` must not contain whitespace or commas or start with `#`"
        )));
    }
    Ok(())
}

fn validate_vector(v: &[f64], id: Option<&str>) -> Result<()> {
    let ctx = || id.map(|i| format!("id `{i}`"));
    if v.is_empty() {
        return Err(Error::InvalidArgument("vector has no coordinates".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(ctx()));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector(ctx()));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &Voiceprint) -> Result<Voiceprint> {
    let unit = unit_vector(v.vector()).ok_or_else(|| Error::ZeroVector(Some(v.id.clone())))?;
    Ok(Voiceprint {
        id: v.id.clone(),
        vector: unit.into(),
    })
}

/// Unit-norm copy of `v`, or `None` for the zero vector.
///
/// The norm is computed after scaling by the largest magnitude so tiny or
/// huge coordinates neither underflow nor overflow.
pub(crate) fn unit_vector(v: &[f64]) -> Option<Vec<f64>> {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let norm = l2_norm(&scaled);
    let mut out: Vec<f64> = scaled.iter().map(|x| x / norm).collect();
    // One refinement pass pulls the norm to within an ulp or two of 1.
    let n2 = l2_norm(&out);
    if n2 != 1.0 {
        out.iter_mut().for_each(|x| *x /= n2);
    }
    Some(out)
}

/// Parses one record line: an id followed by exactly `dim` reals, separated
/// by whitespace and/or commas. `line_no` is 1-based and only used in errors.
pub fn parse_voiceprint(line: &str, dim: usize, line_no: usize) -> Result<Voiceprint> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let mut fields = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty());
    let id = fields.next().ok_or_else(|| parse_err("empty id".into()))?;
    if id.starts_with('#') {
        return Err(parse_err(format!("invalid id `{id}`")));
    }
    let mut vector = Vec::with_capacity(dim);
    for (col, tok) in fields.enumerate() {
        let x: f64 = tok
            .parse()
            .map_err(|_| parse_err(format!("malformed number `{tok}` at coordinate {}", col + 1)))?;
        if !x.is_finite() {
            return Err(parse_err(format!(
                "non-finite coordinate `{tok}` at coordinate {} of `{id}`",
                col + 1
            )));
        }
        vector.push(x);
    }
    if vector.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: vector.len(),
            context: Some(format!("line {line_no}, id `{id}`")),
        });
    }
    if vector.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector(Some(format!("line {line_no}, id `{id}`"))));
    }
    Voiceprint::new(id, vector).map_err(|e| match e {
        Error::InvalidArgument(m) => parse_err(m),
        other => other,
    })
}

/// Renders a voiceprint as one record line (space separated, no newline).
pub fn format_voiceprint(v: &Voiceprint) -> String {
    let mut s = String::with_capacity(v.id.len() + v.dim() * 20);
    s.push_str(&v.id);
    for x in v.vector.iter() {
        s.push(' ');
        s.push_str(&format!("{x:?}"));
    }
    s
}

/// An ordered, non-empty set of equal-dimension voiceprints with unique ids.
#[derive(Clone, Debug)]
pub struct VoiceprintDatabase {
    records: Vec<Voiceprint>,
    dim: usize,
    index: HashMap<String, usize>,
    // Row-major n x dim matrix of unit-normalized records.
    units: Vec<f64>,
}

impl VoiceprintDatabase {
    pub fn new(records: Vec<Voiceprint>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if records.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let mut index = HashMap::with_capacity(records.len());
        let mut units = Vec::with_capacity(records.len() * dim);
        for (i, r) in records.iter().enumerate() {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.dim(),
                    context: Some(format!("id `{}`", r.id)),
                });
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            units.extend(unit_vector(r.vector()).expect("validated non-zero"));
        }
        Ok(Self {
            records,
            dim,
            index,
            units,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Always false; kept for the usual `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[Voiceprint] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Voiceprint {
        &self.records[i]
    }

    pub fn get(&self, id: &str) -> Option<&Voiceprint> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id())
    }

    /// Unit-normalized coordinates of record `i`.
    pub fn unit(&self, i: usize) -> &[f64] {
        &self.units[i * self.dim..(i + 1) * self.dim]
    }

    /// New database holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.dim)
    }

    /// SHA-256 over dim, ids and coordinate bits. Used to tie a release
    /// model to the database it was built from.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            h.update((r.id.len() as u64).to_le_bytes());
            h.update(r.id.as_bytes());
            for x in r.vector.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Writes the database in the embedding text format, header included.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#% n={} dim={}", self.len(), self.dim)?;
        for r in &self.records {
            writeln!(w, "{}", format_voiceprint(r))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Header {
    n: Option<usize>,
    dim: Option<usize>,
}

fn parse_header(line: &str, line_no: usize) -> Result<Header> {
    let mut header = Header::default();
    for tok in line.trim_start_matches("#%").split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("malformed header field `{tok}`"),
        })?;
        let value: usize = value.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("malformed header value `{tok}`"),
        })?;
        match key {
            "n" => header.n = Some(value),
            "dim" => header.dim = Some(value),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown header field `{key}`"),
                })
            }
        }
    }
    Ok(header)
}

/// Reads a database of dimension `dim`. A header, if present, must agree.
pub fn load_database<R: BufRead>(source: R, dim: usize) -> Result<VoiceprintDatabase> {
    read_database(source, Some(dim), dim)
}

/// Reads a database whose dimension comes from the `#%` header when one is
/// present, and from `fallback_dim` otherwise.
pub fn load_database_auto<R: BufRead>(source: R, fallback_dim: usize) -> Result<VoiceprintDatabase> {
    read_database(source, None, fallback_dim)
}

fn read_database<R: BufRead>(
    source: R,
    required_dim: Option<usize>,
    fallback_dim: usize,
) -> Result<VoiceprintDatabase> {
    let mut header: Option<Header> = None;
    let mut dim: Option<usize> = required_dim;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with("#%") {
            if header.is_some() || !records.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header must precede all records and appear once".into(),
                });
            }
            let h = parse_header(trimmed, line_no)?;
            if let Some(hd) = h.dim {
                match dim {
                    Some(d) if d != hd => {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: hd,
                            context: Some(format!("header on line {line_no}")),
                        })
                    }
                    _ => dim = Some(hd),
                }
            }
            header = Some(h);
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let d = *dim.get_or_insert(fallback_dim);
        let vp = parse_voiceprint(trimmed, d, line_no)?;
        if seen.insert(vp.id.clone(), line_no).is_some() {
            return Err(Error::DuplicateId(vp.id.clone()));
        }
        records.push(vp);
    }

    if records.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if let Some(Header { n: Some(n), .. }) = header {
        if n != records.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares n={n} but {} records follow", records.len()),
            });
        }
    }
    VoiceprintDatabase::new(records, dim.unwrap_or(fallback_dim))
}

/// An utterance: an opaque content payload plus its voiceprint.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub content: Vec<u8>,
    pub voiceprint: Voiceprint,
}

impl UtteranceRecord {
    pub fn new(content: Vec<u8>, voiceprint: Voiceprint) -> Self {
        Self {
            id: voiceprint.id().to_string(),
            content,
            voiceprint,
        }
    }
}

/// Reads a content sidecar: `<id>\t<base64 payload>` per line, `#` comments.
pub fn load_content_sidecar<R: BufRead>(source: R) -> Result<HashMap<String, Vec<u8>>> {
    let mut out = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, payload) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        if id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty id".into(),
            });
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(payload.trim())
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad base64 payload for `{id}`: {e}"),
            })?;
        if out.insert(id.to_string(), bytes).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Writes `(id, content)` pairs in the sidecar format.
pub fn write_content_sidecar<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a [u8])>,
) -> Result<()> {
    for (id, content) in entries {
        let b64 = base64::engine::general_purpose::STANDARD.encode(content);
        writeln!(w, "{id}\t{b64}")?;
    }
    Ok(())
}

/// Pairs each voiceprint with its sidecar content (empty when absent).
pub fn utterances_from(
    voiceprints: &[Voiceprint],
    contents: &HashMap<String, Vec<u8>>,
) -> Vec<UtteranceRecord> {
    voiceprints
        .iter()
        .map(|v| UtteranceRecord::new(contents.get(v.id()).cloned().unwrap_or_default(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn db(text: &str, dim: usize) -> Result<VoiceprintDatabase> {
        load_database(text.as_bytes(), dim)
    }

    #[test]
    fn parses_space_separated_record() {
        let v = parse_voiceprint("a 1.0 0.0 0.0", 3, 1).unwrap();
        assert_eq!(v.id(), "a");
        assert_eq!(v.vector(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn parses_comma_separated_record() {
        let v = parse_voiceprint("a,1.5, -2e-3 ,7", 3, 1).unwrap();
        assert_eq!(v.vector(), &[1.5, -2e-3, 7.0]);
    }

    #[test]
    fn rejects_zero_vector() {
        let err = parse_voiceprint("b 0 0 0", 3, 4).unwrap_err();
        assert!(matches!(err, Error::ZeroVector(_)), "{err}");
        assert!(err.to_string().contains("line 4"));
    }

    #[test]
    fn rejects_nan() {
        let err = parse_voiceprint("c 1.0 NaN 0.0", 3, 2).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        assert!(err.to_string().contains("line 2"));
        assert!(parse_voiceprint("c 1.0 inf 0.0", 3, 2).is_err());
    }

    #[test]
    fn rejects_malformed_and_miscounted() {
        let err = parse_voiceprint("a 1.0 x 0.0", 3, 7).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
        let err = parse_voiceprint("a 1.0 0.0", 3, 1).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2, .. }));
        let err = parse_voiceprint("   ", 3, 9).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 9, .. }));
    }

    #[test]
    fn loads_three_records_in_order() {
        let d = db("a 1 0 0\n# note\n\nb 0 1 0\nc 0 0 1\n", 3).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(d.position("c"), Some(2));
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = db("a 1 0 0\na 0 1 0\n", 3).unwrap_err();
        match err {
            Error::DuplicateId(id) => assert_eq!(id, "a"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mixed_dimensions_fail() {
        let err = db("a 1 0 0\nb 0 1 0 0\n", 3).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    }

    #[test]
    fn empty_stream_fails() {
        assert!(matches!(db("", 3), Err(Error::EmptyDatabase)));
        assert!(matches!(db("# only a comment\n", 3), Err(Error::EmptyDatabase)));
    }

    #[test]
    fn header_is_validated() {
        assert!(db("#% n=2 dim=3\na 1 0 0\nb 0 1 0\n", 3).is_ok());
        assert!(db("#% n=3 dim=3\na 1 0 0\nb 0 1 0\n", 3).is_err());
        assert!(db("#% n=2 dim=4\na 1 0 0\nb 0 1 0\n", 3).is_err());
        let auto = load_database_auto("#% n=1 dim=2\na 3 4\n".as_bytes(), 512).unwrap();
        assert_eq!(auto.dim(), 2);
    }

    #[test]
    fn normalize_examples() {
        let v = Voiceprint::new("v", vec![3.0, 4.0]).unwrap();
        let u = normalize(&v).unwrap();
        assert!((u.vector()[0] - 0.6).abs() < 1e-15);
        assert!((u.vector()[1] - 0.8).abs() < 1e-15);
        let e = Voiceprint::new("e", vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(normalize(&e).unwrap().vector(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_handles_extreme_scales() {
        let tiny = Voiceprint::new("t", vec![1e-300, 1e-300]).unwrap();
        let huge = Voiceprint::new("h", vec![1e300, -1e300]).unwrap();
        for v in [tiny, huge] {
            let n = normalize(&v).unwrap().norm();
            assert!((n - 1.0).abs() < 1e-12, "{n}");
        }
    }

    #[test]
    fn normalized_norm_over_1000_random_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for k in 0..1000 {
            let dim = 1 + k % 64;
            let scale = 10f64.powi(rng.random_range(-8..8));
            let v: Vec<f64> = (0..dim).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
            let v = Voiceprint::new("r", v).unwrap();
            let n = normalize(&v).unwrap().norm();
            assert!((n - 1.0).abs() <= 1e-12, "norm {n}");
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let mut buf = Vec::new();
        write_content_sidecar(&mut buf, [("a", &b"hello"[..]), ("b", &b""[..])]).unwrap();
        let back = load_content_sidecar(buf.as_slice()).unwrap();
        assert_eq!(back["a"], b"hello");
        assert!(back["b"].is_empty());
    }

    fn coord() -> impl Strategy<Value = f64> {
        prop_oneof![
            -1e6f64..1e6,
            -1.0f64..1.0,
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
        ]
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(coords in prop::collection::vec(coord(), 1..16)) {
            prop_assume!(coords.iter().any(|&x| x != 0.0));
            let v = Voiceprint::new("id-1", coords.clone()).unwrap();
            let back = parse_voiceprint(&format_voiceprint(&v), coords.len(), 1).unwrap();
            prop_assert_eq!(back.id(), "id-1");
            for (a, b) in back.vector().iter().zip(coords.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn normalize_is_idempotent(coords in prop::collection::vec(-1e3f64..1e3, 1..32)) {
            prop_assume!(coords.iter().any(|&x| x.abs() > 1e-9));
            let v = Voiceprint::new("x", coords).unwrap();
            let once = normalize(&v).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.vector().iter().zip(twice.vector()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn database_write_read_preserves_records(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..8)
        ) {
            let records: Vec<Voiceprint> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.iter().any(|&x| x != 0.0))
                .map(|(i, r)| Voiceprint::new(format!("r{i}"), r.clone()).unwrap())
                .collect();
            prop_assume!(!records.is_empty());
            let d = VoiceprintDatabase::new(records, 4).unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            let back = load_database(buf.as_slice(), 4).unwrap();
            prop_assert_eq!(back.records(), d.records());
            prop_assert_eq!(back.digest(), d.digest());
        }
    }
}
