//! Embedding, protocol and enrollment file formats.
//!
//! Binary embedding layout (all integers little-endian):
//!
//! ```text
//! "SASVEMB1" | dim: u32 | count: u32 | count × (id_len: u16 | id: utf-8 | dim × f32)
//! ```
//!
//! A text alternative is sniffed when the magic is absent: one record per
//! line, `id<TAB>v1,v2,...`. Protocol and enrollment files are UTF-8 text
//! with one whitespace-separated record per line; blank lines and lines
//! starting with `#` are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::domain::{Embedding, EmbeddingMap, EnrollmentMap, ScoreRecord, Trial, TrialClass};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"SASVEMB1";

/// Loads an embedding file, binary or TSV, checking every vector against `expected_dim`.
pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: usize) -> Result<EmbeddingMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMBEDDING_MAGIC) {
        return parse_binary(path, &bytes, expected_dim);
    }
    // Same family, different version.
    if bytes.starts_with(b"SASVEMB") {
        return Err(Error::BadMagic { path: path.into() });
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) => parse_tsv(path, text, expected_dim),
        Err(_) => Err(Error::BadMagic { path: path.into() }),
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("reading {what} at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_binary(path: &Path, bytes: &[u8], expected_dim: usize) -> Result<EmbeddingMap> {
    let mut cur = Cursor {
        path,
        bytes,
        pos: EMBEDDING_MAGIC.len(),
    };
    let dim = cur.u32("dimension")? as usize;
    let count = cur.u32("record count")? as usize;
    if dim != expected_dim {
        return Err(Error::DimensionMismatch {
            path: path.into(),
            id: "<header>".into(),
            expected: expected_dim,
            found: dim,
        });
    }
    let mut out = EmbeddingMap::with_capacity(count);
    for _ in 0..count {
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::Truncated {
                path: path.into(),
                detail: "id is not valid UTF-8".into(),
            })?
            .to_string();
        let raw = cur.take(dim * 4, "vector")?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        insert_checked(path, &mut out, Embedding::new(id, values))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(out)
}

fn parse_tsv(path: &Path, text: &str, expected_dim: usize) -> Result<EmbeddingMap> {
    let mut out = EmbeddingMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected id<TAB>values"))?;
        let values = rest
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad value: {e}")))?;
        if id.is_empty() {
            return Err(Error::parse(path, lineno + 1, "empty id"));
        }
        // Text values go through f32 so both formats hold the same numbers.
        let values: Vec<f64> = values.into_iter().map(|v| v as f32 as f64).collect();
        if values.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                path: path.into(),
                id: id.to_string(),
                expected: expected_dim,
                found: values.len(),
            });
        }
        insert_checked(path, &mut out, Embedding::new(id, values))?;
    }
    Ok(out)
}

fn insert_checked(path: &Path, out: &mut EmbeddingMap, emb: Embedding) -> Result<()> {
    if emb.id.is_empty() {
        return Err(Error::parse(path, 0, "empty embedding id"));
    }
    if emb.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.into(),
            id: emb.id,
        });
    }
    if out.contains_key(&emb.id) {
        return Err(Error::DuplicateId {
            path: path.into(),
            id: emb.id,
        });
    }
    out.insert(emb.id.clone(), emb);
    Ok(())
}

/// Writes embeddings in the binary format. All vectors must share one dimension.
pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    embeddings: impl IntoIterator<Item = &'a Embedding>,
) -> Result<()> {
    let path = path.as_ref();
    let embeddings: Vec<&Embedding> = embeddings.into_iter().collect();
    let dim = embeddings.first().map_or(0, |e| e.dim());
    let mut buf = Vec::with_capacity(16 + embeddings.len() * (dim * 4 + 16));
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(embeddings.len() as u32).to_le_bytes());
    for emb in embeddings {
        if emb.dim() != dim {
            return Err(Error::ShapeMismatch {
                left: dim,
                right: emb.dim(),
            });
        }
        let id = emb.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Config(format!("id '{}' longer than 65535 bytes", emb.id)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        for &v in &emb.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes embeddings in the TSV text format.
pub fn write_embeddings_tsv<'a>(
    path: impl AsRef<Path>,
    embeddings: impl IntoIterator<Item = &'a Embedding>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for emb in embeddings {
        out.push_str(&emb.id);
        out.push('\t');
        let vals: Vec<String> = emb.values.iter().map(|&v| (v as f32).to_string()).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split_whitespace().collect()))
        }
    })
}

/// Loads a trial list: `speaker_id test_utt_id [target|nontarget|spoof]`.
pub fn load_protocol(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    parse_protocol(path, &read_text(path)?)
}

pub fn parse_protocol(path: &Path, text: &str) -> Result<Vec<Trial>> {
    records(text)
        .map(|(line, fields)| match fields.as_slice() {
            [spk, utt] => Ok(Trial::new(*spk, *utt, None)),
            [spk, utt, label] => {
                let class = label
                    .parse::<TrialClass>()
                    .map_err(|token| Error::UnknownLabel {
                        path: path.into(),
                        line,
                        token,
                    })?;
                Ok(Trial::new(*spk, *utt, Some(class)))
            }
            _ => Err(Error::parse(
                path,
                line,
                format!("expected 2 or 3 fields, found {}", fields.len()),
            )),
        })
        .collect()
}

pub fn write_protocol(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.speaker_id);
        out.push(' ');
        out.push_str(&t.test_utt_id);
        if let Some(c) = t.class {
            out.push(' ');
            out.push_str(c.as_str());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads `speaker_id utt_id` lines, grouped by speaker in first-seen order.
pub fn load_enrollment(path: impl AsRef<Path>) -> Result<EnrollmentMap> {
    let path = path.as_ref();
    parse_enrollment(path, &read_text(path)?)
}

pub fn parse_enrollment(path: &Path, text: &str) -> Result<EnrollmentMap> {
    let mut map = EnrollmentMap::new();
    for (line, fields) in records(text) {
        let [spk, utt] = fields.as_slice() else {
            return Err(Error::parse(
                path,
                line,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        };
        let utts = map.entry(spk.to_string()).or_default();
        if utts.iter().any(|u| u == utt) {
            return Err(Error::DuplicateEntry {
                path: path.into(),
                line,
                entry: format!("{spk} {utt}"),
            });
        }
        utts.push(utt.to_string());
    }
    if map.is_empty() {
        return Err(Error::EmptyProtocol { path: path.into() });
    }
    Ok(map)
}

pub fn write_enrollment(path: impl AsRef<Path>, enrollment: &EnrollmentMap) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (spk, utts) in enrollment {
        for utt in utts {
            out.push_str(spk);
            out.push(' ');
            out.push_str(utt);
            out.push('\n');
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub const SCORES_HEADER: &str = "speaker\tutt\ts_asv\ts_cm\ts_sasv\tlabel";

/// Formats like C's `%.9g`: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// Renders score records as the scores TSV.
pub fn scores_to_tsv(records: &[ScoreRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(SCORES_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            r.trial.speaker_id.clone(),
            r.trial.test_utt_id.clone(),
            format_sig9(r.s_asv),
            format_sig9(r.s_cm),
            r.s_sasv.map_or_else(|| "-".to_string(), format_sig9),
            r.trial.class.map_or("-", TrialClass::as_str).to_string(),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scores_to_tsv(records)).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(path, &read_text(path)?)
}

pub fn parse_scores(path: &Path, text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(SCORES_HEADER.split('\t')) => {}
        _ => return Err(Error::parse(path, 1, format!("expected header '{SCORES_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(path, line_no, format!("expected 6 columns, found {}", f.len())));
        }
        let num = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, line_no, format!("bad {name}: {e}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(path, line_no, format!("non-finite {name}")))
            }
        };
        let class = match f[5].trim() {
            "-" => None,
            tok => Some(tok.parse::<TrialClass>().map_err(|token| Error::UnknownLabel {
                path: path.into(),
                line: line_no,
                token,
            })?),
        };
        let s_sasv = match f[4].trim() {
            "-" => None,
            v => Some(num(v, "s_sasv")?),
        };
        if f[0].is_empty() || f[1].is_empty() {
            return Err(Error::parse(path, line_no, "blank speaker or utterance"));
        }
        out.push(ScoreRecord {
            trial: Trial::new(f[0], f[1], class),
            s_asv: num(f[2], "s_asv")?,
            s_cm: num(f[3], "s_cm")?,
            s_sasv,
        });
    }
    Ok(out)
}
