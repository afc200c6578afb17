//! `.tcam` model files: a versioned, line-oriented text container whose
//! numbers are C99 hexadecimal floats, so every value round-trips bit-exactly
//! and independently of platform endianness.
//!
//! ```text
//! TCAM v1 rbm
//! visible = ted
//! weights 784 32
//! 0x1.47ae147ae147bp-7 -0x1.0624dd2f1a9fcp-10 ...
//! ```
//!
//! Text fields are written `name = value`. Array fields are a header line
//! `name <len>` or `name <rows> <cols>` followed by one line per row.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::activations::{BaseKind, TcaParams};
use crate::error::{Error, Result};
use crate::rbm::RbmModel;

pub const MAGIC: &str = "TCAM";
pub const VERSION: &str = "v1";

/// C99 `%a` rendering of a float.
pub fn format_hex(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (lead, exp) = match (exp_bits, frac) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        _ => (1, exp_bits - 1023),
    };
    let mut digits = format!("{frac:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let dot = if digits.is_empty() { "" } else { "." };
    format!("{sign}0x{lead}{dot}{digits}p{exp:+}")
}

/// Inverse of [`format_hex`]; accepts any exactly representable C99 hex float.
pub fn parse_hex(s: &str) -> Result<f64> {
    match s {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    hexf_parse::parse_hexf64(s, false).map_err(|e| Error::Schema(format!("bad number `{s}`: {e}")))
}

/// Accumulates the fields of one model file.
#[derive(Debug)]
pub struct TcamWriter {
    out: String,
}

impl TcamWriter {
    pub fn new(kind: &str) -> Self {
        Self {
            out: format!("{MAGIC} {VERSION} {kind}\n"),
        }
    }

    pub fn text(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.out, "{key} = {value}");
    }

    pub fn vector(&mut self, key: &str, v: ArrayView1<'_, f64>) {
        let _ = writeln!(self.out, "{key} {}", v.len());
        self.row(v.iter());
    }

    pub fn matrix(&mut self, key: &str, m: ArrayView2<'_, f64>) {
        let _ = writeln!(self.out, "{key} {} {}", m.nrows(), m.ncols());
        for r in m.rows() {
            self.row(r.iter());
        }
    }

    fn row<'a>(&mut self, values: impl Iterator<Item = &'a f64>) {
        let line: Vec<String> = values.map(|v| format_hex(*v)).collect();
        self.out.push_str(&line.join(" "));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[derive(Debug)]
enum Field {
    Text(String),
    Array { dims: Vec<usize>, values: Vec<f64> },
}

/// Parsed model file with typed field accessors.
#[derive(Debug)]
pub struct TcamReader {
    kind: String,
    fields: HashMap<String, Field>,
}

/// Kind tag of a model file, after checking magic and version.
pub fn read_header(text: &str) -> Result<String> {
    let first = text.lines().next().unwrap_or("");
    let parts: Vec<&str> = first.split_whitespace().collect();
    match parts.as_slice() {
        [MAGIC, VERSION, kind] => Ok((*kind).to_string()),
        [MAGIC, version, _] => Err(Error::Version(format!("`{version}` (expected {VERSION})"))),
        _ => Err(Error::Version(format!("unrecognised header `{first}`"))),
    }
}

impl TcamReader {
    pub fn parse(text: &str, expected_kind: &str) -> Result<Self> {
        let kind = read_header(text)?;
        if kind != expected_kind {
            return Err(Error::Schema(format!(
                "file holds a `{kind}` model, expected `{expected_kind}`"
            )));
        }
        let mut lines = text.lines().skip(1).filter(|l| !l.trim().is_empty());
        let mut fields = HashMap::new();
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line").to_string();
            let rest: Vec<&str> = parts.collect();
            if rest.first() == Some(&"=") {
                let field = Field::Text(rest[1..].join(" "));
                if fields.insert(key.clone(), field).is_some() {
                    return Err(Error::Schema(format!("duplicate field `{key}`")));
                }
                continue;
            }
            let dims: Option<Vec<usize>> = rest.iter().map(|p| p.parse().ok()).collect();
            let field = match dims {
                Some(dims) if !dims.is_empty() && dims.len() <= 2 => {
                    let (rows, cols) = if dims.len() == 1 {
                        (1, dims[0])
                    } else {
                        (dims[0], dims[1])
                    };
                    let mut values = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let row = lines
                            .next()
                            .ok_or_else(|| Error::Schema(format!("`{key}`: missing row {r}")))?;
                        let before = values.len();
                        for tok in row.split_whitespace() {
                            values.push(parse_hex(tok)?);
                        }
                        if values.len() - before != cols {
                            return Err(Error::Schema(format!(
                                "`{key}` row {r}: expected {cols} values, got {}",
                                values.len() - before
                            )));
                        }
                    }
                    Field::Array { dims, values }
                }
                _ => return Err(Error::Schema(format!("malformed field header `{line}`"))),
            };
            if fields.insert(key.clone(), field).is_some() {
                return Err(Error::Schema(format!("duplicate field `{key}`")));
            }
        }
        Ok(Self { kind, fields })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    fn get(&self, key: &str) -> Result<&Field> {
        self.fields
            .get(key)
            .ok_or_else(|| Error::Schema(format!("missing field `{key}`")))
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.get(key)? {
            Field::Text(t) => Ok(t),
            Field::Array { .. } => Err(Error::Schema(format!("`{key}` should be text"))),
        }
    }

    pub fn parse_text<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let t = self.text(key)?;
        t.parse()
            .map_err(|_| Error::Schema(format!("`{key}`: cannot parse `{t}`")))
    }

    pub fn vector(&self, key: &str) -> Result<Array1<f64>> {
        match self.get(key)? {
            Field::Array { dims, values } if dims.len() == 1 => Ok(Array1::from(values.clone())),
            _ => Err(Error::Schema(format!("`{key}` should be a vector"))),
        }
    }

    pub fn matrix(&self, key: &str) -> Result<Array2<f64>> {
        match self.get(key)? {
            Field::Array { dims, values } if dims.len() == 2 => {
                Ok(Array2::from_shape_vec((dims[0], dims[1]), values.clone())
                    .expect("row counts checked"))
            }
            _ => Err(Error::Schema(format!("`{key}` should be a matrix"))),
        }
    }
}

/// A model that can be stored in a `.tcam` file.
pub trait Persist: Sized {
    const KIND: &'static str;

    /// Write every field under the key prefix `prefix`.
    fn write_fields(&self, w: &mut TcamWriter, prefix: &str);

    fn read_fields(r: &TcamReader, prefix: &str) -> Result<Self>;

    fn to_tcam(&self) -> String {
        let mut w = TcamWriter::new(Self::KIND);
        self.write_fields(&mut w, "");
        w.finish()
    }

    fn from_tcam(text: &str) -> Result<Self> {
        Self::read_fields(&TcamReader::parse(text, Self::KIND)?, "")
    }
}

pub fn save_model<M: Persist>(path: impl AsRef<Path>, model: &M) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_tcam()).map_err(|e| Error::io(path, e))
}

pub fn load_model<M: Persist>(path: impl AsRef<Path>) -> Result<M> {
    M::from_tcam(&read_file(path.as_ref())?)
}

/// Kind tag stored in a model file.
pub fn peek_kind(path: impl AsRef<Path>) -> Result<String> {
    read_header(&read_file(path.as_ref())?)
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_kind(r: &TcamReader, key: &str) -> Result<BaseKind> {
    r.text(key)?
        .parse()
        .map_err(|_| Error::Schema(format!("`{key}`: unknown base kind")))
}

/// Remap construction errors (shape and range checks) to schema errors.
pub(crate) fn schema<T>(what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Schema(format!("{what}: {e}")))
}

impl Persist for TcaParams {
    const KIND: &'static str = "tca";

    fn write_fields(&self, w: &mut TcamWriter, prefix: &str) {
        w.text(&format!("{prefix}base"), self.base());
        w.matrix(&format!("{prefix}log_scale"), self.log_scale());
        w.matrix(&format!("{prefix}bias"), self.bias());
    }

    fn read_fields(r: &TcamReader, prefix: &str) -> Result<Self> {
        let base = base_kind(r, &format!("{prefix}base"))?;
        let a = r.matrix(&format!("{prefix}log_scale"))?;
        let b = r.matrix(&format!("{prefix}bias"))?;
        schema("TCA", TcaParams::new(base, a, b))
    }
}

impl Persist for RbmModel {
    const KIND: &'static str = "rbm";

    fn write_fields(&self, w: &mut TcamWriter, prefix: &str) {
        w.text(&format!("{prefix}visible"), self.visible_kind());
        w.matrix(&format!("{prefix}weights"), self.weights());
        w.vector(&format!("{prefix}visible_bias"), self.visible_bias());
        w.vector(&format!("{prefix}hidden_bias"), self.hidden_bias());
        self.hidden().write_fields(w, &format!("{prefix}hidden."));
    }

    fn read_fields(r: &TcamReader, prefix: &str) -> Result<Self> {
        let visible = base_kind(r, &format!("{prefix}visible"))?;
        let hidden = TcaParams::read_fields(r, &format!("{prefix}hidden."))?;
        schema(
            "RBM",
            RbmModel::new(
                r.matrix(&format!("{prefix}weights"))?,
                r.vector(&format!("{prefix}visible_bias"))?,
                r.vector(&format!("{prefix}hidden_bias"))?,
                visible,
                hidden,
            ),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hex_examples() {
        assert_eq!(format_hex(1.0), "0x1p+0");
        assert_eq!(format_hex(3.0), "0x1.8p+1");
        assert_eq!(format_hex(-0.1), "-0x1.999999999999ap-4");
        assert_eq!(format_hex(0.0), "0x0p+0");
        assert_eq!(format_hex(-0.0), "-0x0p+0");
        assert_eq!(format_hex(f64::from_bits(1)), "0x0.0000000000001p-1022");
        assert_eq!(format_hex(f64::MAX), "0x1.fffffffffffffp+1023");
        assert_eq!(parse_hex("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(parse_hex("0x1.8p1").unwrap(), 3.0);
        assert!(parse_hex("1.5").is_err());
        assert!(parse_hex("nan").unwrap().is_nan());
    }

    proptest! {
        #[test]
        fn hex_round_trips_bit_exactly(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(!v.is_nan());
            prop_assert_eq!(parse_hex(&format_hex(v)).unwrap().to_bits(), bits);
        }
    }

    fn random_rbm(seed: u64) -> RbmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0) * 1e-3);
        let a = Array::from_shape_fn(7, |_| rng.random_range(-4.0..4.0));
        let b = Array::from_shape_fn(4, |_| rng.random::<f64>());
        let la = Array::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let lb = Array::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        RbmModel::new(
            w,
            a,
            b,
            BaseKind::Ted,
            TcaParams::new(BaseKind::SigmoidBernoulli, la, lb).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rbm_and_tca_round_trip() {
        let m = random_rbm(3);
        let back = RbmModel::from_tcam(&m.to_tcam()).unwrap();
        assert_eq!(back, m);
        let p = m.hidden().clone();
        assert_eq!(TcaParams::from_tcam(&p.to_tcam()).unwrap(), p);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tcam");
        save_model(&path, &m).unwrap();
        assert_eq!(load_model::<RbmModel>(&path).unwrap(), m);
        assert_eq!(peek_kind(&path).unwrap(), "rbm");
    }

    #[test]
    fn distinct_errors() {
        let text = random_rbm(4).to_tcam();
        let bad_version = text.replacen("TCAM v1", "TCAM v9", 1);
        assert!(matches!(
            RbmModel::from_tcam(&bad_version),
            Err(Error::Version(_))
        ));
        let garbage = text.replacen("TCAM", "XXXX", 1);
        assert!(matches!(
            RbmModel::from_tcam(&garbage),
            Err(Error::Version(_))
        ));
        assert!(matches!(TcaParams::from_tcam(&text), Err(Error::Schema(_))));

        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("visible = "))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            RbmModel::from_tcam(&missing),
            Err(Error::Schema(_))
        ));

        let short = text.replacen("hidden_bias 4", "hidden_bias 5", 1);
        assert!(matches!(RbmModel::from_tcam(&short), Err(Error::Schema(_))));
    }
}
