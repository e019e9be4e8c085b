//! JSON file formats. Complex entries are `[re, im]` pairs and matrices are
//! row-major nested arrays.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, DimPair, C64};

pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &CMatrix) -> JsonMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [clean(m[(i, j)].re), clean(m[(i, j)].im)]).collect()).collect()
}

// -0.0 and 0.0 print differently; keep output stable across platforms.
fn clean(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

pub fn matrix_from_json(rows: &JsonMatrix, what: &str) -> Result<CMatrix> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: row {i} has {} entries, expected {ncols}", r.len())));
    }
    let m = CMatrix::from_fn(nrows, ncols, |i, j| C64::new(rows[i][j][0], rows[i][j][1]));
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Invalid(format!("{what}: non-finite entry")));
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub dims: DimPair,
    pub rho: JsonMatrix,
}

impl StateFile {
    pub fn from_matrix(dims: DimPair, rho: &CMatrix) -> Self {
        StateFile { dims, rho: matrix_to_json(rho) }
    }

    pub fn matrix(&self) -> Result<(DimPair, CMatrix)> {
        let m = matrix_from_json(&self.rho, "rho")?;
        self.dims.check_square(&m)?;
        Ok((self.dims, m))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    #[serde(rename = "dA")]
    pub da: usize,
    #[serde(rename = "dB")]
    pub db: usize,
    pub kraus: Vec<JsonMatrix>,
}

impl ChannelFile {
    pub fn from_kraus(da: usize, db: usize, kraus: &[CMatrix]) -> Self {
        ChannelFile { da, db, kraus: kraus.iter().map(matrix_to_json).collect() }
    }

    pub fn channel(&self) -> Result<ChannelSpec> {
        let kraus = self
            .kraus
            .iter()
            .enumerate()
            .map(|(k, m)| matrix_from_json(m, &format!("kraus[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        ChannelSpec::new(self.da, self.db, kraus)
    }
}

/// Input of `channel twirl`: the full list of representation matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitaryListFile {
    pub unitaries: Vec<JsonMatrix>,
}

impl UnitaryListFile {
    pub fn matrices(&self) -> Result<Vec<CMatrix>> {
        self.unitaries.iter().enumerate().map(|(k, m)| matrix_from_json(m, &format!("unitaries[{k}]"))).collect()
    }
}

/// A JSON syntax or schema error with its position in the input.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Invalid(format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column())))
}

pub fn read_state(text: &str) -> Result<(DimPair, CMatrix)> {
    parse_json::<StateFile>(text)?.matrix()
}

pub fn read_channel(text: &str) -> Result<ChannelSpec> {
    parse_json::<ChannelFile>(text)?.channel()
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;

    #[test]
    fn state_roundtrip() {
        let mut m = identity(4).unscale(4.0);
        m[(0, 1)] = C64::new(0.1, -0.2);
        m[(1, 0)] = C64::new(0.1, 0.2);
        let text = to_pretty_json(&StateFile::from_matrix(DimPair::new(2, 2), &m));
        assert!(text.contains("\"dA\": 2"));
        let (dims, back) = read_state(&text).unwrap();
        assert_eq!(dims, DimPair::new(2, 2));
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = read_state("{\n  \"dims\": {\"dA\": 2, \"dB\": 2},\n  \"rho\": [[[1, 0]],, ]\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("column"), "{msg}");
    }

    #[test]
    fn ragged_and_mismatched_matrices_are_rejected() {
        let ragged = r#"{"dims": {"dA": 1, "dB": 2}, "rho": [[[1,0],[0,0]], [[0,0]]]}"#;
        assert!(read_state(ragged).is_err());
        let wrong = r#"{"dims": {"dA": 2, "dB": 2}, "rho": [[[1,0]]]}"#;
        assert!(read_state(wrong).is_err());
    }

    #[test]
    fn channel_roundtrip() {
        let text = to_pretty_json(&ChannelFile::from_kraus(2, 2, &[identity(2)]));
        let ch = read_channel(&text).unwrap();
        assert_eq!((ch.da_in, ch.db_out, ch.kraus.len()), (2, 2, 1));
        let bad = r#"{"dA": 2, "dB": 2, "kraus": [[[[0.5,0],[0,0]],[[0,0],[0.5,0]]]]}"#;
        assert!(read_channel(bad).is_err());
    }
}
