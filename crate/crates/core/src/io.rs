//! On-disk formats: binary matrices, observation directories, parameter files.
//!
//! Binary matrix layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic, `CMSY` for Y or `CMSP` for Phi   |
//! | 4      | 4    | rows, u32                               |
//! | 8      | 4    | columns, u32                            |
//! | 12     | 4    | reserved, zero                          |
//! | 16     | 8·r·c| entries as f64, row-major               |

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Layer, LatentState, ModelError, ModelParams, Observation, Provenance};

pub const MAGIC_Y: [u8; 4] = *b"CMSY";
pub const MAGIC_PHI: [u8; 4] = *b"CMSP";
const HEADER: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("BadMagic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("Truncated: {0}")]
    Truncated(String),
    #[error("Parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn encode_matrix(m: &DMatrix<f64>, magic: [u8; 4]) -> Vec<u8> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(HEADER + 8 * r * c);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(r as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for i in 0..r {
        for j in 0..c {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8], magic: [u8; 4]) -> Result<DMatrix<f64>, IoError> {
    if bytes.len() < HEADER {
        return Err(IoError::Truncated(format!("{} bytes, header needs {HEADER}", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(IoError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let (r, c) = (word(4), word(8));
    let want = HEADER + 8 * r * c;
    if bytes.len() != want {
        return Err(IoError::Truncated(format!("{r}x{c} needs {want} bytes, found {}", bytes.len())));
    }
    let body = &bytes[HEADER..];
    Ok(DMatrix::from_fn(r, c, |i, j| {
        let k = 8 * (i * c + j);
        f64::from_le_bytes(body[k..k + 8].try_into().unwrap())
    }))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, magic: [u8; 4]) -> Result<(), IoError> {
    fs::write(path, encode_matrix(m, magic))?;
    Ok(())
}

pub fn read_matrix(path: &Path, magic: [u8; 4]) -> Result<DMatrix<f64>, IoError> {
    decode_matrix(&fs::read(path)?, magic)
}

/// Parameters from JSON, or TOML when the extension says so.
pub fn load_params(path: &Path) -> Result<ModelParams, IoError> {
    let text = fs::read_to_string(path)?;
    let params: ModelParams = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| IoError::Parse(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| IoError::Parse(e.to_string()))?
    };
    params.validate()?;
    Ok(params)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

#[derive(Serialize, Deserialize)]
struct Meta {
    provenance: Provenance,
    seed: u64,
    truth: Option<LatentState>,
}

pub fn encode_edges(layer: &Layer) -> String {
    let mut s = String::from("i,j\n");
    for &(i, j) in layer.edges() {
        s.push_str(&format!("{i},{j}\n"));
    }
    s
}

pub fn decode_edges(text: &str, n: usize) -> Result<Layer, IoError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("i,j") {
        return Err(IoError::Parse("edge list must start with the header i,j".into()));
    }
    let mut pairs = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        let Some((i, j)) = parsed else {
            return Err(IoError::Parse(format!("line {}: {line:?}", k + 2)));
        };
        if i >= j {
            return Err(IoError::Parse(format!("line {}: need i < j", k + 2)));
        }
        pairs.push((i, j));
    }
    Ok(Layer::from_edges(n, &pairs)?)
}

/// Writes `params.json`, `meta.json`, `Y.bin` and one `layer_{l}.csv` per layer.
pub fn save_observation(dir: &Path, params: &ModelParams, obs: &Observation) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("params.json"), to_json(params))?;
    let meta = Meta {
        provenance: obs.provenance,
        seed: obs.seed,
        truth: obs.truth.clone(),
    };
    fs::write(dir.join("meta.json"), to_json(&meta))?;
    write_matrix(&dir.join("Y.bin"), &obs.y, MAGIC_Y)?;
    for (l, layer) in obs.layers.iter().enumerate() {
        fs::write(dir.join(format!("layer_{l}.csv")), encode_edges(layer))?;
    }
    Ok(())
}

pub fn load_observation(dir: &Path) -> Result<(ModelParams, Observation), IoError> {
    let params = load_params(&dir.join("params.json"))?;
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)
        .map_err(|e| IoError::Parse(e.to_string()))?;
    let y = read_matrix(&dir.join("Y.bin"), MAGIC_Y)?;
    if y.shape() != (params.n, params.p) {
        return Err(IoError::Parse(format!(
            "Y is {}x{}, params say {}x{}",
            y.nrows(),
            y.ncols(),
            params.n,
            params.p
        )));
    }
    let mut layers = Vec::with_capacity(params.layers());
    for l in 0..params.layers() {
        let text = fs::read_to_string(dir.join(format!("layer_{l}.csv")))?;
        layers.push(decode_edges(&text, params.n)?);
    }
    Ok((
        params,
        Observation {
            y,
            layers,
            truth: meta.truth,
            provenance: meta.provenance,
            seed: meta.seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_planted;

    fn params() -> ModelParams {
        ModelParams {
            n: 12,
            p: 5,
            mu: 1.0,
            rho: 0.5,
            lambda: vec![3.0, 2.0],
            epsilon: vec![0.5, 0.4],
        }
    }

    #[test]
    fn matrix_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, -0.5]);
        let b = encode_matrix(&m, MAGIC_Y);
        assert_eq!(&b[..4], b"CMSY");
        assert_eq!(&b[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&b[24..32], &2.0f64.to_le_bytes());
        assert_eq!(&b[40..48], &4.0f64.to_le_bytes());
        assert_eq!(b.len(), 16 + 48);
        assert_eq!(decode_matrix(&b, MAGIC_Y).unwrap(), m);
        assert!(matches!(decode_matrix(&b, MAGIC_PHI), Err(IoError::BadMagic { .. })));
        assert!(matches!(decode_matrix(&b[..30], MAGIC_Y), Err(IoError::Truncated(_))));
    }

    #[test]
    fn observation_round_trip() {
        let p = params();
        let obs = sample_planted(&p, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_observation(dir.path(), &p, &obs).unwrap();
        let (q, back) = load_observation(dir.path()).unwrap();
        assert_eq!(q, p);
        assert_eq!(back.y, obs.y);
        assert_eq!(back.layers, obs.layers);
        assert_eq!(back.truth, obs.truth);
        assert_eq!(back.seed, 17);
        assert_eq!(back.provenance, Provenance::Planted);
    }

    #[test]
    fn params_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("p.toml");
        fs::write(
            &t,
            "n = 12\np = 5\nmu = 1.0\nrho = 0.5\nlambda = [3.0, 2.0]\nepsilon = [0.5, 0.4]\n",
        )
        .unwrap();
        assert_eq!(load_params(&t).unwrap(), params());
        let j = dir.path().join("p.json");
        fs::write(&j, serde_json::to_string(&params()).unwrap()).unwrap();
        assert_eq!(load_params(&j).unwrap(), params());
        fs::write(&j, r#"{"n": 12, "p": 5, "mu": 1.0, "rho": 1.5, "lambda": [], "epsilon": []}"#).unwrap();
        assert!(matches!(load_params(&j), Err(IoError::Model(_))));
    }

    #[test]
    fn edge_csv() {
        let layer = decode_edges("i,j\n0,3\n1,2\n", 4).unwrap();
        assert_eq!(encode_edges(&layer), "i,j\n0,3\n1,2\n");
        assert!(decode_edges("0,3\n", 4).is_err());
        assert!(decode_edges("i,j\n3,0\n", 4).is_err());
        assert!(decode_edges("i,j\n0,9\n", 4).is_err());
    }
}
