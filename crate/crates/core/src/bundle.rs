//! Attention bundle: a directory holding `manifest.json` plus one raw file
//! per token with `H*W` little-endian `f32` values in row-major order.
//!
//! ```text
//! bundle/
//!   manifest.json
//!   token_000.f32
//!   token_001.f32
//!   ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMap, AttentionSet, MASS_TOLERANCE};
use crate::error::{AttentionError, BundleError};
use crate::text::{ParsedPrompt, Role};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleToken {
    pub index: usize,
    pub text: String,
    pub role: Role,
    pub file: String,
    /// BOS/EOS and similar specials written by external exporters.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub dtype: String,
    pub byte_order: String,
    pub tokens: Vec<BundleToken>,
}

impl BundleManifest {
    pub fn for_prompt(parsed: &ParsedPrompt, height: usize, width: usize) -> Self {
        Self {
            version: BUNDLE_VERSION,
            height,
            width,
            dtype: "f32".into(),
            byte_order: "little".into(),
            tokens: parsed
                .tokens
                .iter()
                .map(|t| BundleToken {
                    index: t.index,
                    text: t.text.clone(),
                    role: t.role,
                    file: format!("token_{:03}.f32", t.index),
                    excluded: parsed.excluded.contains(&t.index),
                })
                .collect(),
        }
    }
}

/// One problem found while validating a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleProblem {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub valid: bool,
    pub tokens: usize,
    pub problems: Vec<BundleProblem>,
}

impl BundleReport {
    pub fn summary(&self) -> String {
        self.problems
            .iter()
            .map(|p| match p.cell {
                Some(c) => format!("{} (cell {c}): {}", p.file, p.message),
                None => format!("{}: {}", p.file, p.message),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn io_err(path: &Path, source: std::io::Error) -> BundleError {
    BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes every map of `set` as `f32` plus a manifest describing `parsed`.
pub fn write_bundle(
    dir: &Path,
    set: &AttentionSet,
    parsed: &ParsedPrompt,
) -> Result<BundleManifest, BundleError> {
    if set.len() != parsed.tokens.len() {
        return Err(BundleError::Manifest(format!(
            "{} maps for {} tokens",
            set.len(),
            parsed.tokens.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = BundleManifest::for_prompt(parsed, set.height(), set.width());
    for (tok, map) in manifest.tokens.iter().zip(set.maps()) {
        let bytes: Vec<u8> = map
            .weights()
            .iter()
            .flat_map(|&w| (w as f32).to_le_bytes())
            .collect();
        let path = dir.join(&tok.file);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| BundleError::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Manifest(e.to_string()))
}

fn safe_name(name: &str) -> bool {
    !name.is_empty()
        && !name.contains(['/', '\\'])
        && name != "."
        && name != ".."
        && Path::new(name).file_name().is_some()
}

/// Raw `f32` values widened to `f64`, or problems describing why not.
fn read_values(
    dir: &Path,
    tok: &BundleToken,
    cells: usize,
) -> Result<Vec<f64>, Vec<BundleProblem>> {
    let problem = |cell, message: String| BundleProblem {
        file: tok.file.clone(),
        cell,
        message,
    };
    if !safe_name(&tok.file) {
        return Err(vec![problem(None, "file name escapes bundle directory".into())]);
    }
    let path: PathBuf = dir.join(&tok.file);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) => return Err(vec![problem(None, format!("cannot read: {e}"))]),
    };
    if bytes.len() != 4 * cells {
        return Err(vec![problem(
            None,
            format!("expected {} bytes ({cells} f32), found {}", 4 * cells, bytes.len()),
        )]);
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut problems = Vec::new();
    for (j, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            problems.push(problem(Some(j), format!("non-finite value {v}")));
        } else if v < 0.0 {
            problems.push(problem(Some(j), format!("negative value {v}")));
        }
    }
    if problems.is_empty() {
        let mass: f64 = values.iter().sum();
        if mass.is_nan() || mass <= 0.0 {
            problems.push(problem(None, format!("total mass {mass} cannot be renormalized")));
        }
    }
    if problems.is_empty() {
        Ok(values)
    } else {
        Err(problems)
    }
}

fn check_header(manifest: &BundleManifest) -> Vec<BundleProblem> {
    let mut out = Vec::new();
    let mut header = |message: String| {
        out.push(BundleProblem {
            file: MANIFEST_FILE.into(),
            cell: None,
            message,
        })
    };
    if manifest.version != BUNDLE_VERSION {
        header(format!("unsupported version {}", manifest.version));
    }
    if manifest.dtype != "f32" {
        header(format!("unsupported dtype {:?}", manifest.dtype));
    }
    if manifest.byte_order != "little" {
        header(format!("unsupported byte order {:?}", manifest.byte_order));
    }
    if manifest.height == 0 || manifest.width == 0 {
        header(format!("empty grid {}x{}", manifest.height, manifest.width));
    }
    if manifest.tokens.is_empty() {
        header("no tokens".into());
    }
    for (pos, t) in manifest.tokens.iter().enumerate() {
        if t.index != pos {
            header(format!("token at position {pos} has index {}", t.index));
        }
    }
    out
}

/// Full validation: header fields, file sizes, cell values, and the
/// distribution constraints after renormalization.
pub fn validate_bundle(dir: &Path) -> BundleReport {
    let manifest = match read_manifest(dir) {
        Ok(m) => m,
        Err(e) => {
            return BundleReport {
                valid: false,
                tokens: 0,
                problems: vec![BundleProblem {
                    file: MANIFEST_FILE.into(),
                    cell: None,
                    message: e.to_string(),
                }],
            }
        }
    };
    let mut problems = check_header(&manifest);
    if problems.is_empty() {
        let cells = manifest.height * manifest.width;
        for tok in &manifest.tokens {
            match read_values(dir, tok, cells) {
                Ok(values) => {
                    match AttentionMap::from_weights(manifest.height, manifest.width, tok.index, values) {
                        Ok(map) => {
                            let mass: f64 = map.weights().iter().sum();
                            if (mass - 1.0).abs() > MASS_TOLERANCE {
                                problems.push(BundleProblem {
                                    file: tok.file.clone(),
                                    cell: None,
                                    message: format!("renormalized mass {mass}"),
                                });
                            }
                        }
                        Err(e) => problems.push(BundleProblem {
                            file: tok.file.clone(),
                            cell: None,
                            message: e.to_string(),
                        }),
                    }
                }
                Err(mut p) => problems.append(&mut p),
            }
        }
    }
    BundleReport {
        valid: problems.is_empty(),
        tokens: manifest.tokens.len(),
        problems,
    }
}

/// The maps a reader of a bundle written from `set` reconstructs: every
/// cell rounded to `f32`, then renormalized in `f64`.
pub fn export_precision(set: &AttentionSet) -> Result<AttentionSet, AttentionError> {
    let maps = set
        .maps()
        .iter()
        .map(|m| {
            let rounded = m.weights().iter().map(|&w| w as f32 as f64).collect();
            AttentionMap::from_weights(m.height(), m.width(), m.token_index(), rounded)
        })
        .collect::<Result<Vec<_>, _>>()?;
    AttentionSet::new(maps)
}

/// Validates and loads a bundle; maps are renormalized over the grid.
pub fn load_bundle(dir: &Path) -> Result<(BundleManifest, AttentionSet), BundleError> {
    let report = validate_bundle(dir);
    if !report.valid {
        return Err(BundleError::Invalid(report.summary()));
    }
    let manifest = read_manifest(dir)?;
    let cells = manifest.height * manifest.width;
    let mut maps = Vec::with_capacity(manifest.tokens.len());
    for tok in &manifest.tokens {
        let values = read_values(dir, tok, cells).map_err(|p| {
            BundleError::Invalid(p.into_iter().map(|x| x.message).collect::<Vec<_>>().join("; "))
        })?;
        maps.push(AttentionMap::from_weights(
            manifest.height,
            manifest.width,
            tok.index,
            values,
        )?);
    }
    Ok((manifest, AttentionSet::new(maps)?))
}

/// Mismatches between a manifest's tokens and a parsed prompt.
pub fn alignment_problems(manifest: &BundleManifest, parsed: &ParsedPrompt) -> Vec<String> {
    let mut out = Vec::new();
    if manifest.tokens.len() != parsed.tokens.len() {
        out.push(format!(
            "manifest has {} tokens, parse has {}",
            manifest.tokens.len(),
            parsed.tokens.len()
        ));
    }
    for (m, p) in manifest.tokens.iter().zip(&parsed.tokens) {
        if m.text != p.text {
            out.push(format!("token {}: manifest {:?} vs parse {:?}", m.index, m.text, p.text));
        } else if m.role != p.role && !m.excluded {
            out.push(format!(
                "token {} ({}): manifest role {:?} vs parse role {:?}",
                m.index, m.text, m.role, p.role
            ));
        }
    }
    out
}
