//! On-disk formats: field dumps, CSV series and content hashes.
//!
//! A field dump is a raw array of little-endian IEEE-754 doubles next to a
//! JSON sidecar describing its layout. Round-trips are bit-exact: values
//! are moved through `to_le_bytes`/`from_le_bytes` untouched. CSV series
//! print floats with the shortest representation that parses back to the
//! same bits.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{environment_from_fields, EnvironmentSpec, TorusEnvironment};
use crate::error::CoreError;
use crate::geometry::TorusGeometry;
use crate::stream::axis_pairs;
use crate::Result;

/// Version tag written into every sidecar.
pub const FORMAT_VERSION: u32 = 1;

/// Sidecar metadata of a raw f64 dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDumpMeta {
    pub format_version: u32,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Component names in file order; each component holds N^d values.
    pub components: Vec<String>,
    /// Always "f64le".
    pub dtype: String,
    /// Always "lexicographic, last axis fastest".
    pub order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_spec: Option<serde_json::Value>,
}

impl FieldDumpMeta {
    pub fn new(geometry: TorusGeometry, components: Vec<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            d: geometry.dim(),
            n: geometry.side(),
            components,
            dtype: "f64le".to_string(),
            order: "lexicographic, last axis fastest".to_string(),
            seed: None,
            generator_spec: None,
        }
    }
}

fn data_path(base: &Path) -> PathBuf {
    base.with_extension("f64")
}

fn meta_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Write `arrays` (one per component) as raw little-endian doubles with a
/// JSON sidecar. `base` is the path without extension.
pub fn write_field_dump(base: &Path, meta: &FieldDumpMeta, arrays: &[&[f64]]) -> Result<()> {
    if meta.components.len() != arrays.len() {
        return Err(CoreError::Precondition(
            "component names and arrays differ in count".into(),
        ));
    }
    let sites = meta.n.pow(meta.d as u32);
    if arrays.iter().any(|a| a.len() != sites) {
        return Err(CoreError::Precondition(format!(
            "every component must hold {sites} values"
        )));
    }
    let mut bytes = Vec::with_capacity(arrays.len() * sites * 8);
    for array in arrays {
        for v in array.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(data_path(base))?;
    file.write_all(&bytes)?;
    let sidecar = fs::File::create(meta_path(base))?;
    serde_json::to_writer_pretty(sidecar, meta)?;
    Ok(())
}

/// Read a dump written by [`write_field_dump`].
pub fn read_field_dump(base: &Path) -> Result<(FieldDumpMeta, Vec<Vec<f64>>)> {
    let meta: FieldDumpMeta = serde_json::from_reader(fs::File::open(meta_path(base))?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CoreError::InvalidSpec(format!(
            "unsupported dump format version {}",
            meta.format_version
        )));
    }
    if meta.dtype != "f64le" {
        return Err(CoreError::InvalidSpec(format!("unsupported dtype {}", meta.dtype)));
    }
    let sites = meta.n.pow(meta.d as u32);
    let mut bytes = Vec::new();
    fs::File::open(data_path(base))?.read_to_end(&mut bytes)?;
    let expected = meta.components.len() * sites * 8;
    if bytes.len() != expected {
        return Err(CoreError::InvalidSpec(format!(
            "dump holds {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut arrays = Vec::with_capacity(meta.components.len());
    for c in 0..meta.components.len() {
        let mut comp = Vec::with_capacity(sites);
        for i in 0..sites {
            let off = (c * sites + i) * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            comp.push(f64::from_le_bytes(buf));
        }
        arrays.push(comp);
    }
    Ok((meta, arrays))
}

/// Component names of an environment dump: conductances per axis, then
/// plaquette components per axis pair.
pub fn environment_components(geometry: TorusGeometry) -> Vec<String> {
    let mut names: Vec<String> = (0..geometry.dim()).map(|i| format!("s_axis{i}")).collect();
    for (i, j) in axis_pairs(geometry.dim()) {
        names.push(format!("h_axes{i}{j}"));
    }
    names
}

/// Save the defining fields of an environment.
pub fn write_environment(base: &Path, env: &TorusEnvironment) -> Result<()> {
    let g = env.geometry();
    let mut meta = FieldDumpMeta::new(g, environment_components(g));
    if let Some(spec) = env.spec() {
        meta.seed = Some(spec.seed);
        meta.generator_spec = Some(serde_json::to_value(spec)?);
    }
    let mut arrays: Vec<&[f64]> = Vec::new();
    for comp in env.s_edges() {
        arrays.push(comp);
    }
    for comp in env.stream().plaquettes() {
        arrays.push(comp);
    }
    write_field_dump(base, &meta, &arrays)
}

/// Rebuild an environment from a dump written by [`write_environment`].
pub fn read_environment(base: &Path) -> Result<TorusEnvironment> {
    let (meta, arrays) = read_field_dump(base)?;
    let geometry = TorusGeometry::new(meta.d, meta.n)?;
    let expected = environment_components(geometry);
    if meta.components != expected {
        return Err(CoreError::InvalidSpec(format!(
            "environment dump components {:?} do not match {expected:?}",
            meta.components
        )));
    }
    let spec: Option<EnvironmentSpec> = match &meta.generator_spec {
        Some(v) => Some(serde_json::from_value(v.clone())?),
        None => None,
    };
    let d = geometry.dim();
    let mut iter = arrays.into_iter();
    let s_edge: Vec<Vec<f64>> = (0..d).map(|_| iter.next().expect("checked")).collect();
    let plaquettes: Vec<Vec<f64>> = iter.collect();
    let eps = spec.as_ref().map(|s| s.eps).unwrap_or(1.0);
    environment_from_fields(geometry, s_edge, plaquettes, eps, spec)
}

/// Format one CSV value: whole numbers print plainly, everything else in
/// shortest-roundtrip scientific form.
fn csv_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Write a CSV file; every value parses back to the same bits.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&csv_value(v));
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::RescalePolicy;
    use crate::stream::FieldLaw;

    fn sample_spec() -> EnvironmentSpec {
        EnvironmentSpec {
            d: 2,
            n: 8,
            seed: 7,
            s: FieldLaw::IidUniform { lo: 1.0, hi: 2.0 },
            h: FieldLaw::IidUniform { lo: -1.0, hi: 1.0 },
            rescale: RescalePolicy::ShrinkH { margin: 0.1 },
            eps: 1.0,
        }
    }

    #[test]
    fn dump_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("field");
        let g = TorusGeometry::new(2, 4).unwrap();
        // values with awkward bit patterns
        let a: Vec<f64> = (0..16)
            .map(|i| f64::from_bits(0x3ff0_0000_0000_0001u64 + (i as u64) * 0x10_0001))
            .collect();
        let b: Vec<f64> = (0..16).map(|i| (-1.0f64).powi(i) * 1e-300 * (i as f64 + 1.0)).collect();
        let meta = FieldDumpMeta::new(g, vec!["a".into(), "b".into()]);
        write_field_dump(&base, &meta, &[&a, &b]).unwrap();
        let (meta2, arrays) = read_field_dump(&base).unwrap();
        assert_eq!(meta, meta2);
        for (orig, read) in a.iter().zip(&arrays[0]) {
            assert_eq!(orig.to_bits(), read.to_bits());
        }
        for (orig, read) in b.iter().zip(&arrays[1]) {
            assert_eq!(orig.to_bits(), read.to_bits());
        }
    }

    #[test]
    fn environment_roundtrip_reproduces_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("env");
        let env = TorusEnvironment::generate(&sample_spec()).unwrap();
        write_environment(&base, &env).unwrap();
        let back = read_environment(&base).unwrap();
        assert_eq!(env.content_hash(), back.content_hash());
        // derived fields rebuild identically
        let g = env.geometry();
        for dir_ in g.directions() {
            for site in 0..g.sites() {
                assert_eq!(env.rate(dir_, site).to_bits(), back.rate(dir_, site).to_bits());
                assert_eq!(env.v(dir_, site).to_bits(), back.v(dir_, site).to_bits());
            }
        }
        assert_eq!(back.spec(), Some(&sample_spec()));
    }

    #[test]
    fn mismatched_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bad");
        let g = TorusGeometry::new(2, 4).unwrap();
        let meta = FieldDumpMeta::new(g, vec!["a".into()]);
        let short = vec![1.0; 8];
        assert!(write_field_dump(&base, &meta, &[&short]).is_err());
    }

    #[test]
    fn csv_values_parse_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let rows = vec![
            vec![0.1, 2.0f64.sqrt()],
            vec![1e-300, std::f64::consts::PI],
            vec![42.0, -7.0],
        ];
        write_csv(&path, &["x", "y"], rows.clone().into_iter()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,y");
        for (line, row) in lines.zip(&rows) {
            for (field, expected) in line.split(',').zip(row) {
                let parsed: f64 = field.parse().unwrap();
                assert_eq!(parsed.to_bits(), expected.to_bits());
            }
        }
        // whole numbers stay human readable
        assert!(text.lines().nth(3).unwrap().starts_with("42,-7"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
