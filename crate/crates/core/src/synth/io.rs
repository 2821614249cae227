//! Line-delimited JSON dataset files.
//!
//! The first line is a `meta` record holding the generator config and the
//! anchor; every following line is a `graph` record:
//!
//! ```text
//! {"record":"meta","format":1,"config":{...},"anchor":{"coords":[[x,y],...],"features":[[...],...]}}
//! {"record":"graph","id":0,"split":"train","labels":[...],"coords":[[x,y],...],"features":[[...],...]}
//! ```
//!
//! Reals are written with 17 significant digits so files round-trip
//! exactly. Graph edges are not stored; they are recomputed on load.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::Deserialize;
use thiserror::Error;

use super::{Anchor, Dataset, SynthConfig};
use crate::geometry::Graph;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn real(out: &mut impl Write, v: f64) -> std::io::Result<()> {
    write!(out, "{v:.16e}")
}

fn reals(out: &mut impl Write, v: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    out.write_all(b"[")?;
    for (n, x) in v.into_iter().enumerate() {
        if n > 0 {
            out.write_all(b",")?;
        }
        real(out, x)?;
    }
    out.write_all(b"]")
}

fn matrix(out: &mut impl Write, m: &Array2<f64>) -> std::io::Result<()> {
    out.write_all(b"[")?;
    for (n, row) in m.rows().into_iter().enumerate() {
        if n > 0 {
            out.write_all(b",")?;
        }
        reals(out, row.iter().copied())?;
    }
    out.write_all(b"]")
}

fn points(out: &mut impl Write, p: &[[f64; 2]]) -> std::io::Result<()> {
    out.write_all(b"[")?;
    for (n, q) in p.iter().enumerate() {
        if n > 0 {
            out.write_all(b",")?;
        }
        reals(out, q.iter().copied())?;
    }
    out.write_all(b"]")
}

fn write_config(out: &mut impl Write, c: &SynthConfig) -> std::io::Result<()> {
    write!(out, "{{\"n_univ\":{},\"p_vis\":", c.n_univ)?;
    real(out, c.p_vis)?;
    for (name, v) in [
        ("sigma_feat", c.sigma_feat),
        ("sigma_coo", c.sigma_coo),
    ] {
        write!(out, ",\"{name}\":")?;
        real(out, v)?;
    }
    write!(out, ",\"feat_dim\":{},\"canvas\":", c.feat_dim)?;
    real(out, c.canvas)?;
    write!(out, ",\"n_train\":{},\"n_test\":{}", c.n_train, c.n_test)?;
    for (name, v) in [
        ("rotation_deg", c.rotation_deg),
        ("scale_min", c.scale_min),
        ("scale_max", c.scale_max),
        ("translation", c.translation),
    ] {
        write!(out, ",\"{name}\":")?;
        real(out, v)?;
    }
    write!(out, ",\"seed\":{}}}", c.seed)
}

fn write_graph(out: &mut impl Write, id: usize, split: &str, g: &Graph) -> std::io::Result<()> {
    write!(out, "{{\"record\":\"graph\",\"id\":{id},\"split\":\"{split}\",\"labels\":[")?;
    for (n, l) in g.labels().unwrap_or(&[]).iter().enumerate() {
        if n > 0 {
            out.write_all(b",")?;
        }
        write!(out, "{l}")?;
    }
    out.write_all(b"],\"coords\":")?;
    points(out, g.coords())?;
    out.write_all(b",\"features\":")?;
    matrix(out, g.features())?;
    out.write_all(b"}\n")
}

pub fn write_dataset(out: &mut impl Write, d: &Dataset) -> Result<(), DatasetIoError> {
    write!(out, "{{\"record\":\"meta\",\"format\":{FORMAT_VERSION},\"config\":")?;
    write_config(out, &d.config)?;
    out.write_all(b",\"anchor\":{\"coords\":")?;
    points(out, &d.anchor.coords)?;
    out.write_all(b",\"features\":")?;
    matrix(out, &d.anchor.features)?;
    out.write_all(b"}}\n")?;
    let tagged = d
        .train
        .iter()
        .map(|g| ("train", g))
        .chain(d.test.iter().map(|g| ("test", g)));
    for (id, (split, g)) in tagged.enumerate() {
        write_graph(out, id, split, g)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ConfigRecord {
    n_univ: usize,
    p_vis: f64,
    sigma_feat: f64,
    sigma_coo: f64,
    feat_dim: usize,
    canvas: f64,
    n_train: usize,
    n_test: usize,
    rotation_deg: f64,
    scale_min: f64,
    scale_max: f64,
    translation: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct AnchorRecord {
    coords: Vec<[f64; 2]>,
    features: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Meta {
        format: u32,
        config: ConfigRecord,
        anchor: AnchorRecord,
    },
    Graph {
        id: usize,
        split: String,
        labels: Vec<usize>,
        coords: Vec<[f64; 2]>,
        features: Vec<Vec<f64>>,
    },
}

fn to_matrix(rows: Vec<Vec<f64>>, cols: usize) -> Result<Array2<f64>, String> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * cols);
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != cols {
            return Err(format!("feature row {r} has {} values, expected {cols}", row.len()));
        }
        flat.extend(row);
    }
    Array2::from_shape_vec((n, cols), flat).map_err(|e| e.to_string())
}

pub fn read_dataset(input: impl BufRead) -> Result<Dataset, DatasetIoError> {
    let mut meta: Option<(SynthConfig, Anchor)> = None;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let fail = |msg: String| DatasetIoError::Parse { line: lineno, msg };
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        match rec {
            Record::Meta { format, config: c, anchor } => {
                if meta.is_some() {
                    return Err(fail("second meta record".into()));
                }
                if format != FORMAT_VERSION {
                    return Err(fail(format!("unsupported format {format}")));
                }
                let config = SynthConfig {
                    n_univ: c.n_univ,
                    p_vis: c.p_vis,
                    sigma_feat: c.sigma_feat,
                    sigma_coo: c.sigma_coo,
                    feat_dim: c.feat_dim,
                    canvas: c.canvas,
                    n_train: c.n_train,
                    n_test: c.n_test,
                    rotation_deg: c.rotation_deg,
                    scale_min: c.scale_min,
                    scale_max: c.scale_max,
                    translation: c.translation,
                    seed: c.seed,
                };
                let features = to_matrix(anchor.features, config.feat_dim).map_err(fail)?;
                meta = Some((config, Anchor { features, coords: anchor.coords }));
            }
            Record::Graph {
                id,
                split,
                labels,
                coords,
                features,
            } => {
                let Some((config, _)) = &meta else {
                    return Err(fail("graph record before meta record".into()));
                };
                if id != train.len() + test.len() {
                    return Err(fail(format!("graph id {id} out of sequence")));
                }
                let features = to_matrix(features, config.feat_dim).map_err(fail)?;
                let g = Graph::new(coords, features, Some(labels)).map_err(|e| fail(e.to_string()))?;
                g.check_labels(config.n_univ).map_err(|e| fail(e.to_string()))?;
                match split.as_str() {
                    "train" if test.is_empty() => train.push(g),
                    "test" => test.push(g),
                    other => return Err(fail(format!("unexpected split {other:?}"))),
                }
            }
        }
    }
    let (config, anchor) = meta.ok_or(DatasetIoError::Parse {
        line: 0,
        msg: "missing meta record".into(),
    })?;
    Ok(Dataset {
        config,
        anchor,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_dataset;

    #[test]
    fn round_trip_is_exact() {
        let cfg = SynthConfig {
            feat_dim: 6,
            n_train: 3,
            n_test: 2,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_graph_before_meta() {
        let line = r#"{"record":"graph","id":0,"split":"train","labels":[0],"coords":[[0,0]],"features":[[1]]}"#;
        assert!(matches!(
            read_dataset(line.as_bytes()),
            Err(DatasetIoError::Parse { line: 1, .. })
        ));
    }
}
