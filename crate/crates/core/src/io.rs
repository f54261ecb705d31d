//! Text formats for graphs, ground truth, angle matrices and point clouds.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write → read → write cycle is byte-stable.
//!
//! Graph file: a `# n=<N> k=<K>` header, then one edge per line as
//! `i j w [layer]` with 0-based node indices, the offset in radians, and an
//! optional hidden set label (0 marks a noise edge) present only for
//! generated data.

use crate::angle::AngleMatrix;
use crate::graph::{Edge, OffsetGraph};
use crate::snl::PointCloud;
use crate::synth::{EdgeLabel, GroundTruth};
use crate::{Error, Result};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "expected '# n=<N> k=<K>' header"))?;
    let mut n = None;
    let mut k = None;
    for token in body.split_whitespace() {
        if let Some(v) = token.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = token.strip_prefix("k=") {
            k = v.parse::<usize>().ok();
        }
    }
    match (n, k) {
        (Some(n), Some(k)) => Ok((n, k)),
        _ => Err(parse_err(path, 1, "expected '# n=<N> k=<K>' header")),
    }
}

/// Write the edge list. The hidden-label column appears only when the graph
/// carries generator labels.
pub fn write_graph(path: &Path, g: &OffsetGraph, k: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# n={} k={}", g.n(), k)?;
    let labeled = g.edges().iter().any(|e| e.layer.is_some());
    for e in g.edges() {
        if labeled {
            writeln!(w, "{} {} {} {}", e.i, e.j, e.w, e.layer.unwrap_or(0))?;
        } else {
            writeln!(w, "{} {} {}", e.i, e.j, e.w)?;
        }
    }
    Ok(())
}

/// Read an edge list written by [`write_graph`]. Returns the graph and the
/// `k` recorded in the header.
pub fn read_graph(path: &Path) -> Result<(OffsetGraph, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))??;
    let (n, k) = parse_header(path, &header)?;
    let mut edges = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(path, line_no, "expected 'i j w [layer]'"));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad source index"))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad target index"))?;
        let w: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad offset"))?;
        let layer = if fields.len() == 4 {
            let l: u32 = fields[3]
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad layer label"))?;
            (l > 0).then_some(l)
        } else {
            None
        };
        edges.push(Edge { i, j, w, layer });
    }
    Ok((OffsetGraph::new(n, edges)?, k))
}

/// Companion ground-truth file: angle rows `i l theta` (1-based set index)
/// followed by an `# edges` section of `i j <set|noise>` rows.
pub fn write_truth(path: &Path, truth: &GroundTruth, g: &OffsetGraph) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = truth.angles.nrows();
    let k = truth.angles.ncols();
    writeln!(w, "# n={n} k={k}")?;
    for i in 0..n {
        for l in 0..k {
            writeln!(w, "{i} {} {}", l + 1, truth.angles.get(i, l))?;
        }
    }
    writeln!(w, "# edges")?;
    for (e, label) in g.edges().iter().zip(&truth.edge_labels) {
        match label {
            EdgeLabel::Layer(l) => writeln!(w, "{} {} {}", e.i, e.j, l)?,
            EdgeLabel::Noise => writeln!(w, "{} {} noise", e.i, e.j)?,
        }
    }
    Ok(())
}

/// Read a ground-truth file; edge labels come back in file order.
pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))??;
    let (n, k) = parse_header(path, &header)?;
    let mut angles = Array2::zeros((n, k));
    let mut labels = Vec::new();
    let mut in_edges = false;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed.contains("edges") {
                in_edges = true;
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, "expected three fields"));
        }
        if in_edges {
            let label = if fields[2] == "noise" {
                EdgeLabel::Noise
            } else {
                let l: u32 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "bad edge label"))?;
                EdgeLabel::Layer(l)
            };
            labels.push(label);
        } else {
            let i: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad node index"))?;
            let l: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad set index"))?;
            let theta: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad angle"))?;
            if i >= n || l == 0 || l > k {
                return Err(parse_err(path, line_no, "angle row out of range"));
            }
            angles[(i, l - 1)] = theta;
        }
    }
    Ok(GroundTruth {
        angles: AngleMatrix::new(angles)?,
        edge_labels: labels,
    })
}

/// Angle matrix: header plus one row of k angles per node.
pub fn write_angles(path: &Path, angles: &AngleMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# n={} k={}", angles.nrows(), angles.ncols())?;
    for i in 0..angles.nrows() {
        let row: Vec<String> = (0..angles.ncols())
            .map(|l| angles.get(i, l).to_string())
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_angles(path: &Path) -> Result<AngleMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))??;
    let (n, k) = parse_header(path, &header)?;
    let mut values = Array2::zeros((n, k));
    let mut row = 0usize;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if row >= n {
            return Err(parse_err(path, line_no, "more rows than the header declares"));
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != k {
            return Err(parse_err(path, line_no, format!("expected {k} angles")));
        }
        for (l, f) in fields.iter().enumerate() {
            values[(row, l)] = f
                .parse()
                .map_err(|_| parse_err(path, line_no, "bad angle"))?;
        }
        row += 1;
    }
    if row != n {
        return Err(parse_err(path, row + 1, "fewer rows than the header declares"));
    }
    AngleMatrix::new(values)
}

/// Point cloud: `x y` per line, with an optional `# ane=<v>` trailer.
pub fn write_cloud(path: &Path, cloud: &PointCloud, ane: Option<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud {
        writeln!(w, "{} {}", p[0], p[1])?;
    }
    if let Some(v) = ane {
        writeln!(w, "# ane={v}")?;
    }
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<(PointCloud, Option<f64>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut cloud = Vec::new();
    let mut ane = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("ane=") {
                ane = v.parse().ok();
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(path, line_no, "expected 'x y'"));
        }
        let x: f64 = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad x"))?;
        let y: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad y"))?;
        cloud.push([x, y]);
    }
    Ok((cloud, ane))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_offset_graph, GroundTruthOption, MeasurementModel, SyntheticConfig};

    fn sample_instance() -> (OffsetGraph, GroundTruth) {
        gen_offset_graph(&SyntheticConfig {
            model: MeasurementModel::ErdosRenyi,
            n: 25,
            p: 0.3,
            k: 2,
            eta: 0.3,
            option: GroundTruthOption::Gamma,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn graph_roundtrip_is_lossless_and_byte_stable() {
        let (g, _) = sample_instance();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.graph");
        let p2 = dir.path().join("b.graph");
        write_graph(&p1, &g, 2).unwrap();
        let (g2, k) = read_graph(&p1).unwrap();
        assert_eq!(k, 2);
        assert_eq!(g, g2);
        write_graph(&p2, &g2, k).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn graph_without_labels_has_three_columns() {
        let g = OffsetGraph::new(3, vec![Edge::new(0, 1, 1.5), Edge::new(2, 1, 0.25)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.graph");
        write_graph(&p, &g, 1).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split_whitespace().count() == 3));
        let (g2, _) = read_graph(&p).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn truth_roundtrip() {
        let (g, truth) = sample_instance();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.truth");
        write_truth(&p, &truth, &g).unwrap();
        let back = read_truth(&p).unwrap();
        assert_eq!(truth.angles, back.angles);
        assert_eq!(truth.edge_labels, back.edge_labels);
    }

    #[test]
    fn angles_roundtrip() {
        let (_, truth) = sample_instance();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.angles");
        write_angles(&p, &truth.angles).unwrap();
        let back = read_angles(&p).unwrap();
        assert_eq!(truth.angles, back);
    }

    #[test]
    fn cloud_roundtrip_with_trailer() {
        let cloud: PointCloud = vec![[0.25, 0.5], [1.0, -2.0], [3.5, 0.125]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cloud");
        write_cloud(&p, &cloud, Some(0.125)).unwrap();
        let (back, ane) = read_cloud(&p).unwrap();
        assert_eq!(cloud, back);
        assert_eq!(ane, Some(0.125));
    }

    #[test]
    fn parse_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.graph");
        std::fs::write(&p, "# n=3 k=1\n0 1 not-a-number\n").unwrap();
        match read_graph(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let q = dir.path().join("noheader.graph");
        std::fs::write(&q, "0 1 0.5\n").unwrap();
        assert!(read_graph(&q).is_err());
    }
}
