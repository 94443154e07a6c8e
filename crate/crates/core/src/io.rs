//! File formats: parameter JSON, edge-list graphs and 1-based label files.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::degree_corrected::DcParams;
use crate::error::{Error, Result};
use crate::model::{Graph, Labels, ModelParams};

#[derive(Deserialize)]
struct PiH {
    pi: Vec<f64>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsJson {
    PiH {
        #[serde(rename = "pi_H")]
        pi_h: PiH,
    },
    Full {
        #[serde(rename = "K")]
        k: usize,
        rho: f64,
        pi: Vec<f64>,
        #[serde(rename = "S")]
        s: Vec<Vec<f64>>,
    },
}

fn square(rows: &[Vec<f64>], k: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Parse(format!("{what} must be {k} x {k}")));
    }
    Ok(DMatrix::from_fn(k, k, |a, b| rows[a][b]))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Parses either `{"K","rho","pi","S"}` or `{"pi_H":{"pi","H"}}`. Extra
/// fields are ignored, so fit outputs can be read back as parameters.
pub fn parse_params(text: &str) -> Result<ModelParams> {
    let parsed: ParamsJson = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("parameter JSON: {e}")))?;
    match parsed {
        ParamsJson::PiH { pi_h } => {
            let k = pi_h.pi.len();
            ModelParams::from_pi_h(pi_h.pi, &square(&pi_h.h, k, "H")?)
        }
        ParamsJson::Full { k, rho, pi, s } => {
            if pi.len() != k {
                return Err(Error::Parse(format!("K = {k} but pi has {} entries", pi.len())));
            }
            ModelParams::new(rho, pi, square(&s, k, "S")?)
        }
    }
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    parse_params(&fs::read_to_string(path)?)
}

pub fn params_json(params: &ModelParams) -> Value {
    json!({
        "K": params.k(),
        "rho": params.rho(),
        "pi": params.pi(),
        "S": matrix_rows(params.s()),
        "H": matrix_rows(params.h()),
    })
}

pub fn parse_dc_params(text: &str) -> Result<DcParams> {
    let dc: DcParams = serde_json::from_str(text).map_err(|e| Error::Parse(format!("DC parameter JSON: {e}")))?;
    dc.validate()?;
    Ok(dc)
}

/// Reads `n <int>` followed by `i j` lines (0-based). Blank lines are skipped.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty graph file".into()))?;
    let mut parts = header.split_whitespace();
    let n = match (parts.next(), parts.next(), parts.next()) {
        (Some("n"), Some(v), None) => v
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad node count '{v}'")))?,
        _ => return Err(Error::Parse(format!("expected 'n <int>' header, got '{header}'"))),
    };
    let mut edges = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad node index '{s}'")))
        };
        match fields.as_slice() {
            [i, j] => edges.push((parse(i)?, parse(j)?)),
            _ => return Err(Error::Parse(format!("line {lineno}: expected 'i j', got '{line}'"))),
        }
    }
    Graph::from_edges(n, &edges)
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    parse_graph(&fs::read_to_string(path)?)
}

pub fn write_graph<W: Write>(graph: &Graph, mut out: W) -> Result<()> {
    writeln!(out, "n {}", graph.n())?;
    for (i, j) in graph.edges() {
        writeln!(out, "{i} {j}")?;
    }
    Ok(())
}

pub fn parse_labels(text: &str) -> Result<Labels> {
    let z = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<usize>().map_err(|_| Error::Parse(format!("bad label '{l}'"))))
        .collect::<Result<Vec<_>>>()?;
    Labels::from_one_based(&z)
}

pub fn read_labels(path: &Path) -> Result<Labels> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels<W: Write>(labels: &Labels, mut out: W) -> Result<()> {
    for z in labels.to_one_based() {
        writeln!(out, "{z}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_params_parse() {
        let p = parse_params(r#"{"K":2,"rho":0.05,"pi":[0.5,0.5],"S":[[1.6,0.4],[0.4,1.6]]}"#).unwrap();
        assert!((p.h()[(0, 0)] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn pi_h_form_is_split() {
        let p = parse_params(r#"{"pi_H":{"pi":[0.5,0.5],"H":[[0.08,0.02],[0.02,0.08]]}}"#).unwrap();
        assert!((p.rho() - 0.05).abs() < 1e-15);
        assert!((p.s()[(0, 0)] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip_through_output() {
        let p = parse_params(r#"{"K":2,"rho":0.05,"pi":[0.3,0.7],"S":[[1.0,1.0],[1.0,1.0]]}"#).unwrap();
        let text = serde_json::to_string(&params_json(&p)).unwrap();
        assert_eq!(parse_params(&text).unwrap(), p);
    }

    #[test]
    fn malformed_params_are_parse_errors() {
        assert!(matches!(parse_params("{"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_params(r#"{"K":3,"rho":0.1,"pi":[0.5,0.5],"S":[[1,1],[1,1]]}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn graph_round_trip() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 4), (2, 3)]).unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "n 5\n0 1\n1 4\n2 3\n");
        assert_eq!(parse_graph(&format!("\n{text}\n\n")).unwrap(), g);
    }

    #[test]
    fn bad_graphs_are_rejected() {
        assert!(parse_graph("").is_err());
        assert!(parse_graph("5\n0 1\n").is_err());
        assert!(parse_graph("n 3\n0 1 2\n").is_err());
        assert!(parse_graph("n 3\n0 3\n").is_err());
        assert!(parse_graph("n 3\n1 1\n").is_err());
    }

    #[test]
    fn labels_are_one_based_on_disk() {
        let z = parse_labels("1\n2\n\n2\n").unwrap();
        assert_eq!(z.as_slice(), &[0, 1, 1]);
        let mut buf = Vec::new();
        write_labels(&z, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1\n2\n2\n");
        assert!(parse_labels("0\n").is_err());
    }
}
