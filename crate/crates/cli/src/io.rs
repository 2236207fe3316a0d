//! Output files.
//!
//! Field files are plain text:
//!
//! ```text
//! # optional comment lines
//! chfield 1
//! nx <Nx>
//! ny <Ny>
//! lx <Lx>
//! ly <Ly>
//! dtype f64
//! bulk <Nx*Ny>
//! <one value per line, node k = j*Nx + i>
//! boundary <2*Nx>
//! <bottom row, then top row>
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so files round-trip bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use chdbc::stepping::Diagnostics;
use chdbc::{Error, Field, Mesh, Result};

use crate::config::RunConfig;

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> Error {
    let e: std::io::Error = e.into();
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn format_err(path: &Path, what: &str) -> Error {
    Error::FieldFormat(format!("{}: {what}", path.display()))
}

/// Header block placed at the top of CSV and field files.
pub fn header(config: &RunConfig) -> String {
    let mut out = String::new();
    for line in config.to_toml_string().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!("# config_hash: {}\n", config.hash()));
    out
}

pub fn write_field(path: &Path, mesh: &Mesh, field: &Field, config: Option<&RunConfig>) -> Result<()> {
    field.check_size(mesh)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::new();
    if let Some(c) = config {
        body.push_str(&header(c));
    }
    body.push_str(&format!(
        "chfield 1\nnx {}\nny {}\nlx {:?}\nly {:?}\ndtype f64\nbulk {}\n",
        mesh.nx(),
        mesh.ny(),
        mesh.lx(),
        mesh.ly(),
        field.bulk.len()
    ));
    for v in &field.bulk {
        body.push_str(&format!("{v:?}\n"));
    }
    body.push_str(&format!("boundary {}\n", field.boundary.len()));
    for v in &field.boundary {
        body.push_str(&format!("{v:?}\n"));
    }
    w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    lines: std::vec::IntoIter<String>,
}

impl Cursor<'_> {
    fn next(&mut self) -> Result<String> {
        self.lines
            .next()
            .ok_or_else(|| format_err(self.path, "unexpected end of file"))
    }

    fn bad(&self, what: &str) -> Error {
        format_err(self.path, &format!("bad {what} entry"))
    }

    fn keyed<V: std::str::FromStr>(&mut self, key: &str) -> Result<V> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| self.bad(key)),
            _ => Err(self.bad(key)),
        }
    }

    fn block(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        if self.keyed::<usize>(key)? != expected {
            return Err(self.bad(key));
        }
        (0..expected)
            .map(|_| self.next()?.trim().parse().map_err(|_| self.bad(key)))
            .collect()
    }
}

/// Reads a field file and returns the mesh it was written on with the field.
pub fn read_field_with_mesh(path: &Path) -> Result<(Mesh, Field)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| io_err(path, e))?
        .into_iter()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .collect::<Vec<_>>();
    let mut cur = Cursor {
        path,
        lines: lines.into_iter(),
    };
    if cur.next()?.trim() != "chfield 1" {
        return Err(cur.bad("magic"));
    }
    let nx = cur.keyed("nx")?;
    let ny = cur.keyed("ny")?;
    let lx = cur.keyed("lx")?;
    let ly = cur.keyed("ly")?;
    if cur.keyed::<String>("dtype")? != "f64" {
        return Err(cur.bad("dtype"));
    }
    let mesh = Mesh::new(nx, ny, lx, ly)?;
    let bulk = cur.block("bulk", mesh.bulk_len())?;
    let boundary = cur.block("boundary", mesh.boundary_len())?;
    if cur.lines.next().is_some() {
        return Err(format_err(path, "trailing data"));
    }
    Ok((mesh, Field { bulk, boundary }))
}

pub fn read_field(path: &Path) -> Result<Field> {
    read_field_with_mesh(path).map(|(_, f)| f)
}

/// CSV writer with the configuration header already written.
pub struct CsvOut {
    path: std::path::PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, config: &RunConfig, columns: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut buf = BufWriter::new(file);
        buf.write_all(header(config).as_bytes()).map_err(|e| io_err(path, e))?;
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(columns).map_err(|e| io_err(path, e))?;
        Ok(CsvOut {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub const DIAGNOSTIC_COLUMNS: [&str; 9] = [
    "step",
    "t",
    "mass",
    "energy",
    "grad_mu",
    "u_v_norm",
    "xi_h_norm",
    "newton_iters",
    "residual",
];

pub const SWEEP_COLUMNS: [&str; 5] = ["delta", "err_LinfVstar", "err_L2Z", "err_combined", "runtime"];

pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn diagnostic_row(d: &Diagnostics<f64>) -> [String; 9] {
    [
        d.step.to_string(),
        num(d.t),
        num(d.mass),
        num(d.energy),
        num(d.grad_mu),
        num(d.u_v_norm),
        num(d.xi_h_norm),
        d.newton_iters.to_string(),
        num(d.residual),
    ]
}

/// JSON object of `payload` with `config` and `config_hash` added.
pub fn write_json<S: Serialize>(path: &Path, config: &RunConfig, payload: &S) -> Result<()> {
    let mut value = serde_json::to_value(payload).map_err(|e| io_err(path, e))?;
    let cfg = serde_json::to_value(config).map_err(|e| io_err(path, e))?;
    match &mut value {
        Value::Object(map) => {
            map.insert("config".into(), cfg);
            map.insert("config_hash".into(), json!(config.hash()));
        }
        other => {
            value = json!({ "result": other.take(), "config": cfg, "config_hash": config.hash() });
        }
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.txt");
        let mesh = Mesh::new(5, 4, 1.0, 0.7).unwrap();
        let field = Field::from_fn(&mesh, |x, y| (x * 3.1).sin() / 3.0 + y * 1e-17 + 0.1);
        write_field(&path, &mesh, &field, Some(&RunConfig::default())).unwrap();
        let (m, back) = read_field_with_mesh(&path).unwrap();
        assert_eq!(m, mesh);
        assert_eq!(back, field);
        for (a, b) in back.bulk.iter().zip(&field.bulk) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.txt");
        std::fs::write(&path, "chfield 1\nnx 2\nny 2\nlx 1\nly 1\ndtype f32\n").unwrap();
        assert!(read_field(&path).is_err());
        assert!(read_field(&dir.path().join("missing.txt")).is_err());
    }

    #[test]
    fn header_lines_are_comments() {
        let h = header(&RunConfig::default());
        assert!(h.lines().all(|l| l.starts_with("# ")));
        assert!(h.lines().last().unwrap().starts_with("# config_hash: "));
    }
}
