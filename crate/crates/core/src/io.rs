//! Delimited-text persistence.
//!
//! Every file has the same layout: `#`-prefixed `key: value` header lines,
//! one line of comma-separated column names, then numeric rows. Floats are
//! written in shortest round-trip scientific notation, so reading a file
//! back reproduces every value bit for bit.
//!
//! ```text
//! # kind: density
//! # version: 0.1.0
//! # model: ou
//! x,f
//! -8e0,1.2698e-28
//! ```

use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;
use std::str::FromStr;

use num_complex::Complex64;

use crate::estimator::DriftEstimate;
use crate::grid::UniformGrid;
use crate::invariant::{CfTable, DensityTable};
use crate::selector::{GridEntry, ScoredCandidate, SelectionTrace, SpectralWeight};
use crate::sim::Path;
use crate::spectral::{EcfProvenance, EcfTable};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            header: vec![("kind".into(), kind.into()), ("version".into(), VERSION.into())],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    /// Records a float in round-trip form.
    pub fn meta_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.meta(key, format!("{value:e}"))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn kind(&self) -> Option<&str> {
        self.get("kind")
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::invalid(format!("table header lacks `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("header `{key}` has unparsable value `{raw}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("table has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub(crate) fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::invalid(format!("expected a `{kind}` table, found {other:?}"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, v) in &self.header {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:e}"));
            }
            writeln!(out, "{line}")?;
        }
        out.flush()
    }

    pub fn write(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn read_from<R: BufRead>(input: R, origin: &FsPath) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|source| Error::Io {
                path: origin.to_path_buf(),
                source,
            })?;
            let lineno = n + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim_start()
                    .split_once(": ")
                    .ok_or_else(|| parse_err(lineno, "header line is not `key: value`".into()))?;
                header.push((k.to_string(), v.to_string()));
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            match &columns {
                None => columns = Some(line.split(',').map(|c| c.trim().to_string()).collect()),
                Some(cols) => {
                    let row = line
                        .split(',')
                        .map(|f| f.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .map_err(|e| parse_err(lineno, format!("bad number: {e}")))?;
                    if row.len() != cols.len() {
                        return Err(parse_err(
                            lineno,
                            format!("expected {} fields, found {}", cols.len(), row.len()),
                        ));
                    }
                    rows.push(row);
                }
            }
        }
        let columns = columns.ok_or_else(|| parse_err(0, "missing column line".into()))?;
        Ok(Self { header, columns, rows })
    }

    pub fn read(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file), path)
    }
}

fn grid_meta(table: &mut Table, prefix: &str, grid: &UniformGrid) {
    table
        .meta_f64(&format!("{prefix}_start"), grid.start())
        .meta_f64(&format!("{prefix}_step"), grid.step())
        .meta(&format!("{prefix}_points"), grid.len());
}

fn grid_from_meta(table: &Table, prefix: &str) -> Result<UniformGrid> {
    UniformGrid::from_step(
        table.parse(&format!("{prefix}_start"))?,
        table.parse(&format!("{prefix}_step"))?,
        table.parse(&format!("{prefix}_points"))?,
    )
}

fn check_rows(table: &Table, expected: usize) -> Result<()> {
    if table.rows.len() != expected {
        return Err(Error::invalid(format!(
            "table has {} rows, header promises {expected}",
            table.rows.len()
        )));
    }
    Ok(())
}

/// Conversion to and from [`Table`].
pub trait Tabular: Sized {
    fn to_table(&self) -> Table;
    fn from_table(table: &Table) -> Result<Self>;

    fn emit(&self, path: impl AsRef<FsPath>) -> Result<()> {
        self.to_table().write(path)
    }

    fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }
}

impl Tabular for Path {
    fn to_table(&self) -> Table {
        let mut t = Table::new("path", &["t", "x"]);
        t.meta_f64("dt", self.dt()).meta("seed", self.seed()).meta_f64("T", self.horizon());
        t.rows = self
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| vec![i as f64 * self.dt(), x])
            .collect();
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("path")?;
        Path::from_values(table.parse("dt")?, table.column("x")?, table.parse("seed")?)
    }
}

impl Tabular for DensityTable {
    fn to_table(&self) -> Table {
        let mut t = Table::new("density", &["x", "f"]);
        t.meta("model", self.model_label()).meta_f64("norm_const", self.norm_const());
        grid_meta(&mut t, "x", self.x_grid());
        t.rows = self.x_grid().iter().zip(self.f_values()).map(|(x, &f)| vec![x, f]).collect();
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("density")?;
        let grid = grid_from_meta(table, "x")?;
        check_rows(table, grid.len())?;
        Ok(DensityTable::from_parts(
            grid,
            table.column("f")?,
            table.parse("norm_const")?,
            table.parse("model")?,
        ))
    }
}

fn complex_rows(grid: &UniformGrid, values: &[Complex64]) -> Vec<Vec<f64>> {
    grid.iter().zip(values).map(|(l, z)| vec![l, z.re, z.im]).collect()
}

fn complex_column(table: &Table) -> Result<Vec<Complex64>> {
    let re = table.column("re")?;
    let im = table.column("im")?;
    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

impl Tabular for CfTable {
    fn to_table(&self) -> Table {
        let mut t = Table::new("cf", &["lambda", "re", "im"]);
        t.meta("source", self.source_label());
        grid_meta(&mut t, "lambda", self.lambda_grid());
        t.rows = complex_rows(self.lambda_grid(), self.values());
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("cf")?;
        let grid = grid_from_meta(table, "lambda")?;
        check_rows(table, grid.len())?;
        CfTable::new(grid, complex_column(table)?, table.get("source").unwrap_or_default())
    }
}

impl Tabular for EcfTable {
    fn to_table(&self) -> Table {
        let mut t = Table::new("ecf", &["lambda", "re", "im"]);
        t.meta_f64("sigma_hat_sq", self.sigma_hat_sq())
            .meta_f64("T", self.horizon())
            .meta("stride", self.path_stride());
        if let Some(p) = self.provenance() {
            t.meta("seed", p.seed).meta("steps", p.steps).meta_f64("dt", p.dt);
        }
        grid_meta(&mut t, "lambda", self.lambda_grid());
        t.rows = complex_rows(self.lambda_grid(), self.values());
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("ecf")?;
        let grid = grid_from_meta(table, "lambda")?;
        check_rows(table, grid.len())?;
        let provenance = match table.get("seed") {
            Some(_) => Some(EcfProvenance {
                seed: table.parse("seed")?,
                steps: table.parse("steps")?,
                dt: table.parse("dt")?,
            }),
            None => None,
        };
        Ok(
            EcfTable::from_values(grid, complex_column(table)?, table.parse("sigma_hat_sq")?, table.parse("T")?)?
                .with_provenance(table.parse("stride")?, provenance),
        )
    }
}

impl Tabular for SelectionTrace {
    fn to_table(&self) -> Table {
        let mut t = Table::new("selection", &["i", "j", "alpha", "beta", "score"]);
        let s = self.selected();
        t.meta("selected", self.selected_index())
            .meta_f64("selected_alpha", s.entry.weight.alpha())
            .meta_f64("selected_beta", s.entry.weight.beta());
        t.rows = self
            .candidates()
            .iter()
            .map(|c| {
                vec![
                    c.entry.i as f64,
                    c.entry.j as f64,
                    c.entry.weight.alpha(),
                    c.entry.weight.beta(),
                    c.score,
                ]
            })
            .collect();
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("selection")?;
        let candidates = table
            .rows
            .iter()
            .map(|r| {
                Ok(ScoredCandidate {
                    entry: GridEntry {
                        i: r[0] as u32,
                        j: r[1] as u32,
                        weight: SpectralWeight::new(r[2], r[3])?,
                    },
                    score: r[4],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let selected: usize = table.parse("selected")?;
        if selected >= candidates.len() {
            return Err(Error::invalid("selected index out of range"));
        }
        Ok(SelectionTrace::from_parts(candidates, selected))
    }
}

impl Tabular for DriftEstimate {
    fn to_table(&self) -> Table {
        let mut t = Table::new("drift", &["x", "s", "f_bar", "f1_bar"]);
        t.meta_f64("T", self.horizon())
            .meta_f64("dt", self.dt())
            .meta("seed", self.seed())
            .meta_f64("alpha", self.weight().alpha())
            .meta_f64("beta", self.weight().beta());
        grid_meta(&mut t, "x", self.x_grid());
        t.rows = (0..self.x_grid().len())
            .map(|i| vec![self.x_grid().get(i), self.s_values[i], self.f_bar[i], self.f1_bar[i]])
            .collect();
        t
    }

    fn from_table(table: &Table) -> Result<Self> {
        table.expect_kind("drift")?;
        let x_grid = grid_from_meta(table, "x")?;
        check_rows(table, x_grid.len())?;
        Ok(DriftEstimate {
            x_grid,
            s_values: table.column("s")?,
            f_bar: table.column("f_bar")?,
            f1_bar: table.column("f1_bar")?,
            weight: SpectralWeight::new(table.parse("alpha")?, table.parse("beta")?)?,
            horizon: table.parse("T")?,
            dt: table.parse("dt")?,
            seed: table.parse("seed")?,
        })
    }
}
