//! `FIELD2D` scalar field files: a header line
//! `FIELD2D <name> nx ny x0 y0 dx dy t` followed by `nx * ny` values in
//! row-major order (y outer), one per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub name: String,
    pub grid: GridSpec,
    pub time: f64,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(name: &str, grid: GridSpec, time: f64, values: Vec<f64>) -> Result<Self> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!("field name {name:?} must be a single non-empty word")));
        }
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} cells", values.len(), grid.len())));
        }
        Ok(ScalarField { name: name.to_string(), grid, time, values })
    }

    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = format!("FIELD2D {} {} {} {} {} {} {} {}\n", self.name, g.nx, g.ny, g.x0, g.y0, g.dx, g.dy, self.time);
        for v in &self.values {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 9 || tok[0] != "FIELD2D" {
            return Err(Error::Parse { line: 1, message: "expected `FIELD2D <name> nx ny x0 y0 dx dy t`".into() });
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse { line: 1, message: format!("{s:?}: {e}") });
        let real = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse { line: 1, message: format!("{s:?}: {e}") });
        let grid = GridSpec::new(int(tok[2])?, int(tok[3])?, real(tok[4])?, real(tok[5])?, real(tok[6])?, real(tok[7])?)?;
        let time = real(tok[8])?;
        let mut values = Vec::with_capacity(grid.len());
        for (n, line) in lines {
            for t in line.split_whitespace() {
                let v = t.parse::<f64>().map_err(|e| Error::Parse { line: n + 1, message: format!("{t:?}: {e}") })?;
                values.push(v);
            }
        }
        if values.len() != grid.len() {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected {} values, found {}", grid.len(), values.len()),
            });
        }
        ScalarField::new(tok[1], grid, time, values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        ScalarField::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}
