//! Scenario configuration files: `key = value` lines grouped in `[grid]`,
//! `[physics]`, `[model]` and `[output]` sections. `#` starts a comment.
//! Lengths are in mm, times in s, rates in 1/s.
//!
//! ```text
//! [grid]
//! nx = 90
//! ny = 90
//! xmin = 0
//! xmax = 3
//! ymin = 0
//! ymax = 3
//!
//! [physics]
//! preset = fiber_strand
//! eps = 0.25
//!
//! [model]
//! model = K1F
//!
//! [output]
//! times = 1, 2
//! dir = out
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::closures::ModelKind;
use crate::error::{Error, Result};
use crate::fv::Boundary;
use crate::grid::GridSpec;
use crate::kinetic::ScalingParams;
use crate::scenario::{brain_slice_parameters, InitialSquare, Preset, Scenario, TissueSource, STRAND_SIGMA};
use crate::tissue::{Estimator, WaterTensorField};

const SECTIONS: [(&str, &[&str]); 4] = [
    ("grid", &["nx", "ny", "xmin", "xmax", "ymin", "ymax", "dx", "dy"]),
    (
        "physics",
        &[
            "preset",
            "eps",
            "T",
            "t_end",
            "c",
            "lambda0",
            "lambda1",
            "kplus",
            "kminus",
            "x0",
            "listed_st",
            "tensor_file",
            "estimator",
            "sigma",
            "d33",
            "init_xmin",
            "init_xmax",
            "init_ymin",
            "init_ymax",
            "init_density",
            "background",
        ],
    ),
    (
        "model",
        &[
            "model",
            "boundary",
            "cfl",
            "weno_theta",
            "weno_z",
            "realizability_floor",
            "dg_newton_tol",
            "dg_newton_maxit",
            "quad_degree",
            "half_range_degree",
        ],
    ),
    ("output", &["name", "dir", "times"]),
];

struct Entry {
    value: String,
    line: usize,
}

/// Parsed sections with line numbers, before interpretation.
struct Document {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse { line, message: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Parse { line, message: format!("unknown section [{name}]") });
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, message: format!("expected `key = value`, got {content:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            let section = current
                .as_ref()
                .ok_or_else(|| Error::Parse { line, message: format!("key {key:?} outside of a section") })?;
            let allowed = SECTIONS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(Error::Parse { line, message: format!("unknown key {key:?} in [{section}]") });
            }
            let map = sections.get_mut(section).expect("section registered");
            if map.contains_key(key) {
                return Err(Error::Parse { line, message: format!("duplicate key {key:?}") });
            }
            map.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        Ok(Document { sections })
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|m| m.get(key))
    }

    fn str(&self, section: &str, key: &str) -> Option<&str> {
        self.get(section, key).map(|e| e.value.as_str())
    }

    fn real(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.get(section, key)
            .map(|e| {
                e.value.parse::<f64>().map_err(|err| Error::Parse {
                    line: e.line,
                    message: format!("{key} = {:?}: {err}", e.value),
                })
            })
            .transpose()
    }

    fn int(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.get(section, key)
            .map(|e| {
                e.value.parse::<usize>().map_err(|err| Error::Parse {
                    line: e.line,
                    message: format!("{key} = {:?}: {err}", e.value),
                })
            })
            .transpose()
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>().map_err(|err| Error::Parse { line: e.line, message: format!("{key}: {s:?}: {err}") })
                    })
                    .collect()
            })
            .transpose()
    }

    fn with_line<T>(&self, section: &str, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match (self.get(section, key), e) {
            (Some(entry), Error::InvalidParameter(m)) => Error::Parse { line: entry.line, message: m },
            (_, e) => e,
        })
    }
}

/// Parse a scenario configuration; relative tensor file paths are taken
/// relative to `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<Scenario> {
    let d = Document::parse(text)?;
    let preset = match d.str("physics", "preset") {
        Some(p) => d.with_line("physics", "preset", Preset::parse(p))?,
        None => Preset::Custom,
    };
    let tensor_file = d.str("physics", "tensor_file").map(|p| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    });

    // grid: explicit, or from the tensor file
    let nx = d.int("grid", "nx")?;
    let grid = match (nx, &tensor_file) {
        (Some(nx), _) => {
            let ny = d.int("grid", "ny")?.unwrap_or(nx);
            let need = |k: &str| -> Result<f64> {
                d.real("grid", k)?
                    .ok_or_else(|| Error::Parse { line: 0, message: format!("missing [grid] {k}") })
            };
            let (xmin, ymin) = (need("xmin")?, need("ymin")?);
            let dx = match d.real("grid", "dx")? {
                Some(v) => v,
                None => (need("xmax")? - xmin) / nx as f64,
            };
            let dy = match d.real("grid", "dy")? {
                Some(v) => v,
                None => (need("ymax")? - ymin) / ny as f64,
            };
            d.with_line("grid", "nx", GridSpec::new(nx, ny, xmin, ymin, dx, dy))?
        }
        (None, Some(path)) => WaterTensorField::read(path)?.grid,
        (None, None) => {
            return Err(Error::Parse { line: 0, message: "[grid] nx is required without a tensor file".into() });
        }
    };

    // physical parameters: preset defaults, explicit keys override
    let extent = grid.width().max(grid.height());
    let mut physical = match preset {
        Preset::FiberStrand => {
            let eps = d
                .real("physics", "eps")?
                .ok_or_else(|| Error::Parse { line: 0, message: "fiber_strand preset needs [physics] eps".into() })?;
            let t = d.real("physics", "T")?.unwrap_or(crate::scenario::STRAND_TIME);
            d.with_line("physics", "eps", ScalingParams::fiber_strand(eps, extent, t))?.physical()
        }
        Preset::BrainSlice => brain_slice_parameters(),
        Preset::Custom => {
            let mut p = brain_slice_parameters();
            for key in ["T", "c", "lambda0", "lambda1", "kplus", "kminus", "x0"] {
                if d.get("physics", key).is_none() {
                    return Err(Error::Parse { line: 0, message: format!("custom preset needs [physics] {key}") });
                }
            }
            p.x0 = extent;
            p
        }
    };
    for (key, slot) in [
        ("T", &mut physical.t0),
        ("c", &mut physical.c),
        ("lambda0", &mut physical.lambda0),
        ("lambda1", &mut physical.lambda1),
        ("kplus", &mut physical.kplus),
        ("kminus", &mut physical.kminus),
        ("x0", &mut physical.x0),
    ] {
        if let Some(v) = d.real("physics", key)? {
            *slot = v;
        }
    }
    if preset == Preset::FiberStrand {
        if let Some(eps) = d.real("physics", "eps")? {
            let st = physical.x0 / (physical.t0 * physical.c);
            if ((st - eps) / eps).abs() > 1e-12 {
                return Err(Error::Parse {
                    line: d.get("physics", "eps").map_or(0, |e| e.line),
                    message: format!("eps = {eps} contradicts x0 / (T c) = {st}"),
                });
            }
        }
    }

    let tissue = match (&tensor_file, preset) {
        (Some(p), _) => TissueSource::TensorFile(p.clone()),
        (None, Preset::BrainSlice) => {
            return Err(Error::Parse { line: 0, message: "brain_slice preset needs [physics] tensor_file".into() });
        }
        (None, _) => TissueSource::FiberStrand {
            sigma: d.real("physics", "sigma")?.unwrap_or(STRAND_SIGMA),
            d33: d.real("physics", "d33")?.unwrap_or(1.0),
        },
    };
    let estimator = match d.str("physics", "estimator") {
        Some(s) => d.with_line("physics", "estimator", Estimator::parse(s))?,
        None if preset == Preset::BrainSlice => Estimator::CharacteristicLength,
        None => Estimator::FractionalAnisotropy,
    };
    let mut initial = match preset {
        Preset::BrainSlice => InitialSquare { xmin: 98.5, xmax: 103.5, ymin: 158.5, ymax: 163.5, inside: 1.0, background: 1e-4 },
        _ => InitialSquare { xmin: 0.45, xmax: 0.55, ymin: 1.45, ymax: 1.55, inside: 1.0, background: 1e-4 },
    };
    for (key, slot) in [
        ("init_xmin", &mut initial.xmin),
        ("init_xmax", &mut initial.xmax),
        ("init_ymin", &mut initial.ymin),
        ("init_ymax", &mut initial.ymax),
        ("init_density", &mut initial.inside),
        ("background", &mut initial.background),
    ] {
        if let Some(v) = d.real("physics", key)? {
            *slot = v;
        }
    }
    let t_end_s = d.real("physics", "t_end")?.unwrap_or(physical.t0);
    let listed_st = match d.real("physics", "listed_st")? {
        Some(v) => Some(v),
        None if preset == Preset::BrainSlice => Some(0.302),
        None => None,
    };

    let model = match d.str("model", "model") {
        Some(m) => d.with_line("model", "model", ModelKind::parse(m))?,
        None => ModelKind::K1F,
    };
    let boundary = match d.str("model", "boundary").map(|s| s.to_ascii_lowercase()) {
        None => Boundary::Thermal,
        Some(s) if s == "thermal" => Boundary::Thermal,
        Some(s) if s == "periodic" => Boundary::Periodic,
        Some(s) => {
            return Err(Error::Parse {
                line: d.get("model", "boundary").map_or(0, |e| e.line),
                message: format!("unknown boundary {s:?} (thermal | periodic)"),
            });
        }
    };
    let mut solver = crate::fv::SolverConfig::default();
    for (key, slot) in [
        ("cfl", &mut solver.cfl),
        ("weno_theta", &mut solver.weno_theta),
        ("weno_z", &mut solver.weno_z),
        ("realizability_floor", &mut solver.realizability_floor),
        ("dg_newton_tol", &mut solver.dg_newton_tol),
    ] {
        if let Some(v) = d.real("model", key)? {
            *slot = v;
        }
    }
    if let Some(v) = d.int("model", "dg_newton_maxit")? {
        solver.dg_newton_maxit = v;
    }
    let quad_degree = d.int("model", "quad_degree")?;
    let half_range_degree = d.int("model", "half_range_degree")?.unwrap_or(16);

    let name = d.str("output", "name").unwrap_or(preset.name()).to_string();
    let output_dir = PathBuf::from(d.str("output", "dir").unwrap_or("out"));
    let output_times_s = d.list("output", "times")?.unwrap_or_else(|| vec![t_end_s]);

    let sc = Scenario {
        name,
        preset,
        grid,
        tissue,
        estimator,
        physical,
        initial,
        model,
        boundary,
        solver,
        quad_degree,
        half_range_degree,
        t_end_s,
        output_times_s,
        output_dir,
        listed_st,
    };
    sc.validate()?;
    Ok(sc)
}

pub fn read_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Serialize every resolved value; `parse_config(&to_config(s), _)` returns `s`.
pub fn to_config(s: &Scenario) -> String {
    let g = &s.grid;
    let p = &s.physical;
    let mut out = String::new();
    let _ = writeln!(out, "[grid]");
    let _ = writeln!(out, "nx = {}", g.nx);
    let _ = writeln!(out, "ny = {}", g.ny);
    let _ = writeln!(out, "xmin = {:?}", g.x0);
    let _ = writeln!(out, "ymin = {:?}", g.y0);
    let _ = writeln!(out, "dx = {:?}", g.dx);
    let _ = writeln!(out, "dy = {:?}", g.dy);
    let _ = writeln!(out, "\n[physics]");
    let _ = writeln!(out, "preset = {}", s.preset.name());
    if s.preset == Preset::FiberStrand {
        let _ = writeln!(out, "eps = {:?}", p.x0 / (p.t0 * p.c));
    }
    for (k, v) in [
        ("T", p.t0),
        ("t_end", s.t_end_s),
        ("c", p.c),
        ("lambda0", p.lambda0),
        ("lambda1", p.lambda1),
        ("kplus", p.kplus),
        ("kminus", p.kminus),
        ("x0", p.x0),
    ] {
        let _ = writeln!(out, "{k} = {v:?}");
    }
    if let Some(st) = s.listed_st {
        let _ = writeln!(out, "listed_st = {st:?}");
    }
    match &s.tissue {
        TissueSource::FiberStrand { sigma, d33 } => {
            let _ = writeln!(out, "sigma = {sigma:?}");
            let _ = writeln!(out, "d33 = {d33:?}");
        }
        TissueSource::TensorFile(path) => {
            let _ = writeln!(out, "tensor_file = {}", path.display());
        }
    }
    let _ = writeln!(out, "estimator = {}", s.estimator.name());
    let i = &s.initial;
    for (k, v) in [
        ("init_xmin", i.xmin),
        ("init_xmax", i.xmax),
        ("init_ymin", i.ymin),
        ("init_ymax", i.ymax),
        ("init_density", i.inside),
        ("background", i.background),
    ] {
        let _ = writeln!(out, "{k} = {v:?}");
    }
    let _ = writeln!(out, "\n[model]");
    let _ = writeln!(out, "model = {}", s.model.name());
    let _ = writeln!(
        out,
        "boundary = {}",
        match s.boundary {
            Boundary::Thermal => "thermal",
            Boundary::Periodic => "periodic",
        }
    );
    let c = &s.solver;
    for (k, v) in [
        ("cfl", c.cfl),
        ("weno_theta", c.weno_theta),
        ("weno_z", c.weno_z),
        ("realizability_floor", c.realizability_floor),
        ("dg_newton_tol", c.dg_newton_tol),
    ] {
        let _ = writeln!(out, "{k} = {v:?}");
    }
    let _ = writeln!(out, "dg_newton_maxit = {}", c.dg_newton_maxit);
    if let Some(q) = s.quad_degree {
        let _ = writeln!(out, "quad_degree = {q}");
    }
    let _ = writeln!(out, "half_range_degree = {}", s.half_range_degree);
    let _ = writeln!(out, "\n[output]");
    let _ = writeln!(out, "name = {}", s.name);
    let _ = writeln!(out, "dir = {}", s.output_dir.display());
    let times: Vec<String> = s.output_times_s.iter().map(|t| format!("{t:?}")).collect();
    let _ = writeln!(out, "times = {}", times.join(", "));
    out
}
