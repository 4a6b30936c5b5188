//! Scenario definitions, simulation driver, run manifests and the
//! convergence study against the diffusion limit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::closures::ModelKind;
use crate::compare::{relative_difference, ComparisonReport};
use crate::diffusion::{run_diffusion, DiffusionFields, DiffusionSummary};
use crate::error::{Error, Result};
use crate::field_io::ScalarField;
use crate::fv::{run, Boundary, MomentField, RunSummary, SolverConfig};
use crate::grid::GridSpec;
use crate::kinetic::{build_system_from_cells, compute_scaling, tissue_cells, PhysicalParams, ScalingParams};
use crate::tissue::{derive_tissue_fields, synth_fiber_strand, BindingRates, Estimator, TissueFields, WaterTensorField};

/// Time step of the diffusion solver relative to its stability bound.
pub const DIFFUSION_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Preset {
    FiberStrand,
    BrainSlice,
    Custom,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fiber_strand" | "fiber-strand" => Ok(Preset::FiberStrand),
            "brain_slice" | "brain-slice" => Ok(Preset::BrainSlice),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::InvalidParameter(format!("unknown preset {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::FiberStrand => "fiber_strand",
            Preset::BrainSlice => "brain_slice",
            Preset::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TissueSource {
    /// Synthetic tract ending in the middle of the domain.
    FiberStrand { sigma: f64, d33: f64 },
    /// `TENSORFIELD2D` file.
    TensorFile(PathBuf),
}

/// Density `inside` on a rectangle (mm), `background` elsewhere, isotropic in velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialSquare {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub inside: f64,
    pub background: f64,
}

impl InitialSquare {
    /// Cell averages using the exact overlap of each cell with the rectangle.
    pub fn density(&self, grid: &GridSpec) -> Vec<f64> {
        let mut rho = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let f = grid.overlap_fraction(i, j, self.xmin, self.xmax, self.ymin, self.ymax);
                rho.push(self.background + f * (self.inside - self.background));
            }
        }
        rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub preset: Preset,
    /// Grid in mm.
    pub grid: GridSpec,
    pub tissue: TissueSource,
    pub estimator: Estimator,
    pub physical: PhysicalParams,
    pub initial: InitialSquare,
    pub model: ModelKind,
    pub boundary: Boundary,
    /// `t_end` is ignored; the run length is `t_end_s`.
    pub solver: SolverConfig,
    pub quad_degree: Option<usize>,
    pub half_range_degree: usize,
    /// Final time in s.
    pub t_end_s: f64,
    /// Output times in s.
    pub output_times_s: Vec<f64>,
    pub output_dir: PathBuf,
    /// Strouhal number listed alongside the parameters, if any.
    pub listed_st: Option<f64>,
}

/// Extent `X` and time `T` of the fiber-strand experiment.
pub const STRAND_EXTENT: f64 = 3.0;
pub const STRAND_TIME: f64 = 2.0;
/// Default tract width (mm).
pub const STRAND_SIGMA: f64 = 0.3;

/// Fiber-strand experiment on `[0, 3]^2` mm over `T = 2` s with `St = eps`,
/// `R = eta = 1` and thermal walls.
pub fn build_fiber_strand_scenario(eps: f64, grid: GridSpec) -> Result<Scenario> {
    let s = ScalingParams::fiber_strand(eps, STRAND_EXTENT, STRAND_TIME)?;
    grid.validate()?;
    Ok(Scenario {
        name: "fiber_strand".into(),
        preset: Preset::FiberStrand,
        grid,
        tissue: TissueSource::FiberStrand { sigma: STRAND_SIGMA, d33: 1.0 },
        estimator: Estimator::FractionalAnisotropy,
        physical: s.physical(),
        initial: InitialSquare { xmin: 0.45, xmax: 0.55, ymin: 1.45, ymax: 1.55, inside: 1.0, background: 1e-4 },
        model: ModelKind::K1F,
        boundary: Boundary::Thermal,
        solver: SolverConfig::default(),
        quad_degree: None,
        half_range_degree: 16,
        t_end_s: STRAND_TIME,
        output_times_s: vec![STRAND_TIME],
        output_dir: PathBuf::from("out"),
        listed_st: None,
    })
}

/// Physical parameters of the brain-slice experiment.
pub fn brain_slice_parameters() -> PhysicalParams {
    PhysicalParams { t0: 1.5768e7, c: 2.1e-4, lambda0: 1e-5, lambda1: 2.5e-4, kplus: 1e-5, kminus: 1e-5, x0: 1000.0 }
}

/// Brain-slice experiment on a tensor field file: characteristic-length
/// volume fractions, a 5 mm initial square at `(101, 161)` mm.
pub fn build_brain_slice_scenario(tensor_file: &Path, grid: GridSpec) -> Result<Scenario> {
    grid.validate()?;
    let p = brain_slice_parameters();
    Ok(Scenario {
        name: "brain_slice".into(),
        preset: Preset::BrainSlice,
        grid,
        tissue: TissueSource::TensorFile(tensor_file.to_path_buf()),
        estimator: Estimator::CharacteristicLength,
        physical: p,
        initial: InitialSquare { xmin: 98.5, xmax: 103.5, ymin: 158.5, ymax: 163.5, inside: 1.0, background: 1e-4 },
        model: ModelKind::K1F,
        boundary: Boundary::Thermal,
        solver: SolverConfig::default(),
        quad_degree: None,
        half_range_degree: 16,
        t_end_s: p.t0,
        output_times_s: vec![p.t0],
        output_dir: PathBuf::from("out"),
        listed_st: Some(0.302),
    })
}

impl Scenario {
    pub fn scaling(&self) -> Result<ScalingParams> {
        compute_scaling(&self.physical)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.scaling()?;
        let mut s = self.solver;
        s.t_end = self.t_end_s / self.physical.t0;
        s.validate()?;
        let i = &self.initial;
        if !(i.inside >= 0.0 && i.background >= 0.0) || !(i.xmax >= i.xmin && i.ymax >= i.ymin) {
            return Err(Error::InvalidParameter("initial density must be nonnegative on a proper rectangle".into()));
        }
        if self.output_times_s.iter().any(|t| !(*t >= 0.0) || *t > self.t_end_s) {
            return Err(Error::InvalidParameter("output times must lie in [0, t_end]".into()));
        }
        if let TissueSource::FiberStrand { sigma, d33 } = self.tissue {
            if !(sigma > 0.0 && d33 > 0.0) {
                return Err(Error::InvalidParameter("strand sigma and d33 must be positive".into()));
            }
        }
        if self.boundary == Boundary::Periodic && self.model == ModelKind::Diffusion {
            return Err(Error::InvalidParameter("the diffusion solver only supports zero-flux walls".into()));
        }
        Ok(())
    }

    /// Solver configuration with the nondimensional end time.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { t_end: self.t_end_s / self.physical.t0, ..self.solver }
    }

    pub fn water_tensors(&self) -> Result<WaterTensorField> {
        match &self.tissue {
            TissueSource::FiberStrand { sigma, d33 } => {
                synth_fiber_strand(self.grid.width().max(self.grid.height()), *sigma, *d33, &self.grid)
            }
            TissueSource::TensorFile(path) => {
                let w = WaterTensorField::read(path)?;
                if !w.grid.same_as(&self.grid) {
                    return Err(Error::GridMismatch(format!(
                        "tensor file grid {:?} differs from the scenario grid {:?}",
                        w.grid, self.grid
                    )));
                }
                Ok(w)
            }
        }
    }

    pub fn tissue_fields(&self) -> Result<TissueFields> {
        let p = &self.physical;
        derive_tissue_fields(
            &self.water_tensors()?,
            self.estimator,
            BindingRates { lambda0: p.lambda0, kplus: p.kplus, kminus: p.kminus },
        )
    }

    /// Warnings about parameter combinations worth a second look.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let (Some(listed), Ok(s)) = (self.listed_st, self.scaling()) {
            if ((s.eps - listed) / listed).abs() > 5e-3 {
                w.push(format!(
                    "St = x0 / (T c) = {:.4e} with x0 = {} mm differs from the listed St = {listed}",
                    s.eps, self.physical.x0
                ));
            }
            let width = self.grid.width().max(self.grid.height());
            let needed = listed * self.physical.t0 * self.physical.c;
            if ((self.physical.x0 - width) / width).abs() > 0.5 {
                w.push(format!(
                    "the listed St = {listed} requires x0 = {needed:.4} mm, but the domain is {width} mm wide; \
                     length scale x0 = {} mm is used",
                    self.physical.x0
                ));
            }
        }
        w
    }

    pub fn with_model(&self, model: ModelKind) -> Scenario {
        Scenario { model, ..self.clone() }
    }

    /// Same scenario with the fiber-strand scaling for another `eps`.
    pub fn with_eps(&self, eps: f64) -> Result<Scenario> {
        if self.preset != Preset::FiberStrand {
            return Err(Error::InvalidParameter("eps can only be varied for the fiber-strand preset".into()));
        }
        let s = ScalingParams::fiber_strand(eps, self.grid.width().max(self.grid.height()), self.physical.t0)?;
        Ok(Scenario { physical: s.physical(), ..self.clone() })
    }
}

/// Output of one simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Density snapshots `(t in s, rho)` on the scenario grid.
    pub densities: Vec<(f64, Vec<f64>)>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum SolverSummary {
    Moment(RunSummary),
    Diffusion(DiffusionSummary),
}

/// Machine-readable record of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub scaling: ScalingParams,
    pub solver: SolverConfig,
    pub ncomp: usize,
    pub summary: SolverSummary,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub threads: usize,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
    }
}

/// Run the scenario without writing files.
pub fn simulate(sc: &Scenario) -> Result<Simulation> {
    sc.validate()?;
    let start = Instant::now();
    let scaling = sc.scaling()?;
    let tissue = sc.tissue_fields()?;
    let cells = tissue_cells(&tissue, &scaling)?;
    let grid_nd = sc.grid.scaled(scaling.x0);
    let cfg = sc.solver_config();
    let rho0 = sc.initial.density(&sc.grid);
    let times_nd: Vec<f64> = sc.output_times_s.iter().map(|t| t / sc.physical.t0).collect();
    let keep = |t: f64| times_nd.iter().any(|x| (x - t).abs() <= 1e-12 * cfg.t_end.max(1.0)) || t == cfg.t_end;
    let (densities, summary, ncomp) = if sc.model == ModelKind::Diffusion {
        let f = DiffusionFields::from_cells(grid_nd, &cells, &scaling)?;
        let out = run_diffusion(rho0, &f, cfg.t_end, &times_nd, DIFFUSION_SAFETY)?;
        let d = out.snapshots.into_iter().filter(|(t, _)| keep(*t)).map(|(t, r)| (t * sc.physical.t0, r)).collect();
        (d, SolverSummary::Diffusion(out.summary), 1)
    } else {
        let mut opts = cfg.system_options();
        opts.quad_degree = sc.quad_degree;
        opts.half_range_degree = sc.half_range_degree;
        let system = build_system_from_cells(sc.model, grid_nd, cells, &scaling, opts)?;
        let k = system.ncomp();
        let init = MomentField::from_fn(grid_nd, k, |c| system.isotropic_state(rho0[c]))?;
        let out = run(system.as_ref(), init, &cfg, sc.boundary, &times_nd)?;
        let d = out
            .snapshots
            .into_iter()
            .filter(|(t, _)| keep(*t))
            .map(|(t, f)| (t * sc.physical.t0, f.density()))
            .collect();
        (d, SolverSummary::Moment(out.summary), k)
    };
    let manifest = Manifest {
        scenario: sc.clone(),
        scaling,
        solver: cfg,
        ncomp,
        summary,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings: sc.warnings(),
        outputs: Vec::new(),
        threads: rayon::current_num_threads(),
    };
    Ok(Simulation { densities, manifest })
}

/// Run the scenario and write one `FIELD2D` file per output time plus `manifest.json`.
pub fn simulate_to_disk(sc: &Scenario) -> Result<Simulation> {
    let mut sim = simulate(sc)?;
    std::fs::create_dir_all(&sc.output_dir).map_err(|e| Error::Io(format!("{}: {e}", sc.output_dir.display())))?;
    let model = sc.model.name();
    for (k, (t, rho)) in sim.densities.iter().enumerate() {
        let path = sc.output_dir.join(format!("{}_{}_rho_{k:03}.field2d", sc.name, model));
        ScalarField::new("rho", sc.grid, *t, rho.clone())?.write(&path)?;
        sim.manifest.outputs.push(path.display().to_string());
    }
    let path = sc.output_dir.join(format!("{}_{}_manifest.json", sc.name, model));
    std::fs::write(&path, sim.manifest.to_json()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(sim)
}

/// Final density of a scenario run.
pub fn final_density(sc: &Scenario) -> Result<Vec<f64>> {
    let sim = simulate(sc)?;
    sim.densities.last().map(|(_, r)| r.clone()).ok_or_else(|| Error::InvalidParameter("run produced no output".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub max_relerr: f64,
    pub mean_relerr: f64,
    #[serde(skip)]
    pub report: ComparisonReport,
}

/// Relative difference between `model` and the diffusion limit at the
/// final time for every `eps`.
pub fn convergence_study(base: &Scenario, eps_list: &[f64], model: ModelKind) -> Result<Vec<ConvergenceRow>> {
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("all eps must be positive".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let sc = base.with_eps(eps)?;
        let kinetic = final_density(&sc.with_model(model))?;
        let limit = final_density(&sc.with_model(ModelKind::Diffusion))?;
        let report = relative_difference(&sc.grid, &kinetic, &limit)?;
        rows.push(ConvergenceRow { eps, max_relerr: report.max, mean_relerr: report.mean, report });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fiber_strand_parameters() {
        let sc = build_fiber_strand_scenario(0.25, GridSpec::square(60, 0.0, 3.0).unwrap()).unwrap();
        let s = sc.scaling().unwrap();
        assert!((s.r - 1.0).abs() < 1e-12 && (s.eta - 1.0).abs() < 1e-12);
        assert!((s.eps - 0.25).abs() < 1e-15);
        assert_eq!(sc.solver_config().t_end, 1.0);
        let rho = sc.initial.density(&sc.grid);
        // the square covers exactly the 2x2 cells around (0.5, 1.5)
        let g = sc.grid;
        for (i, j) in [(9, 29), (10, 29), (9, 30), (10, 30)] {
            assert!((rho[g.index(i, j)] - 1.0).abs() < 1e-12);
        }
        assert_eq!(rho[g.index(0, 0)], 1e-4);
        let mass: f64 = rho.iter().map(|r| r - 1e-4).sum::<f64>() * g.cell_area();
        assert!((mass - (1.0 - 1e-4) * 0.01).abs() < 1e-14);
    }

    #[test]
    fn brain_slice_surfaces_strouhal_mismatch() {
        let g = GridSpec::new(10, 10, 50.0, 110.0, 10.0, 10.0).unwrap();
        let mut sc = build_brain_slice_scenario(Path::new("dti.txt"), g).unwrap();
        let w = sc.warnings();
        assert_eq!(w.len(), 1, "{w:?}");
        assert!(w[0].contains("1000"));
        sc.physical.x0 = 100.0;
        assert_eq!(sc.warnings().len(), 1);
        assert!(sc.warnings()[0].contains("differs from the listed"));
    }

    #[test]
    fn convergence_needs_strand_and_positive_eps() {
        let g = GridSpec::square(6, 0.0, 3.0).unwrap();
        let sc = build_fiber_strand_scenario(1.0, g).unwrap();
        assert!(convergence_study(&sc, &[0.5, 0.0], ModelKind::K1F).is_err());
        let bs = build_brain_slice_scenario(Path::new("x"), g).unwrap();
        assert!(bs.with_eps(0.5).is_err());
    }
}
