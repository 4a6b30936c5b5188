use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use moment_glioma::closures::{kershaw_spectrum, ModelKind, MomentVector1};
use moment_glioma::compare::relative_difference;
use moment_glioma::config::read_config;
use moment_glioma::field_io::ScalarField;
use moment_glioma::linalg::Sym3;
use moment_glioma::scenario::{convergence_study, simulate_to_disk};
use moment_glioma::tissue::peanut_pressure_tensor;
use moment_glioma::Error;

#[derive(Parser)]
#[command(name = "moment-glioma", version, about = "Moment models of glioma invasion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write FIELD2D snapshots plus a JSON manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory of the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Pointwise relative difference |a - b| / max|b| as `x,y,relerr` CSV.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Relative difference to the diffusion limit for several eps (fiber strand only).
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        eps: Vec<f64>,
        /// Kinetic model; defaults to the config's model.
        #[arg(long)]
        model: Option<String>,
    },
    /// Eigenvalues of the Kershaw flux Jacobian.
    Spectrum {
        /// Normalized flux q/rho (3 components).
        #[arg(long, value_delimiter = ',', num_args = 1..=3, allow_negative_numbers = true, required = true)]
        qhat: Vec<f64>,
        /// Water tensor `Dxx Dxy Dxz Dyy Dyz Dzz`.
        #[arg(long, value_delimiter = ',', num_args = 1..=6, allow_negative_numbers = true, required = true)]
        dw: Vec<f64>,
        /// Direction (3 components).
        #[arg(long, value_delimiter = ',', num_args = 1..=3, allow_negative_numbers = true, required = true)]
        n: Vec<f64>,
    },
    /// Parse a config and print the resolved parameters without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("MOMENT_GLIOMA_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not configure {n} threads: {e}");
                }
            }
            _ => eprintln!("warning: ignoring MOMENT_GLIOMA_THREADS={v:?}"),
        }
    }
}

fn vec3(v: &[f64], name: &str) -> Result<Vector3<f64>, Error> {
    if v.len() != 3 {
        return Err(Error::InvalidParameter(format!("--{name} needs 3 components, got {}", v.len())));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Simulate { config, out_dir } => {
            let mut sc = read_config(&config)?;
            if let Some(d) = out_dir {
                sc.output_dir = d;
            }
            for w in sc.warnings() {
                eprintln!("warning: {w}");
            }
            let sim = simulate_to_disk(&sc)?;
            for path in &sim.manifest.outputs {
                println!("{path}");
            }
            eprintln!("finished in {:.2} s", sim.manifest.wall_seconds);
        }
        Command::Compare { a, b } => {
            let fa = ScalarField::read(&a)?;
            let fb = ScalarField::read(&b)?;
            if !fa.grid.same_as(&fb.grid) {
                return Err(Error::GridMismatch(format!("{} and {} are on different grids", a.display(), b.display())));
            }
            let rep = relative_difference(&fa.grid, &fa.values, &fb.values)?;
            print!("{}", rep.to_csv());
            eprintln!("max relerr {:.6e}, mean {:.6e}", rep.max, rep.mean);
            for (level, area) in &rep.exceedance {
                eprintln!("area above {level}: {area:.6e}");
            }
        }
        Command::Convergence { config, eps, model } => {
            let sc = read_config(&config)?;
            let model = match model {
                Some(m) => ModelKind::parse(&m)?,
                None => sc.model,
            };
            let rows = convergence_study(&sc, &eps, model)?;
            println!("eps,max_relerr,mean_relerr");
            for r in rows {
                println!("{},{:.6e},{:.6e}", r.eps, r.max_relerr, r.mean_relerr);
            }
        }
        Command::Spectrum { qhat, dw, n } => {
            let q = vec3(&qhat, "qhat")?;
            let n = vec3(&n, "n")?;
            if dw.len() != 6 {
                return Err(Error::InvalidParameter(format!("--dw needs 6 components, got {}", dw.len())));
            }
            if !(n.norm() > 0.0) {
                return Err(Error::InvalidParameter("--n must be nonzero".into()));
            }
            let d = Sym3::new(dw[0], dw[1], dw[2], dw[1], dw[3], dw[4], dw[2], dw[4], dw[5]);
            let m = MomentVector1::new(1.0, q);
            if !m.is_realizable() {
                return Err(Error::InvalidParameter(format!("|qhat| = {} exceeds 1", q.norm())));
            }
            let df = peanut_pressure_tensor(&d)?;
            let rep = kershaw_spectrum(&m, &df, &n.normalize());
            println!("eigenvalues:");
            for l in &rep.eigenvalues {
                println!("  {:.5} {:+.3e}i", l.re, l.im);
            }
            println!("max_imag = {:.3e}", rep.max_imag);
            println!("diagonalizable = {}", rep.diagonalizable);
            println!("min_singular = {:.3e}", rep.min_singular);
            if let Some(a) = rep.analytic {
                println!("closed form (printed) = {:?}, residual {:.3e}", a.printed, a.residual_printed);
                println!("closed form (rederived) = {:?}, residual {:.3e}", a.rederived, a.residual_rederived);
            }
        }
        Command::Validate { config } => {
            let sc = read_config(&config)?;
            let s = sc.scaling()?;
            sc.tissue_fields()?;
            println!("scenario = {} ({})", sc.name, sc.preset.name());
            println!("model = {}", sc.model.name());
            println!("grid = {}x{} cells, dx = {} mm, dy = {} mm", sc.grid.nx, sc.grid.ny, sc.grid.dx, sc.grid.dy);
            println!("eps (St) = {:.6e}", s.eps);
            println!("Kn = {:.6e}", s.kn);
            println!("R = {:.6e}", s.r);
            println!("eta = {:.6e}", s.eta);
            println!("x0 = {} mm, t0 = {} s, c = {} mm/s", s.x0, s.t0, s.c);
            for w in sc.warnings() {
                println!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
