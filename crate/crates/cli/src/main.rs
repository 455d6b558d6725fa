use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atomflow::capacity::{capacity_rate_audit, AuditFamily};
use atomflow::counterexample::{counterexample_measure, lifting_obstruction_audit, lipschitz_audit, MAX_DEPTH};
use atomflow::cylinder::{catalog_rng, random_cylinder, FunctionalSpec, GenCylinderFn};
use atomflow::dynamics::{ce_residual, evolve_ensemble, Lifting, NonLocalField, TimeWeight};
use atomflow::error::Error;
use atomflow::io::{self, FORMAT_VERSION};
use atomflow::manifold::{circle_heat_check, manifold_capacity_audit, ManifoldKind};
use atomflow::measures::{AtomicMeasure, MeasureCurve};
use atomflow::sampling::{sample_measure_indexed, verify_barycenter_identity, BaseLaw, RandomMeasureLaw, WeightLaw};
use atomflow::superposition::{reconstruct_lifting, verify_lifting, weight_spectrum_audit, SpectrumAudit};
use atomflow::transport::{atomic_metric, default_eps_grid, wasserstein_inf, wasserstein_p, Profile};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

/// Atomic measures, particle dynamics and liftings on Wasserstein spaces.
#[derive(Debug, Parser, Serialize)]
#[command(name = "atomflow", version)]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, env = "ATOMFLOW_SEED", default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Draw measures from a random-measure law.
    Sample(SampleArgs),
    /// Distance between two measure files.
    Dist(DistArgs),
    /// Evolve an ensemble under a non-local field.
    Simulate(SimulateArgs),
    /// Reconstruct a lifting from a measure curve.
    Lift(LiftArgs),
    /// The branching counterexample and its audits.
    Counterexample(CounterexampleArgs),
    /// Diagonal capacity sweep in flat space.
    Capacity(CapacityArgs),
    /// Heat semigroup check on the circle.
    Heat(HeatArgs),
    /// Capacity sweep on the circle or the sphere.
    ManifoldCapacity(ManifoldCapacityArgs),
    /// Check a lifting or the barycenter identities.
    #[command(subcommand)]
    Verify(VerifyCommand),
}

#[derive(Debug, Args, Serialize)]
struct LawArgs {
    /// Weight law (`poisson:1`, `stick:2`, `fixed:0.5,0.5`, `uniform:3`) or a law JSON file.
    #[arg(long)]
    law: String,
    /// Base law (`box:d`, `gaussian:d`, `circle`, `sphere`); ignored for a law file.
    #[arg(long, default_value = "box:1")]
    base: String,
}

#[derive(Debug, Args, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long, default_value_t = 1)]
    n: usize,
}

#[derive(Debug, Args, Serialize)]
struct DistArgs {
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Bottleneck distance instead of `W_p`.
    #[arg(long, conflicts_with = "atomic")]
    inf: bool,
    /// Atomic metric `D_{p,psi}`.
    #[arg(long)]
    atomic: bool,
    /// Profile for the atomic metric: `tent` or `exp`.
    #[arg(long, default_value = "tent")]
    psi: String,
    /// Comma-separated grid in (0,1) for the atomic metric.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    /// Include the optimal plan.
    #[arg(long)]
    plan: bool,
    a: PathBuf,
    b: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    law: LawArgs,
    /// Field JSON (inline or file).
    #[arg(long)]
    field: String,
    /// Final time.
    #[arg(long = "T", visible_alias = "t-end", default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Ensemble size.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Test functional JSON; a seeded catalog is used when absent.
    #[arg(long = "fn")]
    test_fn: Option<String>,
    /// Catalog size when no functional is given.
    #[arg(long, default_value_t = 4)]
    n_test: usize,
}

#[derive(Debug, Args, Serialize)]
struct LiftArgs {
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    field: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Relative tolerance for grouping weights into classes.
    #[arg(long, default_value_t = atomflow::superposition::SPECTRUM_TOL)]
    tol: f64,
}

#[derive(Debug, Args, Serialize)]
struct CounterexampleArgs {
    /// Time at which to emit the measure.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long)]
    distorted: bool,
    /// `lipschitz` or `obstruction`.
    #[arg(long)]
    audit: Option<String>,
    /// Pairs for the Lipschitz audit.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
}

#[derive(Debug, Args, Serialize)]
struct CapacityArgs {
    #[arg(long, default_value = "box:2")]
    base: String,
    /// `log` (outer radius `sqrt(eps)`) or `mollified`.
    #[arg(long, default_value = "log")]
    family: String,
    /// Integrability exponent; defaults to the dimension.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    eps_sweep: Vec<f64>,
    /// Monte Carlo samples per row.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
}

#[derive(Debug, Args, Serialize)]
struct HeatArgs {
    /// Generalized cylinder functional JSON.
    #[arg(long = "fn")]
    test_fn: String,
    /// Measure on the circle in ambient coordinates.
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
}

#[derive(Debug, Args, Serialize)]
struct ManifoldCapacityArgs {
    /// `circle` or `sphere`.
    #[arg(long, default_value = "sphere")]
    kind: String,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    eps_sweep: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
enum VerifyCommand {
    /// Marginal and ODE errors of a lifting against a curve.
    Lifting {
        #[arg(long)]
        lifting: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        field: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// First- and second-order barycenter identities of a law.
    Barycenter {
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Usage(s) => f.write_str(s),
        }
    }
}

type Run<T> = std::result::Result<T, Failure>;

/// Named output documents of a run, in emission order.
#[derive(Default)]
struct Outputs(Vec<(String, String)>);

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, kind: &str, data: &T) -> Run<()> {
        self.0.push((format!("{name}.json"), io::to_string(kind, data)?));
        Ok(())
    }

    fn csv(&mut self, name: &str, body: String) {
        self.0.push((
            format!("{name}.csv"),
            format!("# format_version={FORMAT_VERSION}\n{body}"),
        ));
    }
}

/// Inline JSON, a JSON file, or (for laws) a shorthand handled by the caller.
fn read_doc<T: serde::de::DeserializeOwned>(arg: &str, kind: &str) -> Run<T> {
    if arg.trim_start().starts_with('{') {
        return Ok(io::from_str(kind, arg)?);
    }
    Ok(io::load(Path::new(arg), kind)?)
}

fn read_field(arg: &str) -> Run<NonLocalField> {
    if arg == "zero" {
        return Ok(NonLocalField::Zero);
    }
    read_doc(arg, "field")
}

fn resolve_law(args: &LawArgs) -> Run<RandomMeasureLaw> {
    let law = if args.law.trim_start().starts_with('{') || Path::new(&args.law).is_file() {
        read_doc(&args.law, "law")?
    } else {
        let weights: WeightLaw = args.law.parse()?;
        RandomMeasureLaw::new(weights, parse_base(&args.base)?)
    };
    law.validate()?;
    Ok(law)
}

fn parse_base(s: &str) -> Run<BaseLaw> {
    if s.trim_start().starts_with('{') || Path::new(s).is_file() {
        return read_doc(s, "base");
    }
    Ok(s.parse()?)
}

fn run(cli: &Cli) -> Run<Outputs> {
    let seed = cli.seed;
    let mut out = Outputs::default();
    match &cli.command {
        Command::Sample(a) => {
            let law = resolve_law(&a.law)?;
            for i in 0..a.n {
                let mu = sample_measure_indexed(&law, seed, i as u64)?;
                out.json(&format!("measure_{i:04}"), "measure", &mu)?;
            }
        }
        Command::Dist(a) => {
            let mu: AtomicMeasure = io::load(&a.a, "measure")?;
            let nu: AtomicMeasure = io::load(&a.b, "measure")?;
            let doc = if a.atomic {
                let psi: Profile = a.psi.parse()?;
                let grid = a.eps_grid.clone().unwrap_or_else(default_eps_grid);
                let d = atomic_metric(&mu, &nu, a.p, psi, &grid)?;
                json!({ "distance": d.distance, "wasserstein": d.wasserstein, "sup_term": d.sup_term, "argmax_eps": d.argmax_eps })
            } else {
                let t = if a.inf {
                    wasserstein_inf(&mu, &nu)?
                } else {
                    wasserstein_p(&mu, &nu, a.p)?
                };
                if a.plan {
                    json!({ "distance": t.distance, "plan": t.plan })
                } else {
                    json!({ "distance": t.distance })
                }
            };
            out.json("distance", "distance", &doc)?;
        }
        Command::Simulate(a) => simulate(a, seed, &mut out)?,
        Command::Lift(a) => {
            let curve: MeasureCurve = io::load(&a.curve, "curve")?;
            let field = a.field.as_deref().map(read_field).transpose()?;
            if let SpectrumAudit::Rejected(r) = weight_spectrum_audit(&curve, a.tol) {
                return Err(Error::SpectrumRejected {
                    from: r.from,
                    to: r.to,
                    reason: r.reason,
                }
                .into());
            }
            let (lifting, recon) = reconstruct_lifting(&curve, field.as_ref(), a.p)?;
            let check = verify_lifting(&lifting, &curve, field.as_ref(), a.p)?;
            out.json("lifting", "lifting", &lifting)?;
            out.json(
                "report",
                "lift_report",
                &json!({ "reconstruction": recon, "verification": check }),
            )?;
        }
        Command::Counterexample(a) => match (a.audit.as_deref(), a.t) {
            (Some("lipschitz"), _) => out.json(
                "lipschitz",
                "lipschitz_report",
                &lipschitz_audit(a.pairs, seed, a.distorted, a.depth)?,
            )?,
            (Some("obstruction"), _) => out.json(
                "obstruction",
                "obstruction_report",
                &lifting_obstruction_audit(a.depth)?,
            )?,
            (Some(other), _) => {
                return Err(Failure::Usage(format!(
                    "unknown audit {other:?}; use lipschitz or obstruction"
                )))
            }
            (None, Some(t)) => out.json(
                "measure",
                "measure",
                &counterexample_measure(t, a.distorted, a.depth.min(MAX_DEPTH))?,
            )?,
            (None, None) => return Err(Failure::Usage("counterexample needs --t or --audit".into())),
        },
        Command::Capacity(a) => {
            let base = parse_base(&a.base)?;
            let family: AuditFamily = a.family.parse()?;
            let r = a.r.unwrap_or(base.dim() as f64);
            let audit = capacity_rate_audit(&base, r, family, &a.eps_sweep, a.n, seed)?;
            let mut body = String::from("epsilon,R,value,stderr,bound\n");
            for row in &audit.rows {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{}",
                    row.eps, row.r_outer, row.value.mean, row.value.stderr, row.bound
                );
            }
            out.csv("capacity", body);
        }
        Command::Heat(a) => {
            let f: GenCylinderFn = read_doc(&a.test_fn, "functional")?;
            let mu: AtomicMeasure = io::load(&a.measure, "measure")?;
            out.json("heat", "heat_report", &circle_heat_check(&f, &mu, a.t, a.n, seed)?)?;
        }
        Command::ManifoldCapacity(a) => {
            let kind: ManifoldKind = a.kind.parse()?;
            let report = manifold_capacity_audit(kind, &a.eps_sweep, a.n, seed)?;
            let mut body = String::from("epsilon,R,value,stderr,predicted_scale\n");
            for row in &report.rows {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{}",
                    row.eps, row.r_outer, row.value.mean, row.value.stderr, row.predicted_scale
                );
            }
            out.csv("manifold_capacity", body);
            out.json("manifold_capacity", "manifold_capacity_report", &report)?;
        }
        Command::Verify(VerifyCommand::Lifting {
            lifting,
            curve,
            field,
            p,
        }) => {
            let lambda: Lifting = io::load(lifting, "lifting")?;
            let curve: MeasureCurve = io::load(curve, "curve")?;
            let field = field.as_deref().map(read_field).transpose()?;
            out.json(
                "verify",
                "lifting_report",
                &verify_lifting(&lambda, &curve, field.as_ref(), *p)?,
            )?;
        }
        Command::Verify(VerifyCommand::Barycenter { law, n }) => {
            let law = resolve_law(law)?;
            let f = |x: &[f64]| x.iter().sum::<f64>().cos();
            let g = |x: &[f64], y: &[f64]| (-x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).exp();
            out.json(
                "barycenter",
                "barycenter_report",
                &verify_barycenter_identity(&law, f, g, *n, seed)?,
            )?;
        }
    }
    Ok(out)
}

fn simulate(a: &SimulateArgs, seed: u64, out: &mut Outputs) -> Run<()> {
    let law = resolve_law(&a.law)?;
    let field = read_field(&a.field)?;
    let d = law.dim();
    let tests: Vec<(String, FunctionalSpec)> = match &a.test_fn {
        Some(s) => vec![("fn".into(), read_doc(s, "functional")?)],
        None => (0..a.n_test as u64)
            .map(|j| {
                (
                    format!("catalog-{j}"),
                    FunctionalSpec::Cylinder(random_cylinder(&mut catalog_rng(seed, j), d)),
                )
            })
            .collect(),
    };
    let (curves, liftings) = evolve_ensemble(&law, &field, a.n, a.t_end, a.dt, seed)?;
    let weights = [
        TimeWeight::Polynomial {
            start: 0.1 * a.t_end,
            end: 0.9 * a.t_end,
        },
        TimeWeight::Bump {
            start: 0.1 * a.t_end,
            end: 0.9 * a.t_end,
        },
    ];
    let mut body = String::from("test_fn,xi,residual,grid_step\n");
    for (id, f) in &tests {
        for xi in &weights {
            let mut worst = 0.0f64;
            let mut step = 0.0f64;
            for c in &curves.members {
                let r = ce_residual(c, &field, f, xi)?;
                worst = worst.max(r.residual);
                step = r.grid_step;
            }
            let _ = writeln!(body, "{id},{},{worst},{step}", xi.id());
        }
    }
    for (i, (c, l)) in curves.members.iter().zip(&liftings.members).enumerate() {
        out.json(&format!("curve_{i:04}"), "curve", c)?;
        out.json(&format!("lifting_{i:04}"), "lifting", l)?;
    }
    if !tests.is_empty() {
        out.csv("residuals", body);
    }
    Ok(())
}

fn emit(cli: &Cli, outputs: &Outputs) -> std::io::Result<()> {
    let manifest = json!({
        "format_version": FORMAT_VERSION,
        "document": "manifest",
        "config": cli,
        "files": outputs.0.iter().map(|(n, _)| n).collect::<Vec<_>>(),
    });
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for (name, body) in &outputs.0 {
                std::fs::write(dir.join(name), body)?;
            }
            let mut m = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
            m.push('\n');
            std::fs::write(dir.join("manifest.json"), m)
        }
        None => {
            for (_, body) in &outputs.0 {
                print!("{body}");
            }
            eprintln!("{manifest}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(outputs) => match emit(&cli, &outputs) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
