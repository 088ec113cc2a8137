use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use smallphase::criteria::{self, FrequencyGrid, SweepOptions};
use smallphase::scenario::Scenario;
use smallphase::transforms::FrameKind;
use smallphase::verify::{self, VerifyOptions};
use smallphase::Error;

const EXIT_NOT_CERTIFIED: u8 = 2;
const EXIT_ERROR: u8 = 1;

#[derive(Parser)]
#[command(name = "smallphase", version, about = "Decentralized small-phase/small-gain certification for grid-forming converters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the open-loop check and the frequency sweep; writes report.json and sweep.csv.
    Certify(ScenarioArgs),
    /// Frequency sweep without the open-loop precondition; writes sweep.csv.
    Sweep(ScenarioArgs),
    /// Eigenvalues of the closed loop; writes eig.csv.
    Eig(ScenarioArgs),
    /// Randomized checks of the structural properties the certificate relies on.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Frame {
    Rectangular,
    PowerPolar,
    Blended,
    NaiveBlended,
}

impl From<Frame> for FrameKind {
    fn from(f: Frame) -> Self {
        match f {
            Frame::Rectangular => FrameKind::Rectangular,
            Frame::PowerPolar => FrameKind::PowerPolar,
            Frame::Blended => FrameKind::Blended,
            Frame::NaiveBlended => FrameKind::NaiveBlended,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(value_name = "CONFIG", required_unless_present = "config", conflicts_with = "config")]
    path: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the frame kind from the scenario.
    #[arg(long, value_enum)]
    frame: Option<Frame>,
    /// Blending cutoff in Hz.
    #[arg(long)]
    wc: Option<f64>,
    /// `log:<fmin>:<fmax>:<n>` or a comma-separated list of Hz values.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    refine: Option<bool>,
    #[arg(long, env = "SMALLPHASE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

impl ScenarioArgs {
    fn config_path(&self) -> &Path {
        self.path.as_deref().or(self.config.as_deref()).expect("clap enforces one of the two")
    }

    fn load(&self) -> smallphase::Result<Scenario> {
        let mut sc = Scenario::load(self.config_path())?;
        if let Some(g) = &self.grid {
            sc.grid = FrequencyGrid::parse(g)?;
        }
        if let Some(r) = self.refine {
            sc.config.grid.refine = r;
        }
        Ok(sc)
    }

    fn options(&self, sc: &Scenario) -> SweepOptions {
        SweepOptions { refine: self.refine.unwrap_or(sc.config.grid.refine) }
    }

    fn write(&self, name: &str, contents: &str) -> smallphase::Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

fn certify(args: &ScenarioArgs) -> smallphase::Result<u8> {
    let sc = args.load()?;
    let t = sc.transform_set(args.frame.map(Into::into), args.wc)?;
    let report = criteria::certify(&sc.interconnection, &t, &sc.grid, args.options(&sc))?;
    args.write("report.json", &report.to_json()?)?;
    let csv = args.write("sweep.csv", &criteria::sweep_csv(&report.verdicts, &report.converter_buses, report.frame))?;
    let failing: Vec<_> = report.failing().collect();
    println!("scenario {}: frame {}, {} frequencies", sc.name, report.frame.label(), report.verdicts.len());
    if report.certified {
        println!("certified: small-phase/small-gain condition holds at every grid frequency");
        return Ok(0);
    }
    let (lo, hi) = (failing[0].hz, failing[failing.len() - 1].hz);
    println!("not certified: {} failing frequencies in [{lo:.4}, {hi:.4}] Hz (inconclusive about instability)", failing.len());
    if let Some(worst) = failing.iter().min_by(|a, b| a.margin().total_cmp(&b.margin())) {
        if let Some(b) = worst.limiting_converter {
            println!("limiting converter at the worst frequency ({:.4} Hz): bus {b}", worst.hz);
        }
    }
    println!("details: {}", csv.display());
    Ok(EXIT_NOT_CERTIFIED)
}

fn sweep(args: &ScenarioArgs) -> smallphase::Result<u8> {
    let sc = args.load()?;
    let t = sc.transform_set(args.frame.map(Into::into), args.wc)?;
    let verdicts = criteria::sweep(&sc.interconnection, &t, &sc.grid, args.options(&sc))?;
    let path = args.write("sweep.csv", &criteria::sweep_csv(&verdicts, &sc.interconnection.bus_ids, t.kind))?;
    let failing = verdicts.iter().filter(|v| !v.satisfied).count();
    println!("{} frequencies, {failing} failing; wrote {}", verdicts.len(), path.display());
    Ok(0)
}

fn eig(args: &ScenarioArgs) -> smallphase::Result<u8> {
    let sc = args.load()?;
    let gt = sc.ground_truth()?;
    let path = args.write("eig.csv", &criteria::eig_csv(&gt))?;
    match gt.rightmost {
        Some((re, im)) => println!(
            "{}: rightmost eigenvalue {re:.6} {:+.6}j ({:.4} Hz); wrote {}",
            if gt.stable { "stable" } else { "unstable" },
            im,
            im.abs() / (2.0 * std::f64::consts::PI),
            path.display()
        ),
        None => println!("no states; wrote {}", path.display()),
    }
    Ok(0)
}

fn run_verify(seed: u64, trials: usize) -> smallphase::Result<u8> {
    let results = verify::run_all(VerifyOptions { seed, trials })?;
    let mut all = true;
    for r in &results {
        all &= r.passed();
        println!(
            "{} {:<28} trials {:>6}  failures {:>4}  worst {:.3e}  tol {:.0e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.trials,
            r.failures,
            r.worst,
            r.tolerance
        );
        if let Some(f) = &r.first_failure {
            println!("     first failure: {f}");
        }
    }
    Ok(if all { 0 } else { EXIT_NOT_CERTIFIED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify(a) => certify(a),
        Command::Sweep(a) => sweep(a),
        Command::Eig(a) => eig(a),
        Command::Verify { seed, trials } => run_verify(*seed, *trials),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Error::OpenLoopUnstable(msg)) => {
            eprintln!("certificate inapplicable: transformed open loop is unstable ({msg})");
            ExitCode::from(EXIT_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
