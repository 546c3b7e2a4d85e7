use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cmsbm::families::{enumerate_cycles, enumerate_paths, FamilyWeights};
use cmsbm::harness::{emit_plots, run_experiment, ExperimentPlan};
use cmsbm::io::{load_observation, load_params, save_observation, to_json, write_matrix, MAGIC_PHI};
use cmsbm::model::{sample, ModelParams, Observation, Provenance};
use cmsbm::rounding::{metrics, psd_project, sign_round, MetricInput, ProjectionConfig};
use cmsbm::statistics::{detection_statistic, recovery_matrix, Backend, StatisticConfig};
use cmsbm::thresholds::{chi2_surrogate, interaction_matrix, sigma_plus, threshold_f, FVariant};
use cmsbm::verify::verify_suite;

#[derive(Parser)]
#[command(name = "cmsbm", version, about = "Contextual multi-layer SBM toolkit")]
struct Cli {
    /// Worker threads; falls back to CMSBM_THREADS, then to the core count.
    #[arg(long, global = true, env = "CMSBM_THREADS")]
    threads: Option<usize>,
    /// Cap on estimated operations for one statistic.
    #[arg(long, global = true)]
    budget: Option<f64>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw an observation and write it to a directory.
    Sample {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw from the null model instead of the planted one.
        #[arg(long)]
        null: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold quantities for a parameter file.
    Threshold {
        #[arg(long)]
        params: PathBuf,
    },
    /// Color-word classes of a decorated family, as CSV.
    Families {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 4)]
        aleph: usize,
        #[arg(long, value_enum, default_value_t = TopologyArg::Cycle)]
        topology: TopologyArg,
    },
    /// Detection statistic and test decision.
    Detect {
        #[command(flatten)]
        input: StatInput,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
    },
    /// Recovery matrix, optionally projected and rounded.
    Recover {
        #[command(flatten)]
        input: StatInput,
        /// Output directory for phi.bin and, with --floor, phi_hat.bin and diagnostics.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long, requires = "floor")]
        round_seed: Option<u64>,
    },
    /// Run an experiment plan.
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Check every fast path against its oracle.
    Verify {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

#[derive(Args)]
struct StatInput {
    /// Parameter file; a planted observation is drawn from it with --seed.
    #[arg(long, required_unless_present = "obs", conflicts_with = "obs")]
    params: Option<PathBuf>,
    /// Observation directory written by `sample`.
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    aleph: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Transfer)]
    backend: BackendArg,
    /// Restrict the family to these colors, e.g. `0,2`.
    #[arg(long, value_delimiter = ',')]
    colors: Option<Vec<u8>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Transfer,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Cycle,
    Path,
}

struct Failure {
    message: String,
    remedy: &'static str,
}

fn fail<E: Display>(remedy: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure {
        message: e.to_string(),
        remedy,
    }
}

const CHECK_PARAMS: &str = "check the parameter file against the model constraints";
const CHECK_PATH: &str = "check that the path exists and is writable";

impl StatInput {
    fn load(&self) -> Result<(ModelParams, Observation), Failure> {
        if let Some(dir) = &self.obs {
            return load_observation(dir).map_err(fail("point --obs at a directory written by `cmsbm sample`"));
        }
        let params = load_params(self.params.as_deref().unwrap()).map_err(fail(CHECK_PARAMS))?;
        let obs = sample(&params, self.seed, Provenance::Planted).map_err(fail(CHECK_PARAMS))?;
        Ok((params, obs))
    }

    fn config(&self, budget: Option<f64>) -> StatisticConfig {
        let backend = match self.backend {
            BackendArg::Exact => Backend::ExactEnumeration,
            BackendArg::Transfer => Backend::TransferApprox,
        };
        let mut cfg = StatisticConfig::new(self.aleph, backend);
        cfg.colors = self.colors.clone();
        if let Some(b) = budget {
            cfg.op_budget = b;
        }
        cfg
    }
}

const STAT_REMEDY: &str = "lower --aleph, raise --budget or switch --backend";

fn families_csv(w: &FamilyWeights) -> String {
    let mut s = String::from("topology,canonical_word,aut,dif0,dif");
    for l in 0..=w.layers {
        s.push_str(&format!(",c{l}"));
    }
    s.push_str(",xi\n");
    for c in &w.classes {
        s.push_str(&format!("{},{},{},{},{}", w.topology.name(), c.word.render(), c.aut, c.dif0, c.dif));
        for k in &c.counts {
            s.push_str(&format!(",{k}"));
        }
        s.push_str(&format!(",{}\n", c.xi));
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(fail(CHECK_PATH))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Sample { params, seed, null, out } => {
            let p = load_params(&params).map_err(fail(CHECK_PARAMS))?;
            let prov = if null { Provenance::Null } else { Provenance::Planted };
            let obs = sample(&p, seed, prov).map_err(fail(CHECK_PARAMS))?;
            save_observation(&out, &p, &obs).map_err(fail(CHECK_PATH))?;
            print!("{}", to_json(&json!({"out": out, "n": p.n, "p": p.p, "layers": p.layers()})));
        }
        Command::Threshold { params } => {
            let p = load_params(&params).map_err(fail(CHECK_PARAMS))?;
            let f_intro = threshold_f(&p, FVariant::Intro);
            let sp = sigma_plus(&interaction_matrix(&p)).map_err(fail("report the parameters; the eigensolve failed"))?;
            let chi = chi2_surrogate(&p, 0.0).value;
            print!(
                "{}",
                to_json(&json!({
                    "F_intro": f_intro,
                    "F_sec3": threshold_f(&p, FVariant::SectionThree),
                    "sigma_plus": sp,
                    "chi2_surrogate_t0": if chi.is_finite() { json!(chi) } else { json!("inf") },
                    "feasible_detection": f_intro > 1.0,
                }))
            );
        }
        Command::Families { params, aleph, topology } => {
            let p = load_params(&params).map_err(fail(CHECK_PARAMS))?;
            let w = match topology {
                TopologyArg::Cycle => enumerate_cycles(aleph, &p),
                TopologyArg::Path => enumerate_paths(aleph, &p, true),
            }
            .map_err(fail("cycles need --aleph >= 3; lower --aleph if the word count is too large"))?;
            print!("{}", families_csv(&w));
        }
        Command::Detect { input, c } => {
            let (params, obs) = input.load()?;
            let mut cfg = input.config(cli.budget);
            cfg.threshold_c = c;
            let r = detection_statistic(&obs, &params, &cfg).map_err(fail(STAT_REMEDY))?;
            print!(
                "{}",
                to_json(&json!({
                    "value": r.value,
                    "beta": r.beta,
                    "tau": r.tau,
                    "decision": r.decision,
                    "elapsed": r.elapsed,
                }))
            );
        }
        Command::Recover { input, out, floor, round_seed } => {
            let (params, obs) = input.load()?;
            let r = recovery_matrix(&obs, &params, &input.config(cli.budget)).map_err(fail(STAT_REMEDY))?;
            let phi = r.matrix.expect("recovery reports carry a matrix");
            fs::create_dir_all(&out).map_err(fail(CHECK_PATH))?;
            write_matrix(&out.join("phi.bin"), &phi, MAGIC_PHI).map_err(fail(CHECK_PATH))?;
            let mut summary = json!({
                "phi": out.join("phi.bin"),
                "beta": r.beta,
                "elapsed": r.elapsed,
            });
            if let Some(t) = floor {
                let cfg = ProjectionConfig {
                    correlation_floor: t,
                    ..Default::default()
                };
                let mut est = psd_project(&phi, &cfg).map_err(fail("lower --floor"))?;
                if let Some(s) = round_seed {
                    est.x_hat = Some(sign_round(&est, s));
                }
                write_matrix(&out.join("phi_hat.bin"), &est.phi_hat, MAGIC_PHI).map_err(fail(CHECK_PATH))?;
                let truth = obs.truth.as_ref();
                let cos = metrics(MetricInput::Matrix(&est.phi_hat), truth).ok().and_then(|m| m.cosine);
                let ov = est
                    .x_hat
                    .as_deref()
                    .and_then(|x| metrics(MetricInput::Signs(x), truth).ok())
                    .and_then(|m| m.overlap);
                let sidecar = json!({
                    "diagnostics": est.diagnostics,
                    "x_hat": est.x_hat,
                    "cosine": cos,
                    "overlap": ov,
                });
                write(&out.join("diagnostics.json"), &to_json(&sidecar))?;
                summary["phi_hat"] = json!(out.join("phi_hat.bin"));
                summary["diagnostics"] = json!(out.join("diagnostics.json"));
            }
            print!("{}", to_json(&summary));
        }
        Command::Experiment { plan, out, plots } => {
            let plan = ExperimentPlan::load(&plan).map_err(fail("fix the plan file"))?;
            let output = run_experiment(&plan).map_err(fail("fix the plan file"))?;
            output.write(&out).map_err(fail(CHECK_PATH))?;
            if plots {
                for (name, svg) in emit_plots(&output.csv()).map_err(fail("rerun the experiment"))? {
                    write(&out.join(name), &svg)?;
                }
            }
            print!("{}", to_json(&output.summary));
        }
        Command::Verify { seeds } => {
            let report = verify_suite(seeds);
            print!("{}", to_json(&report));
            if !report.passed {
                return Ok(2);
            }
        }
    }
    Ok(0)
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
    env_logger::Builder::new().filter_level(cli.log_level).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already set: {e}");
        }
    }
    if cli.budget.is_some_and(|b| !(b > 0.0)) {
        eprintln!("error: --budget must be positive");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}\nhint: {}", f.message, f.remedy);
            ExitCode::from(1)
        }
    }
}
