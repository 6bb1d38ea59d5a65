use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pptune::harness::output::{laps_csv, summary_csv, summary_table, sweep_table, to_csv, write_atomic};
use pptune::harness::{
    evaluate, select_g0, sweep_controller, train, BuildContext, ControllerSpec, LapReport, RunConfig, SweepResult,
    TrainMode,
};
use pptune::ppo::{Agent, LrSchedule, PpoError, TrainEvent};
use pptune::raceline::Raceline;
use pptune::vehicle::SimConfig;

#[derive(Parser)]
#[command(name = "pptune", version, about = "Learned Pure Pursuit tuning for raceline tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a PPO policy, then evaluate it on the evaluation track.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "linear")]
        lr_schedule: LrSchedule,
        #[arg(long, default_value = "joint")]
        mode: TrainMode,
        /// Overrides the configured number of environment steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the configured controller for the configured number of laps.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured speed multiplier.
        #[arg(long)]
        multiplier: Option<f64>,
    },
    /// Sweep every configured controller and report each at its best multiplier.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the speed multiplier for the configured controller.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

struct Session {
    config: RunConfig,
    base: PathBuf,
    out: PathBuf,
    sim: SimConfig,
}

impl Session {
    fn open(common: &Common) -> Result<Self> {
        let (mut config, base) = match &common.config {
            Some(path) => {
                let cfg = RunConfig::load(path)?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        Ok(Self { config, base, out: common.out.clone(), sim: SimConfig::default() })
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        write_atomic(&self.out.join(name), contents.as_ref())?;
        Ok(())
    }

    fn track(&self) -> Result<Raceline> {
        Ok(self.config.track.load(&self.base)?)
    }

    fn train_track(&self) -> Result<Raceline> {
        Ok(self.config.train_track.load(&self.base)?)
    }

    /// The configured g0, or the validation winner on the training track.
    fn g0(&self, report: &mut String) -> Result<f64> {
        if let Some(g) = self.config.g0 {
            let _ = writeln!(report, "g0: {g} (configured)");
            return Ok(g);
        }
        let track = self.train_track()?;
        let (g, reports) = select_g0(&track, &self.config.g0_candidates, &self.sim, &self.config.laps)?;
        let _ = writeln!(report, "g0: {g} (validated over {:?})", self.config.g0_candidates);
        for (c, r) in self.config.g0_candidates.iter().zip(&reports) {
            let _ = writeln!(report, "  g={c:.2}  {}/{} laps  mean {:.3}", r.completed, r.attempted, r.stats.mean);
        }
        Ok(g)
    }

    fn context(&self, g0: f64) -> BuildContext {
        self.config.build_context(g0)
    }
}

fn run_train(common: &Common, schedule: LrSchedule, mode: TrainMode, steps: Option<usize>) -> Result<()> {
    let mut s = Session::open(common)?;
    s.config.train.mode = mode;
    s.config = s.config.with_schedule(schedule);
    if let Some(n) = steps {
        s.config.train.ppo.total_steps = n;
    }
    s.config.validate()?;
    s.write("config.toml", s.config.to_toml())?;

    let mut report = String::new();
    let g0 = s.g0(&mut report)?;
    let train_track = s.train_track()?;
    let out = s.out.clone();
    let save = |name: String, json: String| {
        write_atomic(&out.join(name), json.as_bytes()).map_err(|e| PpoError::Checkpoint(e.to_string()))
    };
    let mut sink = |event: &TrainEvent| match event {
        TrainEvent::Checkpoint(c) => save(format!("ckpt_{}.json", c.step), c.to_json()),
        TrainEvent::Best(c) => save("best.json".into(), c.to_json()),
        TrainEvent::Eval(e) => {
            eprintln!("step {:>8}  eval return {:>9.2}  |L-L*| {:.4}", e.step, e.mean_return, e.lookahead_gap);
            Ok(())
        }
        TrainEvent::Update(_) => Ok(()),
    };
    let summary = train(&s.config, train_track, g0, &mut sink)?;
    s.write("final.json", summary.final_agent.checkpoint(summary.steps).to_json())?;
    s.write("metrics.csv", to_csv(&summary.metrics)?)?;
    s.write("evals.csv", to_csv(&summary.evals)?)?;

    let mode_name = match mode {
        TrainMode::Joint => "joint",
        TrainMode::LdOnly => "ld-only",
    };
    let _ = writeln!(report, "mode: {mode_name}  schedule: {schedule}  seed: {}", s.config.seed);
    let _ = writeln!(
        report,
        "updates: {}  steps: {}  best eval return: {:.3}",
        summary.updates, summary.steps, summary.best_return
    );
    if let (Some(first), Some(last)) = (summary.evals.first(), summary.evals.last()) {
        let _ = writeln!(report, "|L-L*| first eval {:.4}, last eval {:.4}", first.lookahead_gap, last.lookahead_gap);
    }
    let spec = match mode {
        TrainMode::Joint => ControllerSpec::RlJoint { checkpoint: out.join("final.json") },
        TrainMode::LdOnly => ControllerSpec::RlLdOnly { checkpoint: out.join("final.json") },
    };
    let lap_report = eval_and_write(&s, &spec, Some(&summary.final_agent), s.config.multiplier, g0)?;
    let _ = writeln!(report, "\n{}", summary_table(&[&lap_report]));
    s.write("report.txt", &report)?;
    print!("{report}");
    Ok(())
}

fn eval_and_write(
    s: &Session,
    spec: &ControllerSpec,
    agent: Option<&Agent>,
    multiplier: f64,
    g0: f64,
) -> Result<LapReport> {
    let track = s.track()?;
    let (report, trace) = evaluate(spec, agent, &track, multiplier, &s.sim, &s.config.laps, &s.context(g0))?;
    s.write("laps.csv", laps_csv(&[&report])?)?;
    s.write("trace.csv", to_csv(&trace)?)?;
    Ok(report)
}

fn run_eval(common: &Common, multiplier: Option<f64>) -> Result<()> {
    let mut s = Session::open(common)?;
    if let Some(m) = multiplier {
        s.config.multiplier = m;
    }
    s.config.validate()?;
    let mut report = String::new();
    let g0 = s.g0(&mut report)?;
    let spec = s.config.controller.clone();
    let r = eval_and_write(&s, &spec, None, s.config.multiplier, g0)?;
    s.write("metrics.csv", summary_csv(&[&r])?)?;
    let _ = writeln!(report, "\n{}", summary_table(&[&r]));
    s.write("report.txt", &report)?;
    print!("{report}");
    if r.completed == 0 {
        bail!("{} completed no laps", r.controller);
    }
    Ok(())
}

fn sweep_one(s: &Session, spec: &ControllerSpec, g0: f64) -> Result<SweepResult> {
    let track = s.track()?;
    Ok(sweep_controller(spec, None, &track, &s.config.sweep, &s.sim, &s.config.laps, &s.context(g0))?)
}

fn run_sweep(common: &Common) -> Result<()> {
    let s = Session::open(common)?;
    let mut report = String::new();
    let g0 = s.g0(&mut report)?;
    let spec = s.config.controller.clone();
    let result = sweep_one(&s, &spec, g0)?;
    let entries: Vec<&LapReport> = result.entries.iter().collect();
    s.write("metrics.csv", summary_csv(&entries)?)?;
    s.write("laps.csv", laps_csv(&entries)?)?;
    let track = s.track()?;
    let (_, trace) = evaluate(&spec, None, &track, result.best, &s.sim, &s.config.laps, &s.context(g0))?;
    s.write("trace.csv", to_csv(&trace)?)?;
    let _ = writeln!(report, "\n{}", sweep_table(&result));
    s.write("report.txt", &report)?;
    print!("{report}");
    Ok(())
}

fn run_compare(common: &Common) -> Result<()> {
    let s = Session::open(common)?;
    let specs = if s.config.controllers.is_empty() {
        vec![
            ControllerSpec::FixedPp { lookahead: 1.5, gain: 0.9 },
            ControllerSpec::AdaptivePp { v_lo: None, v_hi: None, gain: None },
            ControllerSpec::TeacherPp,
            ControllerSpec::Mpc,
        ]
    } else {
        s.config.controllers.clone()
    };
    let mut report = String::new();
    let g0 = s.g0(&mut report)?;
    let track = s.track()?;
    let mut results = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        eprintln!("sweeping {}", spec.label());
        let result = sweep_one(&s, spec, g0)?;
        let (_, trace) = evaluate(spec, None, &track, result.best, &s.sim, &s.config.laps, &s.context(g0))?;
        s.write(&format!("trace_{i}_{}.csv", spec.label()), to_csv(&trace)?)?;
        results.push(result);
    }
    let all: Vec<&LapReport> = results.iter().flat_map(|r| &r.entries).collect();
    let best: Vec<&LapReport> = results.iter().map(SweepResult::best_report).collect();
    s.write("sweep.csv", summary_csv(&all)?)?;
    s.write("metrics.csv", summary_csv(&best)?)?;
    s.write("laps.csv", laps_csv(&best)?)?;
    let _ = writeln!(report, "\nEach controller at its best full-completion multiplier:\n{}", summary_table(&best));
    for r in &results {
        if !r.full_completion {
            let _ = writeln!(report, "{}: no multiplier completed every lap", r.best_report().controller);
        }
    }
    s.write("report.txt", &report)?;
    print!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, lr_schedule, mode, steps } => run_train(common, *lr_schedule, *mode, *steps),
        Command::Eval { common, multiplier } => run_eval(common, *multiplier),
        Command::Compare { common } => run_compare(common),
        Command::Sweep { common } => run_sweep(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
