use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use rotqec_cli::{load_all, presets, Manifest, run_to_dir, verify_path, CliError, Scenario};

#[derive(Parser)]
#[command(name = "rotqec", version, about = "Error-correction simulations for a rotating molecule")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files or presets.
    Run {
        /// Scenario file paths, preset names or preset groups (`fig5`, `fig6`, `appendixC1`, `appendixC2`, `all`).
        #[arg(required = true)]
        configs: Vec<String>,
        /// Output root; each scenario writes to `<out>/<name>/`.
        #[arg(long, env = "ROTQEC_OUT_DIR", default_value = "rotqec-out")]
        out: PathBuf,
        /// Verify checkpoints after running and fail on any violation.
        #[arg(long)]
        strict: bool,
        /// Scenarios to run concurrently.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
    },
    /// Check hashes and checkpoints of a run directory or a directory of runs.
    Verify { dir: PathBuf },
    /// List the built-in scenarios.
    ListPresets {
        /// Print names only.
        #[arg(long)]
        names: bool,
    },
    /// Print the TOML source of a preset.
    Describe { preset: String },
}

fn run_all(scenarios: &[Scenario], out: &Path, jobs: usize) -> Vec<Result<(PathBuf, Manifest), CliError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<_>>> = Mutex::new((0..scenarios.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(scenarios.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(s) = scenarios.get(k) else { break };
                let r = run_to_dir(s, out);
                results.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every scenario ran"))
        .collect()
}

fn run(configs: &[String], out: &Path, strict: bool, jobs: usize) -> Result<(), CliError> {
    let mut scenarios: Vec<Scenario> = Vec::new();
    for c in configs {
        scenarios.extend(load_all(c)?);
    }
    let mut seen = BTreeSet::new();
    for s in &scenarios {
        if !seen.insert(s.name.as_str()) {
            return Err(CliError::Validation {
                scenario: s.name.clone(),
                message: "listed twice; every run needs its own output directory".into(),
            });
        }
    }
    for (s, r) in scenarios.iter().zip(run_all(&scenarios, out, jobs)) {
        let (dir, manifest) = r?;
        println!("{:<20} {:>8.2}s  {}", s.name, manifest.wall_time_s, dir.display());
    }
    if strict {
        // Cross-run checkpoints resolve against siblings, so verify once everything is written.
        let mut failed = Vec::new();
        for s in &scenarios {
            let report = verify_path(&out.join(&s.name))?;
            if !report.passed() {
                print!("{}", report.render());
                failed.extend(report.failures().map(|f| format!("{}: {} ({})", f.run, f.check, f.detail)));
            }
        }
        if !failed.is_empty() {
            return Err(CliError::Verification(failed.join("; ")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            configs,
            out,
            strict,
            jobs,
        } => run(&configs, &out, strict, jobs as usize),
        Command::Verify { dir } => verify_path(&dir).and_then(|report| {
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<String> = report.failures().map(|f| format!("{}: {}", f.run, f.check)).collect();
                Err(CliError::Verification(names.join("; ")))
            }
        }),
        Command::ListPresets { names } => {
            for name in presets::names() {
                if names {
                    println!("{name}");
                } else {
                    let s = presets::preset(name).expect("built-in presets parse");
                    println!("{name:<20} {}", s.description);
                }
            }
            if !names {
                println!("\ngroups:");
                for (g, members) in presets::GROUPS {
                    println!("{g:<20} {}", members.join(" "));
                }
                println!("{:<20} every preset", "all");
            }
            Ok(())
        }
        Command::Describe { preset } => match presets::group(&preset) {
            Some(members) => {
                let sources: Vec<&str> = members.iter().map(|m| presets::source(m).expect("group members exist")).collect();
                print!("{}", sources.join("\n"));
                Ok(())
            }
            None => presets::source(&preset).map(|src| print!("{src}")),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
